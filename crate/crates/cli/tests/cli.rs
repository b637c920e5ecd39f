use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ebse_cli::RunConfig;
use ebse_core::sim::read_binary_log;
use ebse_core::synthesis::EstimatorDesign;
use tempfile::TempDir;

fn ebse(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ebse")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Rows of a CSV artifact after the schema line and header.
fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# schema=1"), "{}", path.display());
    let head = lines.next().unwrap().split(',').map(str::to_string).collect();
    (head, lines.map(|l| l.split(',').map(str::to_string).collect()).collect())
}

/// A plant whose second state is unstable and seen by no agent.
const UNDETECTABLE: &str = r#"{"n":2,"dims":{"n":2,"n_u":2,"p":2},
 "A":[[1.5,0],[0,1.5]],"B":[[1,0],[0,1]],"C":[[1,0],[1,0]],
 "blocks":{"q":[1,1],"p":[1,1]},"F":[[-1.5,0],[0,-1.5]],
 "noise":{"V":[[0.01,0],[0,0.01]],"W":[[[0.01]],[[0.01]]]},"dt":1.0}"#;

#[test]
fn synth_writes_three_threshold_blocks_and_reverifies() {
    let dir = TempDir::new().unwrap();
    let o = ebse(&["synth", "--platoon", "3", "--j-max", "0.38", "--variant", "cor2", "--out", "d"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let d = EstimatorDesign::from_json(&fs::read_to_string(dir.path().join("d/design.json")).unwrap()).unwrap();
    assert_eq!(d.thresholds.len(), 3);
    assert!(d.bound <= 0.38 * (1.0 + 1e-6) && d.c_star < 0.38);
    let report = fs::read_to_string(dir.path().join("d/report.txt")).unwrap();
    for key in ["c*:", "gamma:", "bound:", "verification:", "passed"] {
        assert!(report.contains(key), "{key} missing from\n{report}");
    }

    let v = ebse(&["verify-design", "--model", "d/model.json", "--design", "d/design.json"], dir.path());
    assert_eq!(code(&v), 0, "{}", stderr(&v));
    assert!(stdout(&v).contains("passed"));
}

#[test]
fn tampered_certificate_is_rejected() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&ebse(&["synth", "--platoon", "3", "--j-max", "0.38", "--out", "d"], dir.path())), 0);
    let path = dir.path().join("d/design.json");
    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    for row in doc["certificate"]["P"].as_array_mut().unwrap() {
        for v in row.as_array_mut().unwrap() {
            *v = serde_json::json!(-v.as_f64().unwrap());
        }
    }
    fs::write(dir.path().join("bad.json"), doc.to_string()).unwrap();
    let o = ebse(&["verify-design", "--platoon", "3", "--design", "bad.json"], dir.path());
    assert_eq!(code(&o), 2, "{}", stdout(&o));
    assert!(stdout(&o).contains("FAILED"));
}

#[test]
fn target_below_floor_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let o = ebse(&["synth", "--platoon", "3", "--j-max", "0.005", "--out", "d"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("c* = 0.0102"), "{}", stderr(&o));
    assert!(!dir.path().join("d/design.json").exists());
}

#[test]
fn exponential_variant_is_refused_for_twenty_vehicles() {
    let dir = TempDir::new().unwrap();
    let o = ebse(&["synth", "--platoon", "20", "--variant", "cor2", "--j-max", "1", "--out", "d"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--variant cor3"), "{}", stderr(&o));
}

#[test]
fn undetectable_plant_is_infeasible() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("m.json"), UNDETECTABLE).unwrap();
    let o = ebse(&["synth", "--model", "m.json", "--j-max", "100", "--out", "d"], dir.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("infeasible"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let cases: &[&[&str]] = &[
        &["synth", "--bogus"],
        &["synth", "--platoon", "3", "--model", "m.json", "--j-max", "1"],
        &["synth", "--model", "missing.json", "--j-max", "1"],
        &["synth", "--platoon", "3"],
        &["synth", "--platoon", "1", "--j-max", "1"],
        &["synth", "--platoon", "3", "--j-max", "1", "--variant", "cor9"],
        &["sweep", "--platoon", "3"],
        &["simulate", "--platoon", "3", "--design", "missing.json"],
        &["synth", "--config", "missing.json"],
    ];
    for args in cases {
        let o = ebse(args, dir.path());
        assert_eq!(code(&o), 1, "{args:?}: {}", stderr(&o));
    }
    assert_eq!(code(&ebse(&["--help"], dir.path())), 0);
}

#[test]
fn demo_replays_both_modes() {
    let dir = TempDir::new().unwrap();
    let o = ebse(&["demo-appf"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let (on, off) = out.split_once("input sharing off").unwrap();
    assert!(on.contains("input sharing on"));
    for log in [on, off] {
        assert!(log.lines().any(|l| l.starts_with("k=0 ") && l.contains("u=(-2, 0)")), "{log}");
        assert!(log.contains("matches the closed-form sequence"));
    }
    assert!(on.lines().any(|l| l.starts_with("k=2 ") && l.contains("x=(0, 4)")));
    assert!(on.lines().any(|l| l.starts_with("k=10 ") && l.contains("x=(0, 1024)")));
    assert!(off.lines().any(|l| l.starts_with("k=1 ") && l.contains("u=(-4, 0)") && l.contains("tx=[2]")));
    assert!(off.lines().any(|l| l.starts_with("k=2 ") && l.contains("x=(0, 0)")));

    let single = ebse(&["demo-appf", "--input-sharing", "off", "--steps", "3"], dir.path());
    assert_eq!(code(&single), 0);
    assert!(!stdout(&single).contains("input sharing on"));
}

#[test]
fn default_platoon_run_reports_rates_and_band() {
    let dir = TempDir::new().unwrap();
    let o = ebse(&["simulate", "--platoon", "3", "--j-max", "0.38", "--out", "s"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = dir.path().join("s");
    let (head, rows) = csv_rows(&s.join("metrics.csv"));
    assert_eq!(head, ["agent", "rate", "power", "total_rate", "band"]);
    assert_eq!(rows.len(), 3);
    let band: f64 = rows[0][4].parse().unwrap();
    assert!(band < 0.1, "band {band}");
    for r in &rows {
        let rate: f64 = r[1].parse().unwrap();
        assert!((0.0..0.08).contains(&rate));
    }

    let (head, rows) = csv_rows(&s.join("positions.csv"));
    assert_eq!(head, ["k", "t", "p1", "p2", "p3"]);
    assert_eq!(&rows[0][2..], ["0", "-20", "-40"]);
    assert_eq!(rows.len(), 50_001);
    let (_, trace) = csv_rows(&s.join("trace.csv"));
    assert_eq!(trace.len(), 50_000);
    let (_, rates) = csv_rows(&s.join("rates.csv"));
    assert_eq!(rates.len(), 50_000);
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v.into_iter().map(|p| (p.clone(), fs::read(p).unwrap())).collect()
}

#[test]
fn repeated_runs_rewrite_identical_files() {
    let dir = TempDir::new().unwrap();
    let args = ["simulate", "--platoon", "3", "--j-max", "0.38", "--horizon", "3000", "--seed", "11", "--out", "s"];
    assert_eq!(code(&ebse(&args, dir.path())), 0);
    let first = files(&dir.path().join("s"));
    assert_eq!(code(&ebse(&args, dir.path())), 0);
    assert_eq!(files(&dir.path().join("s")), first);

    let mut other = args;
    other[8] = "12";
    assert_eq!(code(&ebse(&other, dir.path())), 0);
    let trace = |f: &[(PathBuf, Vec<u8>)]| f.iter().find(|(p, _)| p.ends_with("trace.csv")).unwrap().1.clone();
    assert_ne!(trace(&files(&dir.path().join("s"))), trace(&first));
}

#[test]
fn simulate_accepts_a_design_file_and_binary_traces() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&ebse(&["synth", "--platoon", "3", "--j-max", "0.38", "--out", "d"], dir.path())), 0);
    let o = ebse(
        &["simulate", "--platoon", "3", "--design", "d/design.json", "--horizon", "500", "--trace-format", "binary", "--out", "s"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!dir.path().join("s/design.json").exists());
    let (cols, rows) = read_binary_log(fs::File::open(dir.path().join("s/trace.bin")).unwrap()).unwrap();
    assert_eq!(cols[0], "k");
    assert_eq!(rows.len(), 500);
    assert!(rows.iter().all(|r| r.len() == cols.len()));

    // a design for another plant does not fit
    let wrong = ebse(&["simulate", "--platoon", "4", "--design", "d/design.json", "--out", "s"], dir.path());
    assert_eq!(code(&wrong), 1);
}

#[test]
fn config_file_round_trips_and_flags_override_it() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"model": {"platoon": {"vehicles": 3}}, "j_max": 0.38, "sim": {"horizon": 400, "seed": 3}, "output": "a"}"#;
    fs::write(dir.path().join("run.json"), cfg).unwrap();
    assert_eq!(code(&ebse(&["simulate", "--config", "run.json"], dir.path())), 0);
    let written = fs::read_to_string(dir.path().join("a/config.json")).unwrap();
    let parsed = RunConfig::from_json(&written).unwrap();
    assert_eq!(parsed.sim.horizon, 400);
    assert_eq!(RunConfig::from_json(&parsed.to_json()).unwrap(), parsed);

    // re-running from the written config reproduces it exactly
    fs::write(dir.path().join("again.json"), &written).unwrap();
    let trace = fs::read(dir.path().join("a/trace.csv")).unwrap();
    assert_eq!(code(&ebse(&["simulate", "--config", "again.json"], dir.path())), 0);
    assert_eq!(fs::read_to_string(dir.path().join("a/config.json")).unwrap(), written);
    assert_eq!(fs::read(dir.path().join("a/trace.csv")).unwrap(), trace);

    let o = ebse(&["simulate", "--config", "run.json", "--horizon", "200", "--p-loss", "0", "--out", "b"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let b = RunConfig::from_json(&fs::read_to_string(dir.path().join("b/config.json")).unwrap()).unwrap();
    assert_eq!((b.sim.horizon, b.sim.seed), (200, 3));
    assert_eq!(b.sim.drops, ebse_core::sim::DropModel::None);
    let (_, rows) = csv_rows(&dir.path().join("b/trace.csv"));
    assert_eq!(rows.len(), 200);
}

#[test]
fn one_point_sweep_gives_one_event_row_plus_baseline() {
    let dir = TempDir::new().unwrap();
    let run = |jobs: &str, out: &str| {
        let o = ebse(
            &[
                "sweep", "--platoon", "3", "--sweep", "0.38", "--seeds", "3", "--horizon", "4000", "--max-divisor", "25",
                "--jobs", jobs, "--out", out,
            ],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read(dir.path().join(out).join("sweep.csv")).unwrap()
    };
    let serial = run("1", "a");
    assert_eq!(run("3", "b"), serial);
    let (head, rows) = csv_rows(&dir.path().join("a/sweep.csv"));
    assert_eq!(head, ["kind", "j_max", "rate_divisor", "mean_power", "std_power", "mean_rate", "std_rate", "bound", "error"]);
    assert_eq!(rows.iter().filter(|r| r[0] == "event").count(), 1);
    assert_eq!(rows.iter().filter(|r| r[0] == "baseline").count(), 25);
    assert_eq!(rows[0][1], "0.38");
}

#[test]
fn sweep_flags_rows_below_the_floor() {
    let dir = TempDir::new().unwrap();
    let o = ebse(
        &["sweep", "--platoon", "3", "--sweep", "0.001,0.38", "--seeds", "2", "--horizon", "2000", "--max-divisor", "5", "--out", "w"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, rows) = csv_rows(&dir.path().join("w/sweep.csv"));
    assert!(rows[0][8].contains("invalid target"), "{:?}", rows[0]);
    assert!(rows[1][8].is_empty());
}

#[test]
fn baseline_rows_cover_every_divisor() {
    let dir = TempDir::new().unwrap();
    let o = ebse(&["baseline", "--platoon", "3", "--max-divisor", "10", "--out", "b"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, rows) = csv_rows(&dir.path().join("b/baseline.csv"));
    assert_eq!(rows.len(), 10);
    let rate = |r: &Vec<String>| r[5].parse::<f64>().unwrap();
    let power = |r: &Vec<String>| r[3].parse::<f64>().unwrap();
    assert_eq!(rate(&rows[0]), 1.0);
    assert!(rows.windows(2).all(|w| power(&w[1]) >= power(&w[0])));
}

#[test]
fn targets_in_floor_units() {
    let dir = TempDir::new().unwrap();
    let o = ebse(&["synth", "--platoon", "3", "--j-max", "2", "--j-unit", "c-star", "--out", "d"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let d = EstimatorDesign::from_json(&fs::read_to_string(dir.path().join("d/design.json")).unwrap()).unwrap();
    assert!((d.perf.j_max - 2.0 * d.c_star).abs() < 1e-12);
}

#[test]
fn twenty_vehicle_run_reports_busier_leaders() {
    let dir = TempDir::new().unwrap();
    let o = ebse(
        &[
            "simulate", "--platoon", "20", "--variant", "cor3", "--j-max", "5", "--j-unit", "c-star", "--trace-format",
            "none", "--out", "s",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, rows) = csv_rows(&dir.path().join("s/metrics.csv"));
    let rates: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(rates.len(), 20);
    let lead = rates[..5].iter().sum::<f64>() / 5.0;
    let rest = rates[5..].iter().sum::<f64>() / 15.0;
    assert!(lead > 2.0 * rest, "leading {lead}, rest {rest}");
    assert!(rows[0][4].parse::<f64>().unwrap() < 0.2);
    assert!(stdout(&o).contains("mean rate leading 10"));
}

#[test]
fn shipped_configs_parse_and_round_trip() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        seen += 1;
    }
    assert!(seen >= 3);
}
