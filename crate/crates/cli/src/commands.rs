use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ebse_core::linalg::Vector;
use ebse_core::model::{platoon_gap_indices, ModelDocument, NoiseSpec, PartitionedSystem, PerformanceSpec};
use ebse_core::sdp::{SolverOptions, VerifyReport};
use ebse_core::sim::{
    self, baseline_rows, dominance_check, input_sharing_demo, check_input_sharing_demo, platoon_initial_state,
    sweep_tradeoff, write_sweep_csv, EstimatorParams, Metrics, RecordLevel, SimConfig, SimTrace, SweepParams,
    SCHEMA_LINE,
};
use ebse_core::synthesis::{
    eval_bound, synth_general, synth_step1_gains, synth_step2_thresholds, verify_design, Channel, EstimatorDesign,
    RoundRecord, SolveInfo, SynthOptions,
};

use crate::config::{RunConfig, TargetUnit, TraceFormat};
use crate::CliError;

pub fn synth_options(cfg: &RunConfig) -> SynthOptions {
    let d = SolverOptions::default();
    let solver = SolverOptions {
        tol: cfg.synthesis.tol.unwrap_or(d.tol),
        max_iter: cfg.synthesis.max_iter.unwrap_or(d.max_iter),
        log: false,
    };
    SynthOptions { solver, ..SynthOptions::default() }
}

fn target(cfg: &RunConfig, value: f64, c_star: f64) -> f64 {
    match cfg.j_unit {
        TargetUnit::Absolute => value,
        TargetUnit::CStar => value * c_star,
    }
}

/// A design with what the report shows about how it was found.
pub struct Synthesized {
    pub design: EstimatorDesign,
    pub gain_info: Option<SolveInfo>,
    pub threshold_info: Option<SolveInfo>,
    pub gamma_max: Option<f64>,
    pub rounds: Vec<RoundRecord>,
}

pub fn synthesize(cfg: &RunConfig, sys: &PartitionedSystem, noise: &NoiseSpec) -> Result<Synthesized, CliError> {
    let j = cfg.j_max.ok_or_else(|| CliError::Usage("J_max is required (--j-max or \"j_max\")".into()))?;
    let opts = synth_options(cfg);
    if cfg.synthesis.channel != Channel::EstimationError {
        let r = synth_general(sys, noise, &cfg.synthesis.channel, j, cfg.variant, cfg.synthesis.max_rounds, &opts)?;
        return Ok(Synthesized { design: r.design, gain_info: None, threshold_info: None, gamma_max: None, rounds: r.rounds });
    }
    let s1 = synth_step1_gains(sys, noise, cfg.variant, &opts)?;
    let j = target(cfg, j, s1.c_star);
    let s2 = synth_step2_thresholds(sys, &s1.gains, s1.c_star, j, &opts)?;
    let perf = PerformanceSpec::estimation_error(sys.n(), sys.n_outputs(), j);
    let b = eval_bound(sys, noise, &s1.gains, &s2.thresholds, &perf, &opts)?;
    let design = EstimatorDesign {
        variant: cfg.variant,
        gains: s1.gains,
        thresholds: s2.thresholds,
        certificate: s1.certificate,
        c_star: s1.c_star,
        gamma: b.gamma,
        c_z: b.c_z,
        bound: b.bound,
        perf,
    };
    Ok(Synthesized {
        design,
        gain_info: Some(s1.info),
        threshold_info: Some(s2.info),
        gamma_max: Some(s2.gamma_max),
        rounds: Vec::new(),
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf, CliError> {
    let mut f = create(dir, name)?;
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(dir.join(name))
}

/// The effective configuration, so every run can be repeated from its output directory.
fn write_config(cfg: &RunConfig) -> Result<(), CliError> {
    write_text(&cfg.output, "config.json", &(cfg.to_json() + "\n"))?;
    Ok(())
}

fn diag(design: &EstimatorDesign) -> String {
    let v: Vec<String> = design
        .thresholds
        .iter()
        .map(|t| t.diagonal().iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" "))
        .collect();
    format!("({})", v.join(", "))
}

fn solve_line(name: &str, info: &SolveInfo) -> String {
    format!(
        "{name}: {:?} after {} iterations, {} variables, {} blocks ({} stability), max violation {:.3e}\n",
        info.status, info.iterations, info.variables, info.blocks, info.stability_blocks, info.max_violation
    )
}

fn verify_lines(rep: &VerifyReport) -> String {
    let failed: Vec<&str> = rep.blocks.iter().filter(|b| !b.passed).map(|b| b.name.as_str()).collect();
    let mut s = format!(
        "verification: {} blocks re-checked, worst margin violation {:.3e}, {}\n",
        rep.blocks.len(),
        rep.worst_violation,
        if rep.passed { "passed" } else { "FAILED" }
    );
    if !failed.is_empty() {
        let _ = writeln!(s, "failing blocks: {}", failed.join(", "));
    }
    s
}

pub fn report(sys: &PartitionedSystem, s: &Synthesized, verify: &VerifyReport) -> String {
    let d = &s.design;
    let mut r = String::new();
    let _ = writeln!(r, "variant: {}", d.variant);
    let _ = writeln!(r, "agents: {}, states: {}", sys.agents(), sys.n());
    let _ = writeln!(r, "J_max: {}", d.perf.j_max);
    let _ = writeln!(r, "c*: {:.6}", d.c_star);
    if let Some(g) = s.gamma_max {
        let _ = writeln!(r, "gamma_max: {g:.6e}");
    }
    let _ = writeln!(r, "gamma: {:.6e}", d.gamma);
    let _ = writeln!(r, "c_z: {:.6}", d.c_z);
    let _ = writeln!(r, "bound: {:.6}", d.bound);
    let _ = writeln!(r, "Delta: {}", diag(d));
    if let Some(i) = &s.gain_info {
        r.push_str(&solve_line("gain step", i));
    }
    if let Some(i) = &s.threshold_info {
        r.push_str(&solve_line("threshold step", i));
    }
    for x in &s.rounds {
        let _ = writeln!(r, "round {}: bound {:.6}, best {:.6}, tr Delta {:.6}", x.round, x.bound, x.best_bound, x.trace_delta);
    }
    r.push_str(&verify_lines(verify));
    r
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    let (sys, noise) = cfg.build_model()?;
    let s = synthesize(cfg, &sys, &noise)?;
    let verify = verify_design(&sys, &noise, &s.design, None, cfg.synthesis.verify_slack)?;
    let text = report(&sys, &s, &verify);
    let out = &cfg.output;
    write_text(out, "design.json", &(s.design.to_json()? + "\n"))?;
    write_text(out, "model.json", &(ModelDocument::from_model(&sys, &noise).to_json()? + "\n"))?;
    write_text(out, "report.txt", &text)?;
    write_config(cfg)?;
    print!("{text}");
    println!("wrote {}", out.display());
    if !verify.passed {
        return Err(CliError::Check(format!("synthesized design fails re-verification by {:.3e}", verify.worst_violation)));
    }
    Ok(())
}

pub fn load_design(path: &Path, sys: &PartitionedSystem) -> Result<EstimatorDesign, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read design {}: {e}", path.display())))?;
    let d = EstimatorDesign::from_json(&text).map_err(|e| CliError::Usage(format!("design {}: {e}", path.display())))?;
    d.validate(sys)?;
    Ok(d)
}

pub fn cmd_verify(cfg: &RunConfig, design: &Path) -> Result<(), CliError> {
    let (sys, noise) = cfg.build_model()?;
    let d = load_design(design, &sys)?;
    let rep = verify_design(&sys, &noise, &d, None, cfg.synthesis.verify_slack)?;
    println!("variant: {}, bound {:.6} for J_max {}", d.variant, d.bound, d.perf.j_max);
    print!("{}", verify_lines(&rep));
    if !rep.passed {
        return Err(CliError::Rejected(format!("worst margin violation {:.3e}", rep.worst_violation)));
    }
    Ok(())
}

fn initial_state(cfg: &RunConfig, sys: &PartitionedSystem) -> Result<Vector, CliError> {
    match (&cfg.sim.x0, cfg.platoon_size()) {
        (Some(v), _) if v.len() != sys.n() => {
            Err(CliError::Usage(format!("x0 has {} entries, the model has {} states", v.len(), sys.n())))
        }
        (Some(v), _) => Ok(Vector::from_vec(v.clone())),
        (None, Some(m)) => Ok(platoon_initial_state(m, cfg.sim.surplus_velocity)),
        (None, None) => Ok(Vector::zeros(sys.n())),
    }
}

/// Positions in a frame moving with the nominal platoon speed: vehicle 1 integrates
/// its velocity deviation, each follower sits `spacing + d_i` behind its predecessor.
pub fn write_positions<W: Write>(trace: &SimTrace, m: usize, dt: f64, spacing: f64, mut out: W) -> Result<(), CliError> {
    out.write_all(SCHEMA_LINE.as_bytes())?;
    let head: Vec<String> = (1..=m).map(|i| format!("p{i}")).collect();
    writeln!(out, "k,t,{}", head.join(","))?;
    let mut lead = 0.0;
    for k in 0..=trace.steps.len() {
        let x = trace.state(k).expect("k within the trace");
        if k > 0 {
            // trapezoidal integration of the leader's velocity
            lead += 0.5 * dt * (trace.state(k - 1).expect("k within the trace")[0] + x[0]);
        }
        let mut p = lead;
        let mut row = vec![p.to_string()];
        for i in 1..m {
            p -= spacing + x[2 * i - 1];
            row.push(p.to_string());
        }
        writeln!(out, "{k},{},{}", k as f64 * dt, row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_simulate(cfg: &RunConfig, design: Option<&Path>) -> Result<(), CliError> {
    let (sys, noise) = cfg.build_model()?;
    let out = &cfg.output;
    let design = match design {
        Some(p) => load_design(p, &sys)?,
        None => {
            let s = synthesize(cfg, &sys, &noise)?;
            write_text(out, "design.json", &(s.design.to_json()? + "\n"))?;
            s.design
        }
    };
    let uniform = noise
        .uniform
        .clone()
        .ok_or_else(|| CliError::Usage("simulation needs uniform noise half-widths in the model".into()))?;
    let s = &cfg.sim;
    let mut sc = SimConfig::new(&sys, EstimatorParams::from(&design), s.horizon, initial_state(cfg, &sys)?);
    sc.seed = s.seed;
    sc.drops = s.drops;
    sc.local_update = s.local_update;
    sc.input_sharing = s.input_sharing;
    sc.reset_period = s.reset_period;
    sc.noise = Some(uniform);
    sc.record = RecordLevel::Light;
    let trace = sim::run(&sys, &sc)?;
    let gaps = cfg.platoon_size().map(platoon_gap_indices).unwrap_or_default();
    let m = sim::metrics(&trace, s.window, s.tail_fraction, &gaps)?;

    match s.trace_format {
        TraceFormat::Csv => sim::write_csv(&trace, create(out, "trace.csv")?)?,
        TraceFormat::Binary => sim::write_binary_log(&trace, create(out, "trace.bin")?)?,
        TraceFormat::None => {}
    }
    sim::write_metrics_csv(&m, create(out, "metrics.csv")?)?;
    sim::write_rate_series_csv(&m, create(out, "rates.csv")?)?;
    if let (Some(vehicles), true) = (cfg.platoon_size(), s.positions) {
        write_positions(&trace, vehicles, sys.dt(), s.spacing, create(out, "positions.csv")?)?;
    }
    write_config(cfg)?;
    print!("{}", summary(&m));
    println!("wrote {}", out.display());
    Ok(())
}

fn summary(m: &Metrics) -> String {
    let mut s = String::new();
    for (i, (r, p)) in m.rates.iter().zip(&m.power).enumerate() {
        let _ = writeln!(s, "agent {}: rate {r:.4}, power {p:.5}", i + 1);
    }
    let _ = writeln!(s, "total rate {:.4}", m.total_rate);
    if let Some(b) = m.band {
        let _ = writeln!(s, "steady-state distance error band {b:.4}");
    }
    let n = m.rates.len();
    if n >= 4 {
        let half = n / 2;
        let mean = |r: &[f64]| r.iter().sum::<f64>() / r.len() as f64;
        let _ = writeln!(
            s,
            "mean rate leading {half}: {:.4}, trailing {}: {:.4}",
            mean(&m.rates[..half]),
            n - half,
            mean(&m.rates[half..])
        );
    }
    s
}

fn sweep_params(cfg: &RunConfig) -> SweepParams {
    let s = &cfg.sim;
    SweepParams {
        seeds: s.seeds,
        base_seed: s.seed,
        horizon: s.horizon,
        drops: cfg.sweep.drops,
        window: s.window,
        tail_fraction: s.tail_fraction,
        jobs: cfg.sweep.jobs,
        x0: None,
        baseline_divisors: (1..=cfg.sweep.max_divisor).collect(),
    }
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.sweep.j_max.is_empty() {
        return Err(CliError::Usage("empty J_max list (--sweep or \"sweep\": {\"j_max\": [...]})".into()));
    }
    let (sys, noise) = cfg.build_model()?;
    let opts = synth_options(cfg);
    let j: Vec<f64> = match cfg.j_unit {
        TargetUnit::Absolute => cfg.sweep.j_max.clone(),
        TargetUnit::CStar => {
            let c = synth_step1_gains(&sys, &noise, cfg.variant, &opts)?.c_star;
            cfg.sweep.j_max.iter().map(|r| r * c).collect()
        }
    };
    let params = sweep_params(cfg);
    let event = sweep_tradeoff(&sys, &noise, cfg.variant, &j, &params, &opts)?;
    let base = baseline_rows(&sys, &noise, &params.baseline_divisors);
    let mut rows = event.clone();
    rows.extend(base.iter().cloned());
    write_sweep_csv(&rows, create(&cfg.output, "sweep.csv")?)?;
    write_config(cfg)?;
    for r in &event {
        match &r.error {
            None => println!(
                "J_max {:.5}: rate {:.4} ± {:.4}, power {:.5} ± {:.5}",
                r.j_max.unwrap_or(f64::NAN),
                r.mean_rate,
                r.std_rate,
                r.mean_power,
                r.std_power
            ),
            Some(e) => println!("J_max {:.5}: failed ({e})", r.j_max.unwrap_or(f64::NAN)),
        }
    }
    let points = dominance_check(&event, &base, 0.5)?;
    let below = points.iter().filter(|p| p.event_power < p.baseline_power).count();
    println!("{below}/{} event rows at rate <= 0.5 lie below the baseline", points.len());
    println!("wrote {}", cfg.output.join("sweep.csv").display());
    Ok(())
}

pub fn cmd_baseline(cfg: &RunConfig) -> Result<(), CliError> {
    let (sys, noise) = cfg.build_model()?;
    let rows = baseline_rows(&sys, &noise, &sweep_params(cfg).baseline_divisors);
    write_sweep_csv(&rows, create(&cfg.output, "baseline.csv")?)?;
    write_config(cfg)?;
    if let Some(e) = rows.iter().find_map(|r| r.error.as_ref()) {
        println!("some rows failed: {e}");
    }
    println!("wrote {} rows to {}", rows.len(), cfg.output.join("baseline.csv").display());
    Ok(())
}

fn vec_str(v: &Vector) -> String {
    format!("({})", v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "))
}

/// Step log of one demo run: state, input, transmitting agents (1-based) and estimates.
pub fn demo_log(trace: &SimTrace) -> String {
    let mut s = String::new();
    for k in 0..=trace.steps.len() {
        let est = trace.posteriors(k).map(|p| p.iter().map(vec_str).collect::<Vec<_>>().join(" ")).unwrap_or_default();
        let tx = if k == 0 {
            "-".to_string()
        } else {
            let t: Vec<String> = trace.steps[k - 1].transmit.iter().map(|i| (i + 1).to_string()).collect();
            format!("[{}]", t.join(","))
        };
        let _ = writeln!(
            s,
            "k={k:<3} x={:<14} u={:<14} tx={tx:<6} xhat={est}",
            vec_str(trace.state(k).expect("k within the trace")),
            vec_str(trace.input(k).expect("k within the trace"))
        );
    }
    s
}

pub fn cmd_demo(modes: &[bool], steps: usize) -> Result<(), CliError> {
    let mut deviations = Vec::new();
    for &sharing in modes {
        let demo = input_sharing_demo(sharing, steps)?;
        println!("input sharing {}", if sharing { "on" } else { "off" });
        print!("{}", demo_log(&demo.trace));
        match check_input_sharing_demo(&demo) {
            Ok(()) => println!("matches the closed-form sequence"),
            Err(e) => {
                println!("DEVIATION: {e}");
                deviations.push(format!("sharing {}: {e}", if sharing { "on" } else { "off" }));
            }
        }
    }
    if deviations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(deviations.join("; ")))
    }
}

