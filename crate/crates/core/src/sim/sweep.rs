//! Performance-versus-communication trade-off: event-based designs over a list
//! of `J_max`, each simulated for several seeds, next to the reduced-rate
//! centralized filter.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use super::{metrics, run, DropModel, EstimatorParams, RecordLevel, SimConfig};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::{NoiseSpec, PartitionedSystem, PerformanceSpec};
use crate::synthesis::{self, SynthOptions, Variant};

#[derive(Debug, Clone)]
pub struct SweepParams {
    pub seeds: usize,
    /// Seeds are `base_seed..base_seed + seeds`.
    pub base_seed: u64,
    pub horizon: usize,
    pub drops: DropModel,
    pub window: usize,
    pub tail_fraction: f64,
    /// Worker threads for the simulations.
    pub jobs: usize,
    /// Initial state; zero when `None`.
    pub x0: Option<Vector>,
    /// Rate divisors `r` of the centralized baseline rows.
    pub baseline_divisors: Vec<usize>,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            seeds: 20,
            base_seed: 0,
            horizon: 50_000,
            drops: DropModel::None,
            window: 200,
            tail_fraction: 0.5,
            jobs: 1,
            x0: None,
            baseline_divisors: (1..=200).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    /// `"event"` or `"baseline"`.
    pub kind: &'static str,
    pub j_max: Option<f64>,
    pub rate_divisor: Option<usize>,
    /// Mean over seeds of the agent-averaged `‖e_i‖_P`.
    pub mean_power: f64,
    pub std_power: f64,
    pub mean_rate: f64,
    pub std_rate: f64,
    pub thresholds: Vec<f64>,
    pub bound: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(j_max: f64, e: &Error) -> Self {
        Self {
            kind: "event",
            j_max: Some(j_max),
            rate_divisor: None,
            mean_power: f64::NAN,
            std_power: f64::NAN,
            mean_rate: f64::NAN,
            std_rate: f64::NAN,
            thresholds: Vec::new(),
            bound: None,
            error: Some(e.to_string()),
        }
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Runs `f` over `0..count` on `jobs` threads; results keep their index order.
fn parallel_map<T: Send, F: Fn(usize) -> T + Sync>(count: usize, jobs: usize, f: F) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<T>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, count.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let r = f(i);
                out.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    out.into_inner().expect("no worker panicked").into_iter().map(|r| r.expect("every index ran")).collect()
}

/// Event-based rows, one per `J_max`. Gains are synthesized once; thresholds and
/// simulations per row. A failing row is reported and the sweep continues.
pub fn sweep_tradeoff(
    sys: &PartitionedSystem,
    noise: &NoiseSpec,
    variant: Variant,
    j_max: &[f64],
    params: &SweepParams,
    opts: &SynthOptions,
) -> Result<Vec<SweepRow>> {
    if j_max.is_empty() {
        return Err(Error::InvalidArgument("empty J_max list".into()));
    }
    if params.seeds == 0 {
        return Err(Error::InvalidArgument("at least one seed required".into()));
    }
    let uniform = noise
        .uniform
        .clone()
        .ok_or_else(|| Error::InvalidArgument("simulation needs uniform noise half-widths".into()))?;
    let s1 = synthesis::synth_step1_gains(sys, noise, variant, opts)?;
    let x0 = params.x0.clone().unwrap_or_else(|| Vector::zeros(sys.n()));

    let mut designs = Vec::with_capacity(j_max.len());
    for &j in j_max {
        let d = synthesis::synth_step2_thresholds(sys, &s1.gains, s1.c_star, j, opts).and_then(|s2| {
            let perf = PerformanceSpec::estimation_error(sys.n(), sys.n_outputs(), j);
            let b = synthesis::eval_bound(sys, noise, &s1.gains, &s2.thresholds, &perf, opts)?;
            Ok((s2.thresholds, b.bound))
        });
        designs.push(d);
    }

    let tasks: Vec<(usize, u64)> = designs
        .iter()
        .enumerate()
        .filter(|(_, d)| d.is_ok())
        .flat_map(|(r, _)| (0..params.seeds as u64).map(move |s| (r, params.base_seed + s)))
        .collect();
    let results = parallel_map(tasks.len(), params.jobs, |t| {
        let (row, seed) = tasks[t];
        let (thresholds, _) = designs[row].as_ref().expect("filtered");
        let est = EstimatorParams { gains: s1.gains.clone(), thresholds: thresholds.clone() };
        let mut cfg = SimConfig::new(sys, est, params.horizon, x0.clone());
        cfg.seed = seed;
        cfg.drops = params.drops;
        cfg.noise = Some(uniform.clone());
        cfg.record = RecordLevel::Light;
        let trace = run(sys, &cfg)?;
        let m = metrics(&trace, params.window, params.tail_fraction, &[])?;
        Ok::<_, Error>((m.mean_power(), m.total_rate))
    });

    let mut rows = Vec::with_capacity(j_max.len());
    let mut cursor = 0;
    for (r, d) in designs.iter().enumerate() {
        match d {
            Err(e) => rows.push(SweepRow::failed(j_max[r], e)),
            Ok((thresholds, bound)) => {
                let chunk = &results[cursor..cursor + params.seeds];
                cursor += params.seeds;
                if let Some(Err(e)) = chunk.iter().find(|x| x.is_err()) {
                    rows.push(SweepRow::failed(j_max[r], e));
                    continue;
                }
                let (p, c): (Vec<f64>, Vec<f64>) = chunk.iter().map(|x| *x.as_ref().expect("checked")).unzip();
                let ((mp, sp), (mr, sr)) = (mean_std(&p), mean_std(&c));
                rows.push(SweepRow {
                    kind: "event",
                    j_max: Some(j_max[r]),
                    rate_divisor: None,
                    mean_power: mp,
                    std_power: sp,
                    mean_rate: mr,
                    std_rate: sr,
                    thresholds: thresholds.iter().flat_map(|t| t.diagonal().iter().copied().collect::<Vec<_>>()).collect(),
                    bound: Some(*bound),
                    error: None,
                });
            }
        }
    }
    Ok(rows)
}

/// Centralized reduced-rate rows; power is the exact steady-state value.
pub fn baseline_rows(sys: &PartitionedSystem, noise: &NoiseSpec, divisors: &[usize]) -> Vec<SweepRow> {
    divisors
        .iter()
        .map(|&r| match synthesis::centralized_baseline(sys, noise, r) {
            Ok(b) => SweepRow {
                kind: "baseline",
                j_max: None,
                rate_divisor: Some(r),
                mean_power: b.error_power,
                std_power: 0.0,
                mean_rate: b.comm_rate,
                std_rate: 0.0,
                thresholds: Vec::new(),
                bound: None,
                error: None,
            },
            Err(e) => SweepRow {
                kind: "baseline",
                j_max: None,
                rate_divisor: Some(r),
                mean_power: f64::NAN,
                std_power: f64::NAN,
                mean_rate: 1.0 / r as f64,
                std_rate: 0.0,
                thresholds: Vec::new(),
                bound: None,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    out.write_all(super::export::SCHEMA_LINE.as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["kind", "j_max", "rate_divisor", "mean_power", "std_power", "mean_rate", "std_rate", "bound", "error"])
        .map_err(io)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        w.write_record([
            r.kind.to_string(),
            opt(r.j_max),
            r.rate_divisor.map_or(String::new(), |d| d.to_string()),
            r.mean_power.to_string(),
            r.std_power.to_string(),
            r.mean_rate.to_string(),
            r.std_rate.to_string(),
            opt(r.bound),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct DominancePoint {
    pub rate: f64,
    pub event_power: f64,
    /// Baseline power linearly interpolated in rate between neighbouring divisors.
    pub baseline_power: f64,
}

/// Compares every successful event row with rate `≤ max_rate` against the
/// baseline curve at the same rate. Event rows below the lowest baseline rate
/// are compared against that lowest-rate baseline point, whose power is a lower
/// bound on the curve there.
pub fn dominance_check(event: &[SweepRow], base: &[SweepRow], max_rate: f64) -> Result<Vec<DominancePoint>> {
    let mut curve: Vec<(f64, f64)> =
        base.iter().filter(|r| r.error.is_none()).map(|r| (r.mean_rate, r.mean_power)).collect();
    curve.sort_by(|a, b| a.0.total_cmp(&b.0));
    if curve.is_empty() {
        return Err(Error::InvalidArgument("no baseline rows".into()));
    }
    let at = |rate: f64| {
        match curve.iter().position(|&(r, _)| r >= rate) {
            None => curve[curve.len() - 1].1,
            Some(0) => curve[0].1,
            Some(i) => {
                let ((r0, p0), (r1, p1)) = (curve[i - 1], curve[i]);
                p0 + (p1 - p0) * (rate - r0) / (r1 - r0)
            }
        }
    };
    Ok(event
        .iter()
        .filter(|r| r.error.is_none() && r.mean_rate <= max_rate)
        .map(|r| DominancePoint { rate: r.mean_rate, event_power: r.mean_power, baseline_power: at(r.mean_rate) })
        .collect())
}
