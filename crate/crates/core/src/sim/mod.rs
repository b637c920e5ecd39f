//! Seeded closed-loop simulation of the event-based architecture: plant, agents
//! with local estimators and triggers, and a broadcast bus with packet drops.
//!
//! Per step `k ≥ 1`: the plant propagates with `u(k−1)`, every agent forms its
//! prior from its own input belief, evaluates its trigger on that prior, the
//! triggered measurements are broadcast (per-link drops), every agent updates with
//! what it received, applies its local control and, at scheduled instants, all
//! posteriors are replaced by their mean.

mod checks;
mod export;
mod metrics;
mod rng;
mod sweep;

pub use checks::{collapse_check, decomposition_check, trigger_check, xi_bound_check, DecompositionReport, XiReport};
pub use export::{
    read_binary_log, trace_columns, write_binary_log, write_csv, write_metrics_csv, write_rate_series_csv, SCHEMA_LINE,
};
pub use metrics::{metrics, Metrics};
pub use sweep::{baseline_rows, dominance_check, sweep_tradeoff, write_sweep_csv, DominancePoint, SweepParams, SweepRow};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::model::{PartitionedSystem, UniformNoise};
use crate::serde_mat;
use crate::synthesis::EstimatorDesign;
use rng::Streams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DropModel {
    None,
    /// Every sender→receiver link drops independently with probability `p_loss`.
    Bernoulli { p_loss: f64 },
    /// One broadcast lost to all other receivers at steps `m·k0 + 1`.
    MinSpacing { k0: usize },
}

/// How much of each step is kept in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordLevel {
    /// Priors, posteriors and realized `d_i` for every agent.
    #[default]
    Full,
    /// Plant signals, transmit sets, residuals and error norms only.
    Light,
}

/// Gains and thresholds the agents run with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorParams {
    #[serde(rename = "L", with = "serde_mat::vec")]
    pub gains: Vec<Mat>,
    #[serde(rename = "Delta", with = "serde_mat::vec")]
    pub thresholds: Vec<Mat>,
}

impl From<&EstimatorDesign> for EstimatorParams {
    fn from(d: &EstimatorDesign) -> Self {
        Self { gains: d.gains.clone(), thresholds: d.thresholds.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub estimator: EstimatorParams,
    pub horizon: usize,
    pub seed: u64,
    pub drops: DropModel,
    /// Agents not transmitting still apply their own measurement term.
    pub local_update: bool,
    /// Agents predict with the true input instead of `F x̂_i`.
    pub input_sharing: bool,
    /// Posteriors are replaced by their mean every `reset_period` steps.
    pub reset_period: Option<usize>,
    pub x0: Vector,
    /// One initial estimate per agent.
    pub xhat0: Vec<Vector>,
    /// `None` simulates without noise.
    pub noise: Option<UniformNoise>,
    pub record: RecordLevel,
}

impl SimConfig {
    /// Noise-free, drop-free configuration with all estimates at zero.
    pub fn new(sys: &PartitionedSystem, estimator: EstimatorParams, horizon: usize, x0: Vector) -> Self {
        let xhat0 = vec![Vector::zeros(sys.n()); sys.agents()];
        Self {
            estimator,
            horizon,
            seed: 0,
            drops: DropModel::None,
            local_update: false,
            input_sharing: false,
            reset_period: None,
            x0,
            xhat0,
            noise: None,
            record: RecordLevel::Full,
        }
    }

    pub fn validate(&self, sys: &PartitionedSystem) -> Result<()> {
        let (n, na) = (sys.n(), sys.agents());
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        match self.drops {
            DropModel::Bernoulli { p_loss } if !(0.0..1.0).contains(&p_loss) => {
                return Err(Error::InvalidArgument(format!("p_loss = {p_loss} must lie in [0, 1)")));
            }
            DropModel::MinSpacing { k0: 0 } => return Err(Error::InvalidArgument("k0 must be at least 1".into())),
            _ => {}
        }
        if self.reset_period == Some(0) {
            return Err(Error::InvalidArgument("reset period must be at least 1".into()));
        }
        if sys.feedback().is_none() {
            return Err(Error::InvalidModel("simulation needs a feedback gain F".into()));
        }
        if self.x0.len() != n || self.xhat0.len() != na || self.xhat0.iter().any(|v| v.len() != n) {
            return Err(Error::Dimension(format!("x0 needs {n} entries and one {n}-vector estimate per agent")));
        }
        let est = &self.estimator;
        if est.gains.len() != na || est.thresholds.len() != na {
            return Err(Error::Dimension(format!("one gain and one threshold per agent ({na}) required")));
        }
        for (i, &p) in sys.output_blocks().iter().enumerate() {
            if est.gains[i].shape() != (n, p) || est.thresholds[i].shape() != (p, p) {
                return Err(Error::Dimension(format!("agent {}: L_i must be {n}x{p}, Delta_i {p}x{p}", i + 1)));
            }
        }
        if let Some(u) = &self.noise {
            if u.process_map.nrows() != n
                || u.process_map.ncols() != u.process_half_widths.len()
                || u.measurement_half_widths.len() != sys.n_outputs()
            {
                return Err(Error::Dimension("noise sampling descriptor dimensions".into()));
            }
        }
        Ok(())
    }
}

/// Per-agent estimator quantities of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentEstimates {
    pub prior: Vec<Vector>,
    pub posterior: Vec<Vector>,
    /// Realized drop disturbance `d_i(k)`.
    pub d: Vec<Vector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub x: Vector,
    pub y: Vector,
    pub u: Vector,
    /// Transmitting agents, ascending.
    pub transmit: Vec<usize>,
    /// Lost broadcasts as `(sender, receiver)`.
    pub drops: Vec<(usize, usize)>,
    /// Own innovation `y_i − C_i x̂_i(k|k−1)` per agent.
    pub residuals: Vec<Vector>,
    /// `|Δ_i⁻¹ (y_i − C_i x̂_i(k|k−1))|` per agent.
    pub q_norm: Vec<f64>,
    /// `|x(k) − x̂_i(k)|²` per agent, after any reset.
    pub err_sq: Vec<f64>,
    pub reset: bool,
    pub estimates: Option<AgentEstimates>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub agents: usize,
    pub x0: Vector,
    pub xhat0: Vec<Vector>,
    pub u0: Vector,
    /// Steps `k = 1..=len`.
    pub steps: Vec<StepRecord>,
}

impl SimTrace {
    /// Posteriors at step `k` (`k = 0` gives the initial estimates).
    pub fn posteriors(&self, k: usize) -> Option<&[Vector]> {
        if k == 0 {
            Some(&self.xhat0)
        } else {
            self.steps.get(k - 1)?.estimates.as_ref().map(|e| e.posterior.as_slice())
        }
    }

    pub fn state(&self, k: usize) -> Option<&Vector> {
        if k == 0 { Some(&self.x0) } else { self.steps.get(k - 1).map(|s| &s.x) }
    }

    pub fn input(&self, k: usize) -> Option<&Vector> {
        if k == 0 { Some(&self.u0) } else { self.steps.get(k - 1).map(|s| &s.u) }
    }
}

/// Precomputed per-agent blocks.
struct Agent {
    c: Mat,
    l: Mat,
    delta_inv: Mat,
    f: Mat,
    in_off: usize,
    out_off: usize,
    p: usize,
}

/// Stepwise simulator; `run` drives it to the horizon.
pub struct Simulator<'a> {
    sys: &'a PartitionedSystem,
    cfg: &'a SimConfig,
    agents: Vec<Agent>,
    abf: Mat,
    streams: Streams,
    k: usize,
    x: Vector,
    u: Vector,
    post: Vec<Vector>,
}

impl<'a> Simulator<'a> {
    pub fn new(sys: &'a PartitionedSystem, cfg: &'a SimConfig) -> Result<Self> {
        cfg.validate(sys)?;
        let f = sys.feedback_or_zero();
        let mut agents = Vec::with_capacity(sys.agents());
        for i in 0..sys.agents() {
            let delta = &cfg.estimator.thresholds[i];
            let delta_inv = delta
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::InvalidDesign(format!("Delta_{} is singular", i + 1)))?;
            agents.push(Agent {
                c: sys.c_block(i),
                l: cfg.estimator.gains[i].clone(),
                delta_inv,
                f: sys.f_block(i),
                in_off: sys.input_offset(i),
                out_off: sys.output_offset(i),
                p: sys.output_blocks()[i],
            });
        }
        let abf = sys.a() + sys.b() * &f;
        let streams = Streams::new(cfg.seed, sys.output_blocks(), cfg.noise.as_ref());
        let post = cfg.xhat0.clone();
        let mut sim = Self { sys, cfg, agents, abf, streams, k: 0, x: cfg.x0.clone(), u: Vector::zeros(sys.n_inputs()), post };
        sim.u = sim.control();
        Ok(sim)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn input(&self) -> &Vector {
        &self.u
    }

    fn control(&self) -> Vector {
        let mut u = Vector::zeros(self.sys.n_inputs());
        for (ag, xh) in self.agents.iter().zip(&self.post) {
            let ui = &ag.f * xh;
            u.rows_mut(ag.in_off, ui.len()).copy_from(&ui);
        }
        u
    }

    /// Advances one step and returns its record.
    pub fn step(&mut self) -> Result<StepRecord> {
        let sys = self.sys;
        let na = self.agents.len();
        let k = self.k + 1;

        // (a) plant
        let v = self.streams.process(sys.n());
        let x = sys.a() * &self.x + sys.b() * &self.u + v;
        let y = sys.c() * &x + self.streams.measurement(sys.n_outputs());

        // (b) priors from each agent's own input belief
        let prior: Vec<Vector> = self
            .post
            .iter()
            .map(|xh| if self.cfg.input_sharing { sys.a() * xh + sys.b() * &self.u } else { &self.abf * xh })
            .collect();

        // (c) triggers on own priors; ties transmit
        let mut residuals = Vec::with_capacity(na);
        let mut q_norm = Vec::with_capacity(na);
        let mut transmit = Vec::new();
        for (i, ag) in self.agents.iter().enumerate() {
            let r = y.rows(ag.out_off, ag.p) - &ag.c * &prior[i];
            let q = (&ag.delta_inv * &r).norm();
            if q >= 1.0 {
                transmit.push(i);
            }
            residuals.push(r);
            q_norm.push(q);
        }

        // (d) broadcast with per-link losses
        let lost = self.streams.drops(self.cfg.drops, k, na, &transmit);

        // (e) measurement update with the received set
        let mut post = Vec::with_capacity(na);
        let mut ds = Vec::with_capacity(na);
        for (i, prior_i) in prior.iter().enumerate() {
            let innovation = |m: usize| {
                let ag = &self.agents[m];
                &ag.l * (y.rows(ag.out_off, ag.p) - &ag.c * prior_i)
            };
            let mut xh = prior_i.clone();
            let mut d = Vector::zeros(sys.n());
            for &m in &transmit {
                if lost.contains(&(m, i)) {
                    d -= innovation(m);
                } else {
                    xh += innovation(m);
                }
            }
            if self.cfg.local_update && transmit.binary_search(&i).is_err() {
                xh += innovation(i);
            }
            post.push(xh);
            ds.push(d);
        }
        self.post = post;

        // (f) local controls
        let u = self.control();

        // (g) reset to the common mean
        let reset = matches!(self.cfg.reset_period, Some(p) if k.is_multiple_of(p));
        if reset {
            let mean = self.post.iter().fold(Vector::zeros(sys.n()), |acc, v| acc + v) / na as f64;
            for p in &mut self.post {
                p.copy_from(&mean);
            }
        }

        if x.iter().chain(self.post.iter().flat_map(|p| p.iter())).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k });
        }
        let err_sq = self.post.iter().map(|p| (&x - p).norm_squared()).collect();
        let estimates = match self.cfg.record {
            RecordLevel::Full => Some(AgentEstimates { prior, posterior: self.post.clone(), d: ds }),
            RecordLevel::Light => None,
        };
        self.k = k;
        self.x = x.clone();
        self.u = u.clone();
        Ok(StepRecord { k, x, y, u, transmit, drops: lost, residuals, q_norm, err_sq, reset, estimates })
    }
}

/// Runs to the horizon. On divergence the trace up to the last finite step is
/// returned together with the error.
pub fn run_partial(sys: &PartitionedSystem, cfg: &SimConfig) -> Result<(SimTrace, Option<Error>)> {
    let mut sim = Simulator::new(sys, cfg)?;
    let mut trace = SimTrace {
        agents: sys.agents(),
        x0: cfg.x0.clone(),
        xhat0: cfg.xhat0.clone(),
        u0: sim.input().clone(),
        steps: Vec::with_capacity(cfg.horizon),
    };
    for _ in 0..cfg.horizon {
        match sim.step() {
            Ok(rec) => trace.steps.push(rec),
            Err(e) => return Ok((trace, Some(e))),
        }
    }
    Ok((trace, None))
}

/// Runs to the horizon; bit-identical for identical `(sys, cfg)`.
pub fn run(sys: &PartitionedSystem, cfg: &SimConfig) -> Result<SimTrace> {
    match run_partial(sys, cfg)? {
        (trace, None) => Ok(trace),
        (_, Some(e)) => Err(e),
    }
}

/// Platoon scenario start: vehicle 1 with a velocity surplus, nominal spacing
/// (zero gap deviation) everywhere else.
pub fn platoon_initial_state(m: usize, surplus_velocity: f64) -> Vector {
    let mut x = Vector::zeros(2 * m - 1);
    x[0] = surplus_velocity;
    x
}

/// Step-by-step record of the two-agent input-sharing example.
#[derive(Debug, Clone)]
pub struct InputSharingDemo {
    pub input_sharing: bool,
    pub trace: SimTrace,
}

/// Runs the two-agent example with `Δ = 1`, `x(0) = (0, 2)`, `x̂_1(0) = (0, 1)`,
/// `x̂_2(0) = (0, 2)` and no noise.
pub fn input_sharing_demo(input_sharing: bool, horizon: usize) -> Result<InputSharingDemo> {
    let (sys, l) = crate::model::input_sharing_counterexample();
    let est = EstimatorParams { gains: sys.split_gain(&l), thresholds: vec![Mat::identity(1, 1); 2] };
    let mut cfg = SimConfig::new(&sys, est, horizon, Vector::from_vec(vec![0.0, 2.0]));
    cfg.xhat0 = vec![Vector::from_vec(vec![0.0, 1.0]), Vector::from_vec(vec![0.0, 2.0])];
    cfg.input_sharing = input_sharing;
    let (trace, err) = run_partial(&sys, &cfg)?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(InputSharingDemo { input_sharing, trace })
}

/// Compares a demo run with the closed-form sequences: with sharing nobody ever
/// transmits and `x(n) = (0, 2ⁿ)`; without it agent 2 transmits at `k = 1` only
/// and `x(n) = 0` for `n > 1`. Both start with `u(0) = (−2, 0)`.
pub fn check_input_sharing_demo(demo: &InputSharingDemo) -> Result<()> {
    let t = &demo.trace;
    let fail = |step: usize, what: String| Err(Error::Invariant { step, what });
    if t.u0.as_slice() != [-2.0, 0.0] {
        return fail(0, format!("u(0) = {:?}, expected (-2, 0)", t.u0.as_slice()));
    }
    for s in &t.steps {
        let n = s.k;
        let (want_x, want_tx): (Vec<f64>, Vec<usize>) = if demo.input_sharing {
            (vec![0.0, 2f64.powi(n as i32)], vec![])
        } else if n == 1 {
            (vec![0.0, 2.0], vec![1])
        } else {
            (vec![0.0, 0.0], vec![])
        };
        if s.x.as_slice() != want_x.as_slice() {
            return fail(n, format!("x({n}) = {:?}, expected {want_x:?}", s.x.as_slice()));
        }
        if s.transmit != want_tx {
            return fail(n, format!("transmit set {:?}, expected {want_tx:?}", s.transmit));
        }
    }
    Ok(())
}
