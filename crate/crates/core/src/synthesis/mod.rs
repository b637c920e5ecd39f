//! Synthesis drivers: observer gains from the Kalman-type H₂ program, thresholds
//! from the bounded-real program, the alternating driver for general performance
//! channels, certified bound evaluation, reset scheduling and the centralized
//! reduced-rate baseline.

mod baseline;
mod norms;
mod reset;

pub use baseline::{centralized_baseline, kalman_filter, Baseline, KalmanFilter};
pub use norms::{certified_h2, certified_hinf, h2_norm_oracle, hinf_norm_oracle};
pub use reset::{certified_lambda, reset_schedule, ResetSchedule};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::lmi::{
    self, AffineBlockMatrix, Cor3Form, Gains, LinExpr, NoiseFactors, Objective, Relaxation, SdpProgram, StabilityVars,
    Thresholds,
};
use crate::model::{NoiseSpec, PartitionedSystem, PerformanceSpec};
use crate::sdp::{self, SdpSolution, SolveStatus, SolverOptions, VerifyReport};
use crate::serde_mat;

/// Which inter-agent stability conditions constrain the gains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Switched certificate `(P₁, P₂)`, `2·2^N` blocks.
    Thm1,
    /// Common certificate `P`, `2^N` blocks.
    Cor2,
    /// Linear-size relaxation `(P, H)`, `N+2` blocks.
    Cor3,
    /// No inter-agent condition; only the H₂ blocks.
    Unconstrained,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "thm1" => Ok(Variant::Thm1),
            "cor2" => Ok(Variant::Cor2),
            "cor3" => Ok(Variant::Cor3),
            "unconstrained" | "none" => Ok(Variant::Unconstrained),
            other => Err(Error::InvalidArgument(format!("unknown variant '{other}' (thm1|cor2|cor3|unconstrained)"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Thm1 => "thm1",
            Variant::Cor2 => "cor2",
            Variant::Cor3 => "cor3",
            Variant::Unconstrained => "unconstrained",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SynthOptions {
    pub solver: SolverOptions,
    /// Strictness margin on stability blocks; `None` uses [`lmi::default_margin`].
    pub margin: Option<f64>,
    pub cor3_form: Cor3Form,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { solver: SolverOptions::default(), margin: None, cor3_form: Cor3Form::Substituted }
    }
}

/// Stability and performance certificates at true noise scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    #[serde(rename = "P", with = "serde_mat")]
    pub p: Mat,
    #[serde(rename = "P2", default, with = "serde_mat::option", skip_serializing_if = "Option::is_none")]
    pub p2: Option<Mat>,
    #[serde(rename = "H", default, with = "serde_mat::option", skip_serializing_if = "Option::is_none")]
    pub h: Option<Mat>,
    #[serde(rename = "X", with = "serde_mat")]
    pub x: Mat,
}

/// Size and outcome of one solved program.
#[derive(Debug, Clone, Serialize)]
pub struct SolveInfo {
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
    pub max_violation: f64,
    /// Free scalar decision variables.
    pub variables: usize,
    pub blocks: usize,
    pub stability_blocks: usize,
}

impl SolveInfo {
    fn new(prog: &SdpProgram, sol: &SdpSolution, stability_blocks: usize) -> Self {
        Self {
            status: sol.status,
            iterations: sol.iterations,
            objective: sol.objective,
            max_violation: sol.max_violation,
            variables: prog.free_entries(),
            blocks: prog.constraints().len(),
            stability_blocks,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GainStep {
    pub gains: Vec<Mat>,
    /// `√(tr X)` of the performance channel at true noise scale.
    pub c_star: f64,
    pub certificate: Certificate,
    pub info: SolveInfo,
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdStep {
    pub thresholds: Vec<Mat>,
    pub gamma: f64,
    pub gamma_max: f64,
    pub info: SolveInfo,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    /// Certified `γ` with `√γ ≥ ‖G₁‖∞`.
    pub gamma: f64,
    /// Certified `√(tr X) ≥ ‖G₂‖₂`.
    pub c_z: f64,
    /// `√(Nγ) + c_z`.
    pub bound: f64,
    #[serde(with = "serde_mat")]
    pub x: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorDesign {
    pub variant: Variant,
    #[serde(rename = "L", with = "serde_mat::vec")]
    pub gains: Vec<Mat>,
    #[serde(rename = "Delta", with = "serde_mat::vec")]
    pub thresholds: Vec<Mat>,
    pub certificate: Certificate,
    pub c_star: f64,
    pub gamma: f64,
    pub c_z: f64,
    pub bound: f64,
    /// Channel the gains were optimized for.
    pub perf: PerformanceSpec,
}

impl EstimatorDesign {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Checks shapes against `sys`, `ρ((I−LC)A) < 1` and `Δ_i ≻ 0`.
    pub fn validate(&self, sys: &PartitionedSystem) -> Result<()> {
        let l = sys.stack_gains(&self.gains)?;
        if self.thresholds.len() != sys.agents() {
            return Err(Error::Dimension("one threshold block per agent required".into()));
        }
        for (i, (d, &p)) in self.thresholds.iter().zip(sys.output_blocks()).enumerate() {
            if d.shape() != (p, p) {
                return Err(Error::Dimension(format!("Delta_{} must be {p}x{p}", i + 1)));
            }
            if p > 0 && !(linalg::min_eigenvalue(d) > 0.0) {
                return Err(Error::InvalidDesign(format!("Delta_{} is not positive definite", i + 1)));
            }
        }
        let n = sys.n();
        let rho = linalg::spectral_radius(&((Mat::identity(n, n) - &l * sys.c()) * sys.a()));
        if !(rho < 1.0) {
            return Err(Error::InvalidDesign(format!("spectral radius of (I-LC)A is {rho}")));
        }
        Ok(())
    }
}

/// Scales `V`, `W_i` by `1/s` so the largest has unit norm.
fn normalized(noise: &NoiseSpec) -> (NoiseSpec, f64) {
    let s = noise.w.iter().map(linalg::norm2).fold(linalg::norm2(&noise.v), f64::max);
    let s = if s > 0.0 && s.is_finite() { s } else { 1.0 };
    let scaled = NoiseSpec { v: &noise.v / s, w: noise.w.iter().map(|w| w / s).collect(), uniform: None };
    (scaled, s)
}

fn margin(sys: &PartitionedSystem, opts: &SynthOptions) -> f64 {
    opts.margin.unwrap_or_else(|| lmi::default_margin(sys.a()))
}

fn add_stability(
    prog: &mut SdpProgram,
    sys: &PartitionedSystem,
    gains: &Gains,
    variant: Variant,
    margin: f64,
    form: Cor3Form,
) -> Result<StabilityVars> {
    match variant {
        Variant::Thm1 => lmi::thm1_constraints(prog, sys, gains, margin),
        Variant::Cor2 => lmi::cor2_constraints(prog, sys, gains, margin),
        Variant::Cor3 => lmi::cor3_constraints(prog, sys, gains, margin, form),
        Variant::Unconstrained => Ok(StabilityVars { p: prog.symmetric("P", sys.n()), p2: None, h: None }),
    }
}

/// `[[P, P(A+BF)], [·, P]]`, the least feasible `H` of the linear-size relaxation.
pub fn cor3_h_floor(sys: &PartitionedSystem, p: &Mat) -> Mat {
    let n = sys.n();
    let pa = p * sys.closed_loop();
    let mut h = Mat::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(p);
    h.view_mut((0, n), (n, n)).copy_from(&pa);
    h.view_mut((n, 0), (n, n)).copy_from(&pa.transpose());
    h.view_mut((n, n), (n, n)).copy_from(p);
    h
}

/// Smallest relaxation level `λ̄` of the switched conditions with free gains.
fn relaxation_probe(sys: &PartitionedSystem, opts: &SynthOptions) -> Option<f64> {
    let mut prog = SdpProgram::new();
    let gains = Gains::declare(&mut prog, sys);
    let (_, lam) = lmi::relaxed_stability_constraints(&mut prog, sys, &gains, Relaxation::Decision, margin(sys, opts)).ok()?;
    let lam = lam?;
    prog.set_objective(Objective::minimize_trace(lam));
    let sol = sdp::solve(&prog, &opts.solver);
    sol.is_solved().then(|| sol.values[lam.id][(0, 0)].max(0.0))
}

/// Minimizes `tr X` of the H₂ blocks for the channel `perf`, jointly with the
/// stability conditions of `variant` on a shared certificate.
pub fn gain_step(
    sys: &PartitionedSystem,
    noise: &NoiseSpec,
    perf: &PerformanceSpec,
    variant: Variant,
    opts: &SynthOptions,
) -> Result<GainStep> {
    noise.validate(sys)?;
    perf.validate(sys.n(), sys.n_outputs())?;
    let (scaled, s) = normalized(noise);
    let mut prog = SdpProgram::new();
    let gains = Gains::declare(&mut prog, sys);
    let stab = add_stability(&mut prog, sys, &gains, variant, margin(sys, opts), opts.cor3_form)?;
    let stability_blocks = prog.constraints().len();
    let x = lmi::h2_constraints(&mut prog, sys, perf, &NoiseFactors::new(&scaled), stab.p, &gains)?;
    prog.set_objective(Objective::minimize_trace(x));
    let sol = sdp::solve(&prog, &opts.solver);
    match sol.status {
        SolveStatus::Optimal | SolveStatus::Feasible => {}
        SolveStatus::Infeasible => {
            let relaxation = if variant == Variant::Unconstrained { None } else { relaxation_probe(sys, opts) };
            return Err(Error::StabilityInfeasible { relaxation });
        }
        status => {
            return Err(Error::Numerical(format!(
                "gain program ended {status:?} after {} iterations (violation {:.3e}, min pivot {:.3e})",
                sol.iterations, sol.max_violation, sol.min_pivot
            )))
        }
    }
    let p = linalg::sym(&sol.values[stab.p.id]);
    let l = gains.recover(sys, &p, &sol.values)?;
    let n = sys.n();
    let a_hat = (Mat::identity(n, n) - sys.stack_gains(&l)? * sys.c()) * sys.a();
    if !(linalg::spectral_radius(&a_hat) < 1.0) {
        return Err(Error::SynthesisFailure("recovered gains do not stabilize (I-LC)A".into()));
    }
    let x_true = linalg::sym(&sol.values[x.id]) * s;
    let h = match (variant, stab.h) {
        (Variant::Cor3, Some(h)) => Some(linalg::sym(&sol.values[h.id])),
        (Variant::Cor3, None) => Some(cor3_h_floor(sys, &p)),
        _ => None,
    };
    let certificate = Certificate {
        p,
        p2: stab.p2.map(|v| linalg::sym(&sol.values[v.id])),
        h,
        x: x_true.clone(),
    };
    Ok(GainStep {
        gains: l,
        c_star: linalg::trace(&x_true).max(0.0).sqrt(),
        certificate,
        info: SolveInfo::new(&prog, &sol, stability_blocks),
    })
}

/// First synthesis step: gains minimizing the full-communication error power.
pub fn synth_step1_gains(
    sys: &PartitionedSystem,
    noise: &NoiseSpec,
    variant: Variant,
    opts: &SynthOptions,
) -> Result<GainStep> {
    let perf = PerformanceSpec::estimation_error(sys.n(), sys.n_outputs(), f64::MAX);
    gain_step(sys, noise, &perf, variant, opts)
}

fn a_hat(sys: &PartitionedSystem, gains: &[Mat]) -> Result<Mat> {
    let n = sys.n();
    Ok((Mat::identity(n, n) - sys.stack_gains(gains)? * sys.c()) * sys.a())
}

/// Maximizes `Σ tr Δ_i` subject to the bounded-real block for channel `c_hat`
/// and `γ ≤ (J_max − c_z)²/N`.
pub fn threshold_step(
    sys: &PartitionedSystem,
    gains: &[Mat],
    c_hat: &Mat,
    c_z: f64,
    j_max: f64,
    opts: &SynthOptions,
) -> Result<ThresholdStep> {
    if !(j_max > c_z) {
        return Err(Error::InvalidTarget { j_max, c_star: c_z });
    }
    let a_hat = a_hat(sys, gains)?;
    if !(linalg::spectral_radius(&a_hat) < 1.0) {
        return Err(Error::InvalidDesign("(I-LC)A is not Schur stable".into()));
    }
    let l = sys.stack_gains(gains)?;
    let agents = sys.agents().max(1) as f64;
    // strict inequality kept by a relative hair
    let gamma_max = (j_max - c_z).powi(2) / agents * (1.0 - 1e-7);
    // solved for Δ/√γ_max against a unit cap, so the program is scale free
    let unit = gamma_max.sqrt();
    let mut prog = SdpProgram::new();
    let hv = lmi::hinf_constraints(&mut prog, &a_hat, &l, c_hat, sys.output_blocks(), &Thresholds::Decision)?;
    prog.add_scalar_ge("gamma<=max", LinExpr::var(hv.gamma).scale(-1.0), -1.0)?;
    for d in &hv.deltas {
        prog.add_psd(format!("{}>=0", prog.vars()[d.id].name), AffineBlockMatrix::single(LinExpr::var(*d))?, 0.0)?;
    }
    prog.set_objective(Objective::maximize_trace(&hv.deltas));
    let sol = sdp::solve(&prog, &opts.solver);
    if !sol.is_solved() {
        return Err(match sol.status {
            SolveStatus::Infeasible => Error::SynthesisFailure("threshold program infeasible".into()),
            s => Error::Numerical(format!("threshold program ended {s:?} after {} iterations", sol.iterations)),
        });
    }
    let mut thresholds = Vec::with_capacity(sys.agents());
    let mut it = hv.deltas.iter();
    for (i, &p) in sys.output_blocks().iter().enumerate() {
        if p == 0 {
            thresholds.push(Mat::zeros(0, 0));
            continue;
        }
        let d = linalg::sym(&sol.values[it.next().expect("one variable per measuring agent").id]) * unit;
        if !(linalg::min_eigenvalue(&d) > 0.0) {
            return Err(Error::SynthesisFailure(format!("Delta_{} is not positive definite", i + 1)));
        }
        thresholds.push(d);
    }
    Ok(ThresholdStep {
        thresholds,
        gamma: sol.values[hv.gamma.id][(0, 0)] * gamma_max,
        gamma_max,
        info: SolveInfo::new(&prog, &sol, 0),
    })
}

/// Second synthesis step: largest thresholds meeting the worst-case target on the
/// estimation error.
pub fn synth_step2_thresholds(
    sys: &PartitionedSystem,
    gains: &[Mat],
    c_star: f64,
    j_max: f64,
    opts: &SynthOptions,
) -> Result<ThresholdStep> {
    threshold_step(sys, gains, &Mat::identity(sys.n(), sys.n()), c_star, j_max, opts)
}

/// `B̂ = [−L W^{1/2}, (I−LC) G_V]` and `D̂ = [D̂21 W^{1/2}, D̂22 G_V]` at true scale.
fn h2_channel(sys: &PartitionedSystem, noise: &NoiseSpec, l: &Mat, perf: &PerformanceSpec) -> (Mat, Mat) {
    let f = NoiseFactors::new(noise);
    let n = sys.n();
    let wc = f.w_half.ncols();
    let vc = f.v_factor.ncols();
    let mut b = Mat::zeros(n, wc + vc);
    b.view_mut((0, 0), (n, wc)).copy_from(&(-(l * &f.w_half)));
    b.view_mut((0, wc), (n, vc)).copy_from(&((Mat::identity(n, n) - l * sys.c()) * &f.v_factor));
    let nz = perf.c_hat.nrows();
    let mut d = Mat::zeros(nz, wc + vc);
    d.view_mut((0, 0), (nz, wc)).copy_from(&(&perf.d21 * &f.w_half));
    d.view_mut((0, wc), (nz, vc)).copy_from(&(&perf.d22 * &f.v_factor));
    (b, d)
}

/// `L·diag(Δ)` with `L` stacked.
fn l_delta(sys: &PartitionedSystem, gains: &[Mat], thresholds: &[Mat]) -> Result<Mat> {
    if thresholds.len() != sys.agents() {
        return Err(Error::Dimension("one threshold block per agent required".into()));
    }
    Ok(sys.stack_gains(gains)? * linalg::block_diag(thresholds))
}

/// Certified worst-case power bound `√(Nγ) + √(tr X)` for fixed gains and
/// thresholds. The analysis programs are solved first; their solutions are then
/// lifted to exact certificates, so the returned pieces never undercut the true
/// system norms.
pub fn eval_bound(
    sys: &PartitionedSystem,
    noise: &NoiseSpec,
    gains: &[Mat],
    thresholds: &[Mat],
    perf: &PerformanceSpec,
    opts: &SynthOptions,
) -> Result<BoundReport> {
    perf.validate(sys.n(), sys.n_outputs())?;
    let a_hat = a_hat(sys, gains)?;
    if !(linalg::spectral_radius(&a_hat) < 1.0) {
        return Err(Error::InvalidDesign("(I-LC)A is not Schur stable".into()));
    }
    let l = sys.stack_gains(gains)?;

    // H₂ part at normalized noise scale
    let (scaled, _) = normalized(noise);
    let mut prog = SdpProgram::new();
    let p = prog.symmetric("P", sys.n());
    let fixed = Gains::fixed(sys, gains.to_vec())?;
    let x = lmi::h2_constraints(&mut prog, sys, perf, &NoiseFactors::new(&scaled), p, &fixed)?;
    prog.set_objective(Objective::minimize_trace(x));
    let sol = sdp::solve(&prog, &opts.solver);
    if !sol.is_solved() {
        return Err(Error::Numerical(format!("H2 analysis ended {:?}", sol.status)));
    }
    let (b_hat, d_hat) = h2_channel(sys, noise, &l, perf);
    let (_, p_cert) = norms::certified_h2(&a_hat, &b_hat, &perf.c_hat, Some(&d_hat), &sol.values[p.id])?;
    let x_cert = linalg::sym(&(d_hat.transpose() * &d_hat + b_hat.transpose() * &p_cert * &b_hat));
    let c_z = linalg::trace(&x_cert).max(0.0).sqrt();

    // H∞ part
    let ld = l_delta(sys, gains, thresholds)?;
    let gamma = if ld.iter().all(|v| *v == 0.0) {
        0.0
    } else {
        // analysed with LΔ scaled to unit norm; γ scales with its square
        let s = linalg::norm2(&ld);
        let scaled: Vec<Mat> = thresholds.iter().map(|d| d / s).collect();
        let mut prog = SdpProgram::new();
        let hv = lmi::hinf_constraints(
            &mut prog,
            &a_hat,
            &l,
            &perf.c_hat,
            sys.output_blocks(),
            &Thresholds::Fixed(scaled),
        )?;
        prog.set_objective(Objective::minimize_trace(hv.gamma));
        let sol = sdp::solve(&prog, &opts.solver);
        if !sol.is_solved() {
            return Err(Error::Numerical(format!("H-infinity analysis ended {:?}", sol.status)));
        }
        norms::certified_hinf(&a_hat, &(&ld / s), &perf.c_hat, &sol.values[hv.q.id])?.0 * s * s
    };
    let agents = sys.agents() as f64;
    Ok(BoundReport { gamma, c_z, bound: (agents * gamma).sqrt() + c_z, x: x_cert })
}

/// Two-step design for the estimation-error objective.
pub fn synthesize(
    sys: &PartitionedSystem,
    noise: &NoiseSpec,
    variant: Variant,
    j_max: f64,
    opts: &SynthOptions,
) -> Result<EstimatorDesign> {
    let s1 = synth_step1_gains(sys, noise, variant, opts)?;
    let s2 = synth_step2_thresholds(sys, &s1.gains, s1.c_star, j_max, opts)?;
    let perf = PerformanceSpec::estimation_error(sys.n(), sys.n_outputs(), j_max);
    let b = eval_bound(sys, noise, &s1.gains, &s2.thresholds, &perf, opts)?;
    Ok(EstimatorDesign {
        variant,
        gains: s1.gains,
        thresholds: s2.thresholds,
        certificate: s1.certificate,
        c_star: s1.c_star,
        gamma: b.gamma,
        c_z: b.c_z,
        bound: b.bound,
        perf,
    })
}

/// Performance output for the alternating driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// `z = e`.
    EstimationError,
    /// `z = (q_1, …, q_N)`, the normalized innovations; depends on `Δ`.
    Communication,
    Custom {
        #[serde(with = "serde_mat")]
        c_hat: Mat,
        #[serde(with = "serde_mat")]
        d21: Mat,
        #[serde(with = "serde_mat")]
        d22: Mat,
    },
}

impl Channel {
    pub fn depends_on_thresholds(&self) -> bool {
        matches!(self, Channel::Communication)
    }

    /// Channel matrices at thresholds `deltas`. For `z = q` under common estimates,
    /// `q(k) = Δ⁻¹(C A e(k−1) + C v(k−1) + w(k))`.
    pub fn perf_at(&self, sys: &PartitionedSystem, deltas: &[Mat], j_max: f64) -> Result<PerformanceSpec> {
        let (n, p) = (sys.n(), sys.n_outputs());
        Ok(match self {
            Channel::EstimationError => PerformanceSpec::estimation_error(n, p, j_max),
            Channel::Communication => {
                let dinv = linalg::block_diag(
                    &deltas
                        .iter()
                        .map(|d| {
                            d.clone().try_inverse().ok_or_else(|| Error::InvalidDesign("singular threshold".into()))
                        })
                        .collect::<Result<Vec<_>>>()?,
                );
                if dinv.nrows() != p {
                    return Err(Error::Dimension("threshold blocks do not match outputs".into()));
                }
                PerformanceSpec {
                    c_hat: &dinv * sys.c() * sys.a(),
                    d21: dinv.clone(),
                    d22: &dinv * sys.c(),
                    j_max,
                }
            }
            Channel::Custom { c_hat, d21, d22 } => {
                PerformanceSpec { c_hat: c_hat.clone(), d21: d21.clone(), d22: d22.clone(), j_max }
            }
        })
    }
}

/// `Δ⁰`: 10% of each output channel's noise half-width (or of `√(3 W_jj)` without
/// a uniform descriptor).
pub fn initial_thresholds(sys: &PartitionedSystem, noise: &NoiseSpec) -> Vec<Mat> {
    let widths: Vec<f64> = match &noise.uniform {
        Some(u) => u.measurement_half_widths.clone(),
        None => noise.w.iter().flat_map(|w| (0..w.nrows()).map(|j| (3.0 * w[(j, j)]).max(0.0).sqrt()).collect::<Vec<_>>()).collect(),
    };
    let mut out = Vec::with_capacity(sys.agents());
    for (i, &p) in sys.output_blocks().iter().enumerate() {
        let off = sys.output_offset(i);
        let d: Vec<f64> = (0..p).map(|j| {
            let h = 0.1 * widths[off + j];
            if h > 0.0 { h } else { 0.1 }
        }).collect();
        out.push(Mat::from_diagonal(&d.into()));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Certified bound of this round's design.
    pub bound: f64,
    /// Smallest certified bound so far.
    pub best_bound: f64,
    pub c_z: f64,
    pub gamma: f64,
    pub trace_delta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GeneralResult {
    pub design: EstimatorDesign,
    pub rounds: Vec<RoundRecord>,
    pub converged: bool,
}

/// Alternates a gain step (thresholds fixed) and a threshold step (gains fixed)
/// until the certified bound stops improving by more than `1e-6` relative, and
/// returns the best design found.
pub fn synth_general(
    sys: &PartitionedSystem,
    noise: &NoiseSpec,
    channel: &Channel,
    j_max: f64,
    variant: Variant,
    max_rounds: usize,
    opts: &SynthOptions,
) -> Result<GeneralResult> {
    if max_rounds == 0 {
        return Err(Error::InvalidArgument("max_rounds must be at least 1".into()));
    }
    let mut deltas = initial_thresholds(sys, noise);
    let mut best: Option<EstimatorDesign> = None;
    let mut rounds = Vec::new();
    let mut converged = false;
    for round in 1..=max_rounds {
        let perf = channel.perf_at(sys, &deltas, j_max)?;
        // failures after the first round end the alternation with the best design so far
        let attempt = (|| -> Result<_> {
            let g = gain_step(sys, noise, &perf, variant, opts)?;
            let t = threshold_step(sys, &g.gains, &perf.c_hat, g.c_star, j_max, opts)?;
            let eval_perf = channel.perf_at(sys, &t.thresholds, j_max)?;
            let b = eval_bound(sys, noise, &g.gains, &t.thresholds, &eval_perf, opts)?;
            Ok((g, t, b))
        })();
        let (g, t, b) = match attempt {
            Ok(v) => v,
            Err(e) if round == 1 => return Err(e),
            Err(_) => break,
        };
        let prev = best.as_ref().map(|d| d.bound);
        let design = EstimatorDesign {
            variant,
            gains: g.gains,
            thresholds: t.thresholds.clone(),
            certificate: g.certificate,
            c_star: g.c_star,
            gamma: b.gamma,
            c_z: b.c_z,
            bound: b.bound,
            perf,
        };
        if prev.is_none_or(|p| design.bound < p) {
            best = Some(design);
        }
        let best_bound = best.as_ref().map(|d| d.bound).unwrap_or(f64::INFINITY);
        rounds.push(RoundRecord {
            round,
            bound: b.bound,
            best_bound,
            c_z: b.c_z,
            gamma: b.gamma,
            trace_delta: t.thresholds.iter().map(linalg::trace).sum(),
        });
        if !channel.depends_on_thresholds() {
            converged = true;
            break;
        }
        if let Some(p) = prev {
            if (p - best_bound) <= 1e-6 * p.abs() {
                converged = true;
                break;
            }
        }
        deltas = t.thresholds;
    }
    let design = best.ok_or_else(|| Error::SynthesisFailure("no round produced a design".into()))?;
    Ok(GeneralResult { design, rounds, converged })
}

/// Program containing the stability blocks of `variant` (and the H₂ blocks of the
/// design's channel) in analysis mode, with the design's certificate values.
fn analysis_program(
    sys: &PartitionedSystem,
    noise: &NoiseSpec,
    design: &EstimatorDesign,
    variant: Variant,
    margin: f64,
) -> Result<(SdpProgram, Vec<Mat>)> {
    let mut prog = SdpProgram::new();
    let gains = Gains::fixed(sys, design.gains.clone())?;
    let cert = &design.certificate;
    let stab = add_stability(&mut prog, sys, &gains, variant, margin, Cor3Form::Explicit)?;
    let x = lmi::h2_constraints(&mut prog, sys, &design.perf, &NoiseFactors::new(noise), stab.p, &gains)?;
    let mut values: Vec<Mat> = prog.vars().iter().map(|v| Mat::zeros(v.var.shape().0, v.var.shape().1)).collect();
    values[stab.p.id] = cert.p.clone();
    if let Some(p2) = stab.p2 {
        values[p2.id] = cert.p2.clone().ok_or_else(|| Error::InvalidDesign("certificate lacks P2".into()))?;
    }
    if let Some(h) = stab.h {
        values[h.id] = cert.h.clone().unwrap_or_else(|| cor3_h_floor(sys, &cert.p));
    }
    values[x.id] = cert.x.clone();
    Ok((prog, values))
}

/// Re-instantiates every stability and H₂ block of the design's variant at its
/// certificate and reports per-block minimum eigenvalues.
pub fn verify_design(
    sys: &PartitionedSystem,
    noise: &NoiseSpec,
    design: &EstimatorDesign,
    margin: Option<f64>,
    slack: f64,
) -> Result<VerifyReport> {
    design.validate(sys)?;
    let margin = margin.unwrap_or_else(|| lmi::default_margin(sys.a()));
    let (prog, values) = analysis_program(sys, noise, design, design.variant, margin)?;
    Ok(sdp::verify(&prog, &values, slack))
}

/// Instantiates all `2^N` common-certificate blocks at `(P, L)`.
pub fn check_cor2_blocks(sys: &PartitionedSystem, gains: &[Mat], p: &Mat, margin: f64, slack: f64) -> Result<VerifyReport> {
    let mut prog = SdpProgram::new();
    let stab = lmi::cor2_constraints(&mut prog, sys, &Gains::fixed(sys, gains.to_vec())?, margin)?;
    let mut values = vec![Mat::zeros(0, 0); prog.vars().len()];
    values[stab.p.id] = p.clone();
    Ok(sdp::verify(&prog, &values, slack))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_sys(a: f64) -> PartitionedSystem {
        let one = Mat::from_element(1, 1, 1.0);
        PartitionedSystem::new(Mat::from_element(1, 1, a), one.clone(), one, vec![1], vec![1], 1.0).unwrap()
    }

    fn unit_noise() -> NoiseSpec {
        let one = Mat::from_element(1, 1, 1.0);
        NoiseSpec { v: one.clone(), w: vec![one], uniform: None }
    }

    #[test]
    fn scalar_step1_matches_riccati() {
        let sys = scalar_sys(0.5);
        let mut o = SynthOptions::default(); o.solver.tol = 1e-10;
        let g = synth_step1_gains(&sys, &unit_noise(), Variant::Unconstrained, &o).unwrap();
        let kf = kalman_filter(sys.a(), sys.c(), &Mat::from_element(1, 1, 1.0), &Mat::from_element(1, 1, 1.0)).unwrap();
        // recovered gains carry roughly the square root of the solver tolerance
        assert!((g.gains[0][(0, 0)] / kf.gain[(0, 0)] - 1.0).abs() < 1e-5);
        assert!((g.c_star - kf.posterior.trace().sqrt()).abs() < 1e-8);
    }

    #[test]
    fn invalid_target_below_floor() {
        let sys = scalar_sys(0.5);
        let err = synth_step2_thresholds(&sys, &[Mat::from_element(1, 1, 0.5)], 1.0, 0.5, &SynthOptions::default());
        assert!(matches!(err, Err(Error::InvalidTarget { .. })));
    }

    #[test]
    fn zero_thresholds_leave_h2_part() {
        let sys = scalar_sys(0.5);
        let perf = PerformanceSpec::estimation_error(1, 1, 1.0);
        let l = vec![Mat::from_element(1, 1, 0.4)];
        let b = eval_bound(&sys, &unit_noise(), &l, &[Mat::zeros(1, 1)], &perf, &SynthOptions::default()).unwrap();
        assert_eq!(b.gamma, 0.0);
        assert_eq!(b.bound, b.c_z);
    }

    #[test]
    fn variant_round_trip() {
        for v in [Variant::Thm1, Variant::Cor2, Variant::Cor3, Variant::Unconstrained] {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
    }
}
