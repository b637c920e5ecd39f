//! Partitioned discrete-time LTI plants, noise descriptions, the platoon
//! benchmark and the baseline LQR design.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, block_diag, expm, Mat};
use crate::serde_mat;

/// Discrete LTI plant `x(k) = A x(k-1) + B u(k-1) + v`, `y = C x + w`, with the
/// input split column-wise and the output split row-wise between agents.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedSystem {
    a: Mat,
    b: Mat,
    c: Mat,
    input_blocks: Vec<usize>,
    output_blocks: Vec<usize>,
    feedback: Option<Mat>,
    dt: f64,
}

impl PartitionedSystem {
    pub fn new(
        a: Mat,
        b: Mat,
        c: Mat,
        input_blocks: Vec<usize>,
        output_blocks: Vec<usize>,
        dt: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::InvalidModel(format!("A is {}x{}, not square", n, a.ncols())));
        }
        // allow empty B / C to arrive as 0x0 from JSON
        let b = if b.nrows() == 0 && n > 0 { Mat::zeros(n, 0) } else { b };
        let c = if c.nrows() == 0 { Mat::zeros(0, n) } else { c };
        if b.nrows() != n {
            return Err(Error::InvalidModel(format!("B has {} rows, expected {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(Error::InvalidModel(format!("C has {} columns, expected {n}", c.ncols())));
        }
        if input_blocks.len() != output_blocks.len() {
            return Err(Error::InvalidModel(format!(
                "{} input blocks but {} output blocks",
                input_blocks.len(),
                output_blocks.len()
            )));
        }
        if input_blocks.iter().sum::<usize>() != b.ncols() {
            return Err(Error::InvalidModel("input blocks do not sum to the number of inputs".into()));
        }
        if output_blocks.iter().sum::<usize>() != c.nrows() {
            return Err(Error::InvalidModel("output blocks do not sum to the number of outputs".into()));
        }
        if !(linalg::is_finite(&a) && linalg::is_finite(&b) && linalg::is_finite(&c)) {
            return Err(Error::InvalidModel("non-finite matrix entries".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidModel(format!("sampling time {dt} must be positive")));
        }
        Ok(Self { a, b, c, input_blocks, output_blocks, feedback: None, dt })
    }

    /// Attaches the state feedback `u = F x`; `A + BF` must be Schur stable.
    pub fn with_feedback(mut self, f: Mat) -> Result<Self> {
        if f.nrows() != self.n_inputs() || f.ncols() != self.n() {
            return Err(Error::Dimension(format!(
                "F is {}x{}, expected {}x{}",
                f.nrows(),
                f.ncols(),
                self.n_inputs(),
                self.n()
            )));
        }
        let rho = linalg::spectral_radius(&(&self.a + &self.b * &f));
        if rho >= 1.0 {
            return Err(Error::InvalidModel(format!("spectral radius of A+BF is {rho:.6} >= 1")));
        }
        self.feedback = Some(f);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }
    pub fn agents(&self) -> usize {
        self.output_blocks.len()
    }
    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn b(&self) -> &Mat {
        &self.b
    }
    pub fn c(&self) -> &Mat {
        &self.c
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn input_blocks(&self) -> &[usize] {
        &self.input_blocks
    }
    pub fn output_blocks(&self) -> &[usize] {
        &self.output_blocks
    }
    pub fn feedback(&self) -> Option<&Mat> {
        self.feedback.as_ref()
    }

    /// `F`, or zero when no controller is attached (pure estimation).
    pub fn feedback_or_zero(&self) -> Mat {
        self.feedback.clone().unwrap_or_else(|| Mat::zeros(self.n_inputs(), self.n()))
    }

    /// `A + BF`.
    pub fn closed_loop(&self) -> Mat {
        match &self.feedback {
            Some(f) => &self.a + &self.b * f,
            None => self.a.clone(),
        }
    }

    pub fn input_offset(&self, agent: usize) -> usize {
        self.input_blocks[..agent].iter().sum()
    }
    pub fn output_offset(&self, agent: usize) -> usize {
        self.output_blocks[..agent].iter().sum()
    }

    pub fn b_block(&self, agent: usize) -> Mat {
        self.b.columns(self.input_offset(agent), self.input_blocks[agent]).clone_owned()
    }
    pub fn c_block(&self, agent: usize) -> Mat {
        self.c.rows(self.output_offset(agent), self.output_blocks[agent]).clone_owned()
    }
    pub fn f_block(&self, agent: usize) -> Mat {
        self.feedback_or_zero().rows(self.input_offset(agent), self.input_blocks[agent]).clone_owned()
    }

    /// Stacks per-agent observer gains `L_i` (n x p_i) into `L` (n x p).
    pub fn stack_gains(&self, gains: &[Mat]) -> Result<Mat> {
        if gains.len() != self.agents() {
            return Err(Error::Dimension(format!("{} gains for {} agents", gains.len(), self.agents())));
        }
        let mut l = Mat::zeros(self.n(), self.n_outputs());
        for (i, g) in gains.iter().enumerate() {
            if g.nrows() != self.n() || g.ncols() != self.output_blocks[i] {
                return Err(Error::Dimension(format!(
                    "L_{} is {}x{}, expected {}x{}",
                    i + 1,
                    g.nrows(),
                    g.ncols(),
                    self.n(),
                    self.output_blocks[i]
                )));
            }
            l.columns_mut(self.output_offset(i), g.ncols()).copy_from(g);
        }
        Ok(l)
    }

    /// Splits a stacked `L` back into per-agent blocks.
    pub fn split_gain(&self, l: &Mat) -> Vec<Mat> {
        (0..self.agents())
            .map(|i| l.columns(self.output_offset(i), self.output_blocks[i]).clone_owned())
            .collect()
    }
}

/// Uniform noise description used for sampling: `v = G·ν` with independent
/// `ν_j ~ U[-h_j, h_j]`, and `w_j ~ U[-h_j, h_j]` per output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformNoise {
    #[serde(with = "serde_mat")]
    pub process_map: Mat,
    pub process_half_widths: Vec<f64>,
    pub measurement_half_widths: Vec<f64>,
}

/// Process and measurement noise. Covariances drive synthesis; the optional
/// uniform descriptor drives simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(rename = "V", with = "serde_mat")]
    pub v: Mat,
    #[serde(rename = "W", with = "serde_mat::vec")]
    pub w: Vec<Mat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform: Option<UniformNoise>,
}

impl NoiseSpec {
    /// Derives `V = G diag(h²/3) Gᵀ` and `W_i = diag(h²/3)` from uniform half-widths.
    pub fn from_uniform(
        process_map: Mat,
        process_half_widths: Vec<f64>,
        measurement_half_widths: Vec<f64>,
        output_blocks: &[usize],
    ) -> Result<Self> {
        if process_map.ncols() != process_half_widths.len() {
            return Err(Error::Dimension("process map / half-width count mismatch".into()));
        }
        if output_blocks.iter().sum::<usize>() != measurement_half_widths.len() {
            return Err(Error::Dimension("measurement half-width count mismatch".into()));
        }
        if process_half_widths.iter().chain(&measurement_half_widths).any(|h| !(*h >= 0.0)) {
            return Err(Error::InvalidArgument("half-widths must be non-negative".into()));
        }
        let var = |h: &f64| h * h / 3.0;
        let dv = Mat::from_diagonal(&process_half_widths.iter().map(var).collect::<Vec<_>>().into());
        let v = &process_map * dv * process_map.transpose();
        let mut w = Vec::with_capacity(output_blocks.len());
        let mut off = 0;
        for &p in output_blocks {
            let d: Vec<f64> = measurement_half_widths[off..off + p].iter().map(var).collect();
            w.push(Mat::from_diagonal(&d.into()));
            off += p;
        }
        Ok(Self {
            v,
            w,
            uniform: Some(UniformNoise { process_map, process_half_widths, measurement_half_widths }),
        })
    }

    /// `W = diag(W_1, …, W_N)`.
    pub fn w_full(&self) -> Mat {
        block_diag(&self.w)
    }

    pub fn validate(&self, sys: &PartitionedSystem) -> Result<()> {
        let n = sys.n();
        if self.v.nrows() != n || self.v.ncols() != n {
            return Err(Error::Dimension(format!("V must be {n}x{n}")));
        }
        if self.w.len() != sys.agents() {
            return Err(Error::Dimension("one W_i per agent required".into()));
        }
        for (i, (w, &p)) in self.w.iter().zip(sys.output_blocks()).enumerate() {
            if w.nrows() != p || w.ncols() != p {
                return Err(Error::Dimension(format!("W_{} must be {p}x{p}", i + 1)));
            }
        }
        let psd = |m: &Mat| {
            let scale = m.norm().max(1.0);
            (m - m.transpose()).norm() <= 1e-12 * scale && linalg::min_eigenvalue(m) >= -1e-12 * scale
        };
        if !psd(&self.v) || !self.w.iter().all(psd) {
            return Err(Error::InvalidModel("noise covariances must be symmetric PSD".into()));
        }
        if let Some(u) = &self.uniform {
            if u.process_map.nrows() != n || u.measurement_half_widths.len() != sys.n_outputs() {
                return Err(Error::Dimension("uniform noise descriptor dimensions".into()));
            }
            let derived =
                Self::from_uniform(u.process_map.clone(), u.process_half_widths.clone(), u.measurement_half_widths.clone(), sys.output_blocks())?;
            let close = |a: &Mat, b: &Mat| (a - b).norm() <= 1e-9 * (1.0 + a.norm());
            if !close(&derived.v, &self.v) || !derived.w.iter().zip(&self.w).all(|(a, b)| close(a, b)) {
                return Err(Error::InvalidModel("covariances inconsistent with uniform half-widths (h²/3)".into()));
            }
        }
        Ok(())
    }
}

/// Performance output `z(k) = Ĉ e(k-1) + D̂21 w(k) + D̂22 v(k-1)` with a worst-case power target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceSpec {
    #[serde(with = "serde_mat")]
    pub c_hat: Mat,
    #[serde(with = "serde_mat")]
    pub d21: Mat,
    #[serde(with = "serde_mat")]
    pub d22: Mat,
    pub j_max: f64,
}

impl PerformanceSpec {
    /// Estimation-error objective `z = e`: `Ĉ = I`, `D̂ = 0`.
    pub fn estimation_error(n: usize, p: usize, j_max: f64) -> Self {
        Self { c_hat: Mat::identity(n, n), d21: Mat::zeros(n, p), d22: Mat::zeros(n, n), j_max }
    }

    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        let nz = self.c_hat.nrows();
        if self.c_hat.ncols() != n || self.d21.shape() != (nz, p) || self.d22.shape() != (nz, n) {
            return Err(Error::Dimension("performance channel dimensions".into()));
        }
        if !(self.j_max > 0.0) {
            return Err(Error::InvalidArgument("J_max must be positive".into()));
        }
        Ok(())
    }
}

/// Zero-order-hold discretization via the exponential of `[[Ac, Bc], [0, 0]]·dt`.
pub fn zoh_discretize(ac: &Mat, bc: &Mat, dt: f64) -> Result<(Mat, Mat)> {
    let n = ac.nrows();
    if ac.ncols() != n || bc.nrows() != n {
        return Err(Error::Dimension("Ac must be square with as many rows as Bc".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt = {dt} must be positive")));
    }
    let m = bc.ncols();
    let mut aug = Mat::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(ac * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(bc * dt));
    let e = expm(&aug);
    let a = e.view((0, 0), (n, n)).clone_owned();
    let b = e.view((0, n), (n, m)).clone_owned();
    if !linalg::is_finite(&a) || !linalg::is_finite(&b) {
        return Err(Error::InvalidModel("discretization produced non-finite entries".into()));
    }
    Ok((a, b))
}

/// Continuous-time platoon model: velocities `p_i` and gaps `r_i - r_{i+1}`,
/// interleaved as `(p_1, g_1, p_2, g_2, …, p_M)`.
pub fn platoon_continuous(m: usize) -> Result<(Mat, Mat)> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("platoon needs at least 2 vehicles, got {m}")));
    }
    let n = 2 * m - 1;
    let mut ac = Mat::zeros(n, n);
    let mut bc = Mat::zeros(n, m);
    for i in 0..m {
        bc[(2 * i, i)] = 1.0;
        if i + 1 < m {
            ac[(2 * i + 1, 2 * i)] = 1.0;
            ac[(2 * i + 1, 2 * i + 2)] = -1.0;
        }
    }
    Ok((ac, bc))
}

/// State indices of the inter-vehicle gaps.
pub fn platoon_gap_indices(m: usize) -> Vec<usize> {
    (0..m.saturating_sub(1)).map(|i| 2 * i + 1).collect()
}

pub const PLATOON_INPUT_NOISE: f64 = 0.01;
pub const PLATOON_GAP_NOISE: f64 = 0.1;
pub const PLATOON_VELOCITY_NOISE: f64 = 0.1;

/// Builds the `M`-vehicle platoon. Vehicle 1 measures its own velocity, every
/// other vehicle the gap to the vehicle ahead; each vehicle actuates itself.
pub fn build_platoon(m: usize, dt: f64) -> Result<(PartitionedSystem, NoiseSpec)> {
    let (ac, bc) = platoon_continuous(m)?;
    let (a, b) = zoh_discretize(&ac, &bc, dt)?;
    let n = 2 * m - 1;
    let mut c = Mat::zeros(m, n);
    c[(0, 0)] = 1.0;
    for i in 1..m {
        c[(i, 2 * (i - 1) + 1)] = 1.0;
    }
    let sys = PartitionedSystem::new(a, b.clone(), c, vec![1; m], vec![1; m], dt)?;
    let mut meas = vec![PLATOON_GAP_NOISE; m];
    meas[0] = PLATOON_VELOCITY_NOISE;
    let noise = NoiseSpec::from_uniform(b, vec![PLATOON_INPUT_NOISE; m], meas, sys.output_blocks())?;
    Ok((sys, noise))
}

pub const RICCATI_TOL: f64 = 1e-12;
pub const RICCATI_MAX_ITER: usize = 100_000;

/// Fixed-point iteration of the control Riccati map
/// `P ← Q + AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA`, started at `Q`.
pub fn riccati_fixed_point(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<(Mat, usize)> {
    let mut p = q.clone();
    for it in 1..=RICCATI_MAX_ITER {
        let pa = &p * a;
        let btpb = b.transpose() * &p * b + r;
        let btpa = b.transpose() * &pa;
        let k = btpb
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SynthesisFailure("R + BᵀPB lost definiteness".into()))?
            .solve(&btpa);
        let next = linalg::sym(&(q + a.transpose() * &pa - btpa.transpose() * k));
        if !linalg::is_finite(&next) {
            return Err(Error::SynthesisFailure("Riccati iteration diverged".into()));
        }
        let delta = (&next - &p).norm();
        p = next;
        if delta <= RICCATI_TOL * p.norm().max(f64::MIN_POSITIVE) {
            return Ok((p, it));
        }
    }
    Err(Error::SynthesisFailure(format!("Riccati iteration did not converge in {RICCATI_MAX_ITER} steps")))
}

#[derive(Debug, Clone)]
pub struct Lqr {
    /// `u = F x`.
    pub gain: Mat,
    pub riccati: Mat,
    pub iterations: usize,
}

/// Infinite-horizon discrete LQR with `F = −(R + BᵀPB)⁻¹BᵀPA`.
pub fn dlqr(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<Lqr> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::Dimension("dlqr operand shapes".into()));
    }
    if r.clone().cholesky().is_none() {
        return Err(Error::InvalidArgument("R must be positive definite".into()));
    }
    if linalg::min_eigenvalue(q) < -1e-12 * q.norm().max(1.0) {
        return Err(Error::InvalidArgument("Q must be positive semidefinite".into()));
    }
    let (p, iterations) = riccati_fixed_point(a, b, q, r)?;
    let btpb = b.transpose() * &p * b + r;
    let gain = -btpb.lu().solve(&(b.transpose() * &p * a)).ok_or_else(|| Error::Numerical("singular R + BᵀPB".into()))?;
    Ok(Lqr { gain, riccati: p, iterations })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairStructure {
    pub controllable: bool,
    pub stabilizable: bool,
    pub observable: bool,
    pub detectable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureReport {
    pub system: PairStructure,
    pub agents: Vec<PairStructure>,
}

const PBH_RANK_TOL: f64 = 1e-9;
const EIG_CLUSTER_TOL: f64 = 1e-5;

/// Eigenvalues with numerically repeated values merged to their cluster mean.
/// Defective eigenvalues come out of the QR iteration perturbed by roughly
/// `eps^(1/k)`; the mean of a cluster is accurate to working precision.
fn clustered_eigenvalues(a: &Mat) -> Vec<Complex<f64>> {
    let eigs = linalg::eigenvalues(a);
    let mut clusters: Vec<Vec<Complex<f64>>> = Vec::new();
    for l in eigs {
        let hit = clusters
            .iter_mut()
            .find(|c| c.iter().any(|m| (m - l).norm() <= EIG_CLUSTER_TOL * (1.0 + m.norm())));
        match hit {
            Some(c) => c.push(l),
            None => clusters.push(vec![l]),
        }
    }
    clusters
        .into_iter()
        .map(|c| c.iter().sum::<Complex<f64>>() / c.len() as f64)
        .collect()
}

fn numerical_rank(m: &DMatrix<Complex<f64>>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let top = sv.max();
    sv.iter().filter(|&&s| s > PBH_RANK_TOL * top).count()
}

/// PBH verdicts for `(A, B)` controllability/stabilizability and `(A, C)`
/// observability/detectability.
fn pbh(a: &Mat, b: &Mat, c: &Mat, modes: &[Complex<f64>]) -> PairStructure {
    let n = a.nrows();
    let ac = a.map(|v| Complex::new(v, 0.0));
    let mut out = PairStructure { controllable: true, stabilizable: true, observable: true, detectable: true };
    for &lam in modes {
        let shifted = &ac - DMatrix::<Complex<f64>>::identity(n, n) * lam;
        let unstable = lam.norm() >= 1.0 - 1e-9;
        let mut ctrb = DMatrix::<Complex<f64>>::zeros(n, n + b.ncols());
        ctrb.view_mut((0, 0), (n, n)).copy_from(&shifted);
        ctrb.view_mut((0, n), (n, b.ncols())).copy_from(&b.map(|v| Complex::new(v, 0.0)));
        if numerical_rank(&ctrb) < n {
            out.controllable = false;
            if unstable {
                out.stabilizable = false;
            }
        }
        let mut obsv = DMatrix::<Complex<f64>>::zeros(n + c.nrows(), n);
        obsv.view_mut((0, 0), (n, n)).copy_from(&shifted);
        obsv.view_mut((n, 0), (c.nrows(), n)).copy_from(&c.map(|v| Complex::new(v, 0.0)));
        if numerical_rank(&obsv) < n {
            out.observable = false;
            if unstable {
                out.detectable = false;
            }
        }
    }
    out
}

pub fn check_structure(sys: &PartitionedSystem) -> StructureReport {
    let modes = clustered_eigenvalues(sys.a());
    let system = pbh(sys.a(), sys.b(), sys.c(), &modes);
    let agents = (0..sys.agents())
        .map(|i| pbh(sys.a(), &sys.b_block(i), &sys.c_block(i), &modes))
        .collect();
    StructureReport { system, agents }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub n_u: usize,
    pub p: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Blocks {
    pub q: Vec<usize>,
    pub p: Vec<usize>,
}

/// On-disk model document; matrices are row-major nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub n: usize,
    pub dims: Dims,
    #[serde(rename = "A", with = "serde_mat")]
    pub a: Mat,
    #[serde(rename = "B", with = "serde_mat")]
    pub b: Mat,
    #[serde(rename = "C", with = "serde_mat")]
    pub c: Mat,
    pub blocks: Blocks,
    #[serde(rename = "F", default, skip_serializing_if = "Option::is_none", with = "serde_mat::option")]
    pub f: Option<Mat>,
    pub noise: NoiseSpec,
    pub dt: f64,
}

impl ModelDocument {
    pub fn from_model(sys: &PartitionedSystem, noise: &NoiseSpec) -> Self {
        Self {
            n: sys.n(),
            dims: Dims { n: sys.n(), n_u: sys.n_inputs(), p: sys.n_outputs() },
            a: sys.a().clone(),
            b: sys.b().clone(),
            c: sys.c().clone(),
            blocks: Blocks { q: sys.input_blocks().to_vec(), p: sys.output_blocks().to_vec() },
            f: sys.feedback().cloned(),
            noise: noise.clone(),
            dt: sys.dt(),
        }
    }

    pub fn into_model(self) -> Result<(PartitionedSystem, NoiseSpec)> {
        if self.n != self.dims.n || self.a.nrows() != self.n {
            return Err(Error::InvalidModel("declared n does not match A".into()));
        }
        let b = if self.b.nrows() == 0 { Mat::zeros(self.n, self.dims.n_u) } else { self.b };
        let c = if self.c.nrows() == 0 { Mat::zeros(self.dims.p, self.n) } else { self.c };
        if b.ncols() != self.dims.n_u || c.nrows() != self.dims.p {
            return Err(Error::InvalidModel("declared dims do not match B/C".into()));
        }
        let mut sys = PartitionedSystem::new(self.a, b, c, self.blocks.q, self.blocks.p, self.dt)?;
        if let Some(f) = self.f {
            sys = sys.with_feedback(f)?;
        }
        let mut noise = self.noise;
        for (w, &p) in noise.w.iter_mut().zip(sys.output_blocks()) {
            if w.nrows() == 0 {
                *w = Mat::zeros(p, p);
            }
        }
        noise.validate(&sys)?;
        Ok((sys, noise))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// The platoon with the LQR controller used throughout the experiments
/// (`Q = I`, `R = 100 I`).
pub fn platoon_with_lqr(m: usize, dt: f64) -> Result<(PartitionedSystem, NoiseSpec)> {
    let (sys, noise) = build_platoon(m, dt)?;
    let q = Mat::identity(sys.n(), sys.n());
    let r = Mat::identity(sys.n_inputs(), sys.n_inputs()) * 100.0;
    let lqr = dlqr(sys.a(), sys.b(), &q, &r)?;
    Ok((sys.with_feedback(lqr.gain)?, noise))
}

/// The two-agent example where sharing the true input destabilizes the loop.
pub fn input_sharing_counterexample() -> (PartitionedSystem, Mat) {
    let a = Mat::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0]);
    let b = Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let c = Mat::identity(2, 2);
    let f = Mat::from_row_slice(2, 2, &[0.0, -2.0, 0.1, 0.0]);
    let sys = PartitionedSystem::new(a, b, c, vec![1, 1], vec![1, 1], 1.0)
        .and_then(|s| s.with_feedback(f))
        .expect("hard-coded example is valid");
    (sys, Mat::identity(2, 2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zoh_of_zero_dynamics() {
        let (a, b) = zoh_discretize(&Mat::zeros(2, 2), &Mat::identity(2, 2), 0.02).unwrap();
        assert!((a - Mat::identity(2, 2)).norm() < 1e-15);
        assert!((b - Mat::identity(2, 2) * 0.02).norm() < 1e-15);
    }

    #[test]
    fn zoh_nilpotent_block_is_exact() {
        let ac = Mat::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let (a, b) = zoh_discretize(&ac, &Mat::from_row_slice(2, 1, &[1.0, 0.0]), 0.02).unwrap();
        assert!((a - Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.02, 1.0])).norm() < 1e-15);
        assert!((b[(0, 0)] - 0.02).abs() < 1e-15);
        assert!((b[(1, 0)] - 0.0002).abs() < 1e-16);
    }

    #[test]
    fn zoh_rejects_bad_dt() {
        assert!(zoh_discretize(&Mat::zeros(1, 1), &Mat::zeros(1, 1), 0.0).is_err());
    }

    #[test]
    fn platoon_dimensions() {
        let (sys, noise) = build_platoon(3, 0.02).unwrap();
        assert_eq!((sys.n(), sys.n_outputs(), sys.n_inputs()), (5, 3, 3));
        noise.validate(&sys).unwrap();
        let (sys20, _) = build_platoon(20, 0.02).unwrap();
        assert_eq!(sys20.n(), 39);
        assert!(build_platoon(1, 0.02).is_err());
    }

    #[test]
    fn platoon_two_vehicle_outputs() {
        let (sys, _) = build_platoon(2, 0.02).unwrap();
        assert_eq!(sys.n(), 3);
        let expected = Mat::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(sys.c(), &expected);
    }

    #[test]
    fn platoon_noise_variances() {
        let (sys, noise) = build_platoon(3, 0.02).unwrap();
        assert!((noise.w[0][(0, 0)] - 0.01 / 3.0).abs() < 1e-15);
        let expected_v = sys.b() * (0.0001 / 3.0) * sys.b().transpose();
        assert!((&noise.v - expected_v).norm() < 1e-18);
    }

    #[test]
    fn scalar_lqr_contracts() {
        let one = Mat::from_element(1, 1, 1.0);
        let lqr = dlqr(&Mat::from_element(1, 1, 0.5), &one, &one, &one).unwrap();
        let f = lqr.gain[(0, 0)];
        assert!(f < 0.0);
        assert!((0.5 + f).abs() < 0.5);
    }

    #[test]
    fn platoon_lqr_is_stabilizing() {
        let (sys, _) = platoon_with_lqr(3, 0.02).unwrap();
        assert!(linalg::spectral_radius(&sys.closed_loop()) < 1.0);
    }

    #[test]
    fn structure_of_identity_system() {
        let i = Mat::identity(2, 2);
        let sys = PartitionedSystem::new(i.clone(), i.clone(), i, vec![2], vec![2], 1.0).unwrap();
        let r = check_structure(&sys);
        assert!(r.system.stabilizable && r.system.detectable);
    }

    #[test]
    fn platoon_structure_needs_all_agents() {
        let (sys, _) = build_platoon(3, 0.02).unwrap();
        let r = check_structure(&sys);
        assert!(r.system.controllable && r.system.observable);
        for a in &r.agents {
            assert!(!a.controllable && !a.observable && !a.detectable && !a.stabilizable);
        }
    }

    #[test]
    fn counterexample_structure() {
        let (sys, _) = input_sharing_counterexample();
        let r = check_structure(&sys);
        assert!(r.system.stabilizable && r.system.detectable);
    }

    #[test]
    fn model_json_round_trip() {
        let (sys, noise) = platoon_with_lqr(2, 0.02).unwrap();
        let doc = ModelDocument::from_model(&sys, &noise);
        let text = doc.to_json().unwrap();
        let (sys2, noise2) = ModelDocument::from_json(&text).unwrap().into_model().unwrap();
        assert_eq!(sys, sys2);
        assert_eq!(noise, noise2);
    }

    #[test]
    fn inconsistent_blocks_rejected() {
        let i = Mat::identity(2, 2);
        assert!(PartitionedSystem::new(i.clone(), i.clone(), i, vec![1], vec![2], 1.0).is_err());
    }
}
