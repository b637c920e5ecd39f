//! LMI families for inter-agent stability and estimation performance.
//!
//! Every family appends variables and PSD blocks to an [`SdpProgram`]. Observer
//! gains enter either as decision variables through `U_m = P L_m` or as fixed
//! numeric matrices (analysis mode).

mod expr;

pub use expr::{
    AffineBlockMatrix, LinExpr, Objective, PsdConstraint, SdpProgram, Sense, Term, Var, VarInfo, VarKind,
};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::model::{NoiseSpec, PartitionedSystem, PerformanceSpec};

/// Largest agent count for which the power set is enumerated.
pub const POWER_SET_CAP: usize = 12;

/// Default strictness margin for stability blocks of a plant with state matrix `a`.
pub fn default_margin(a: &Mat) -> f64 {
    1e-7 * (1.0 + a.norm())
}

/// Subsets of `{0..n}` in ascending bitmask order.
pub fn power_set(n: usize) -> Result<Vec<Vec<usize>>> {
    if n > POWER_SET_CAP {
        return Err(Error::Capacity { n, cap: POWER_SET_CAP });
    }
    Ok((0u64..1 << n).map(|mask| (0..n).filter(|&i| mask >> i & 1 == 1).collect()).collect())
}

/// `(I − Σ_{m∈subset} L_m C_m)(A+BF)`.
pub fn acl(sys: &PartitionedSystem, gains: &[Mat], subset: &[usize]) -> Result<Mat> {
    check_gain_shapes(sys, gains)?;
    let n = sys.n();
    let mut m = Mat::identity(n, n);
    for &i in subset {
        if i >= sys.agents() {
            return Err(Error::Dimension(format!("agent index {i} out of range")));
        }
        m -= &gains[i] * sys.c_block(i);
    }
    Ok(m * sys.closed_loop())
}

fn check_gain_shapes(sys: &PartitionedSystem, gains: &[Mat]) -> Result<()> {
    if gains.len() != sys.agents() {
        return Err(Error::Dimension(format!("{} gains for {} agents", gains.len(), sys.agents())));
    }
    for (i, g) in gains.iter().enumerate() {
        if g.shape() != (sys.n(), sys.output_blocks()[i]) {
            return Err(Error::Dimension(format!("L_{} has shape {:?}", i + 1, g.shape())));
        }
    }
    Ok(())
}

/// How observer gains enter a family.
#[derive(Debug, Clone)]
pub enum Gains {
    /// `U_m = P L_m`, one `n x p_m` variable per agent.
    Decision(Vec<Var>),
    Fixed(Vec<Mat>),
}

impl Gains {
    /// Declares `U_1..U_N`.
    pub fn declare(prog: &mut SdpProgram, sys: &PartitionedSystem) -> Self {
        let vars = (0..sys.agents())
            .map(|i| prog.full(&format!("U{}", i + 1), sys.n(), sys.output_blocks()[i].max(1)))
            .collect();
        Gains::Decision(vars)
    }

    pub fn fixed(sys: &PartitionedSystem, gains: Vec<Mat>) -> Result<Self> {
        check_gain_shapes(sys, &gains)?;
        Ok(Gains::Fixed(gains))
    }

    /// Recovers `L_m = P⁻¹ U_m` from solved values, or returns the fixed gains.
    pub fn recover(&self, sys: &PartitionedSystem, p: &Mat, values: &[Mat]) -> Result<Vec<Mat>> {
        match self {
            Gains::Fixed(g) => Ok(g.clone()),
            Gains::Decision(vars) => {
                let chol = p
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::Numerical("certificate P is not positive definite".into()))?;
                Ok(vars
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let u = &values[v.id];
                        chol.solve(&u.columns(0, sys.output_blocks()[i]).clone_owned())
                    })
                    .collect())
            }
        }
    }
}

/// `P·(I − Σ_{m∈subset} L_m C_m)·right`, linear in `(P, U)` in synthesis mode.
fn p_times(sys: &PartitionedSystem, p: Var, gains: &Gains, subset: &[usize], right: &Mat) -> LinExpr {
    let n = sys.n();
    match gains {
        Gains::Fixed(g) => {
            let mut m = Mat::identity(n, n);
            for &i in subset {
                m -= &g[i] * sys.c_block(i);
            }
            LinExpr::product(&Mat::identity(n, n), p, &(m * right))
        }
        Gains::Decision(u) => {
            let mut e = LinExpr::product(&Mat::identity(n, n), p, right);
            for &i in subset {
                let ci = sys.c_block(i);
                if ci.nrows() == 0 {
                    continue;
                }
                let cr = pad_rows(&(ci * right), u[i].shape().1);
                e = e.sub(&LinExpr::product(&Mat::identity(n, n), u[i], &cr));
            }
            e
        }
    }
}

/// Zero-padded to `rows` rows (agents without outputs carry a dummy 1-column gain).
fn pad_rows(m: &Mat, rows: usize) -> Mat {
    if m.nrows() == rows {
        return m.clone();
    }
    let mut out = Mat::zeros(rows, m.ncols());
    out.view_mut((0, 0), m.shape()).copy_from(m);
    out
}

/// `[[P_k, P_k A_cl(Π)], [·, P_l + λ I]]`.
fn schur_block(sys: &PartitionedSystem, pk: Var, pl: Var, gains: &Gains, subset: &[usize], relax: Relax) -> Result<AffineBlockMatrix> {
    let n = sys.n();
    let corner = match relax {
        Relax::None => LinExpr::var(pl),
        Relax::Fixed(l) => LinExpr::var(pl).add_constant(&(Mat::identity(n, n) * l)),
        Relax::Var(v) => LinExpr::var(pl).add(&gamma_identity(v, n)),
    };
    AffineBlockMatrix::new(vec![n, n])
        .with(0, 0, LinExpr::var(pk))?
        .with(0, 1, p_times(sys, pk, gains, subset, &sys.closed_loop()))?
        .with(1, 1, corner)
}

#[derive(Debug, Clone, Copy)]
enum Relax {
    None,
    Fixed(f64),
    Var(Var),
}

/// Variables holding a stability certificate.
#[derive(Debug, Clone, Copy)]
pub struct StabilityVars {
    /// `P` (Cor. 2/3) or `P₁` (switched certificate).
    pub p: Var,
    /// `P₂` of the switched certificate.
    pub p2: Option<Var>,
    /// `H` of the explicit linear-size relaxation.
    pub h: Option<Var>,
}

fn thm1_blocks(
    prog: &mut SdpProgram,
    sys: &PartitionedSystem,
    gains: &Gains,
    margin: f64,
    relax: Relax,
) -> Result<StabilityVars> {
    let subsets = power_set(sys.agents())?;
    let n = sys.n();
    let p1 = prog.symmetric("P1", n);
    let p2 = prog.symmetric("P2", n);
    for (idx, s) in subsets.iter().enumerate() {
        // empty transmit set rows use P₂ and carry no gain terms
        let pk = if s.is_empty() { p2 } else { p1 };
        for (l, pl) in [(1, p1), (2, p2)] {
            let block = schur_block(sys, pk, pl, gains, s, relax)?;
            prog.add_psd(format!("stab[{idx}][l={l}]"), block, margin)?;
        }
    }
    prog.add_psd("P1>0", AffineBlockMatrix::single(LinExpr::var(p1))?, margin)?;
    prog.add_psd("P2>0", AffineBlockMatrix::single(LinExpr::var(p2))?, margin)?;
    Ok(StabilityVars { p: p1, p2: Some(p2), h: None })
}

/// Switched-Lyapunov conditions: two blocks per transmit set plus `P₁, P₂ ⪰ εI`.
pub fn thm1_constraints(prog: &mut SdpProgram, sys: &PartitionedSystem, gains: &Gains, margin: f64) -> Result<StabilityVars> {
    thm1_blocks(prog, sys, gains, margin, Relax::None)
}

/// Common-Lyapunov conditions: one block per transmit set.
pub fn cor2_constraints(prog: &mut SdpProgram, sys: &PartitionedSystem, gains: &Gains, margin: f64) -> Result<StabilityVars> {
    let subsets = power_set(sys.agents())?;
    let p = prog.symmetric("P", sys.n());
    for (idx, s) in subsets.iter().enumerate() {
        prog.add_psd(format!("stab[{idx}]"), schur_block(sys, p, p, gains, s, Relax::None)?, margin)?;
    }
    Ok(StabilityVars { p, p2: None, h: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Cor3Form {
    /// `H` declared as a variable: N+2 blocks.
    #[default]
    Explicit,
    /// `H` replaced by its least feasible value `[[P, P(A+BF)], [·, P]]`: N+1 blocks,
    /// with the same feasible set in `(P, U)`.
    Substituted,
}

/// Linear-size relaxation of the common-Lyapunov conditions.
pub fn cor3_constraints(
    prog: &mut SdpProgram,
    sys: &PartitionedSystem,
    gains: &Gains,
    margin: f64,
    form: Cor3Form,
) -> Result<StabilityVars> {
    let n_agents = sys.agents();
    if n_agents == 0 {
        return Err(Error::InvalidArgument("the linear-size relaxation needs at least one agent".into()));
    }
    let n = sys.n();
    let p = prog.symmetric("P", n);
    let g0 = schur_block(sys, p, p, gains, &[], Relax::None)?;
    let factor = (n_agents as f64 - 1.0) / n_agents as f64;
    let (h_var, h_expr) = match form {
        Cor3Form::Explicit => {
            let h = prog.symmetric("H", 2 * n);
            let hm = AffineBlockMatrix::new(vec![n, n])
                .with(0, 0, split_var(h, 0, 0, n, n))?
                .with(1, 0, split_var(h, n, 0, n, n))?
                .with(1, 1, split_var(h, n, n, n, n))?;
            prog.add_psd("H>=G0", hm.clone().sub_scaled(&g0, 1.0)?, 0.0)?;
            (Some(h), hm)
        }
        Cor3Form::Substituted => (None, g0.clone()),
    };
    prog.add_psd("G0>0", g0, margin)?;
    for m in 0..n_agents {
        let gm = schur_block(sys, p, p, gains, &[m], Relax::None)?;
        prog.add_psd(format!("stab[{m}]"), gm.sub_scaled(&h_expr, factor)?, margin)?;
    }
    Ok(StabilityVars { p, p2: None, h: h_var })
}

/// Sub-block `V[r0.., c0..]` of a variable as an expression.
fn split_var(v: Var, r0: usize, c0: usize, rows: usize, cols: usize) -> LinExpr {
    let (vr, vc) = v.shape();
    let mut left = Mat::zeros(rows, vr);
    let mut right = Mat::zeros(vc, cols);
    for i in 0..rows {
        left[(i, r0 + i)] = 1.0;
    }
    for j in 0..cols {
        right[(c0 + j, j)] = 1.0;
    }
    LinExpr::product(&left, v, &right)
}

/// Relaxation level in the relaxed switched conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Relaxation {
    Fixed(f64),
    /// `λ̄ ≥ 0` becomes a decision variable; `P₁, P₂ ⪰ I` normalizes the scale.
    Decision,
}

/// Switched conditions with `A_clᵀ P_k A_cl − P_l ≺ λ̄ I`. Returns the `λ̄` variable when it is a decision.
pub fn relaxed_stability_constraints(
    prog: &mut SdpProgram,
    sys: &PartitionedSystem,
    gains: &Gains,
    lambda: Relaxation,
    margin: f64,
) -> Result<(StabilityVars, Option<Var>)> {
    match lambda {
        Relaxation::Fixed(l) => {
            if !(l >= 0.0) {
                return Err(Error::InvalidArgument(format!("relaxation level {l} must be non-negative")));
            }
            let relax = if l == 0.0 { Relax::None } else { Relax::Fixed(l) };
            Ok((thm1_blocks(prog, sys, gains, margin, relax)?, None))
        }
        Relaxation::Decision => {
            let lam = prog.scalar("lambda");
            let vars = thm1_blocks(prog, sys, gains, margin, Relax::Var(lam))?;
            let n = sys.n();
            for (name, v) in [("P1>=I", vars.p), ("P2>=I", vars.p2.expect("switched certificate"))] {
                let e = LinExpr::var(v).add_constant(&-Mat::identity(n, n));
                prog.add_psd(name, AffineBlockMatrix::single(e)?, 0.0)?;
            }
            prog.add_scalar_ge("lambda>=0", LinExpr::var(lam), 0.0)?;
            Ok((vars, Some(lam)))
        }
    }
}

/// Noise input factors: symmetric roots of each `W_i` and a thin factor of `V`.
#[derive(Debug, Clone)]
pub struct NoiseFactors {
    /// `W^{1/2}` (p x p).
    pub w_half: Mat,
    /// `G` with `G Gᵀ = V` (n x r).
    pub v_factor: Mat,
}

impl NoiseFactors {
    pub fn new(noise: &NoiseSpec) -> Self {
        let w_half = linalg::block_diag(&noise.w.iter().map(linalg::psd_sqrt).collect::<Vec<_>>());
        Self { w_half, v_factor: linalg::thin_factor(&noise.v) }
    }

    pub fn width(&self) -> usize {
        self.w_half.ncols() + self.v_factor.ncols()
    }
}

/// H₂ blocks for the error system `e⁺ = Â e + B̂₂ ω`, `z = Ĉ e + D̂₂ ω`, with
/// `Â = (I−LC)A`. Returns the declared `X`.
pub fn h2_constraints(
    prog: &mut SdpProgram,
    sys: &PartitionedSystem,
    perf: &PerformanceSpec,
    factors: &NoiseFactors,
    p: Var,
    gains: &Gains,
) -> Result<Var> {
    let (n, np) = (sys.n(), sys.n_outputs());
    perf.validate(n, np)?;
    let nz = perf.c_hat.nrows();
    let all: Vec<usize> = (0..sys.agents()).collect();
    let a = sys.a();
    let id_n = Mat::identity(n, n);

    let block1 = AffineBlockMatrix::new(vec![nz, n, n])
        .with(0, 0, LinExpr::identity(nz))?
        .with(2, 0, LinExpr::constant(perf.c_hat.transpose()))?
        .with(1, 1, LinExpr::var(p))?
        .with(1, 2, p_times(sys, p, gains, &all, a))?
        .with(2, 2, LinExpr::var(p))?;
    prog.add_psd("h2[state]", block1, 0.0)?;

    let nw = factors.width();
    let x = prog.symmetric("X", nw);
    // P·B̂₂ = [−U W^{1/2}, (P − UC) G]
    let mut pb = LinExpr::zeros(n, nw);
    let wcols = factors.w_half.ncols();
    let mut place_w = Mat::zeros(np, nw);
    place_w.view_mut((0, 0), (np, wcols)).copy_from(&factors.w_half);
    let mut place_v = Mat::zeros(factors.v_factor.ncols(), nw);
    place_v.view_mut((0, wcols), (factors.v_factor.ncols(), factors.v_factor.ncols())).fill_with_identity();
    match gains {
        Gains::Fixed(g) => {
            let l = sys.stack_gains(g)?;
            let right = -(&l * &place_w) + (&id_n - &l * sys.c()) * &factors.v_factor * &place_v;
            pb = pb.add(&LinExpr::product(&id_n, p, &right));
        }
        Gains::Decision(u) => {
            for (i, &ui) in u.iter().enumerate() {
                let off = sys.output_offset(i);
                let pi = sys.output_blocks()[i];
                let sel = pad_rows(&place_w.rows(off, pi).clone_owned(), ui.shape().1);
                pb = pb.sub(&LinExpr::product(&id_n, ui, &sel));
            }
            pb = pb.add(&p_times(sys, p, gains, &all, &(&factors.v_factor * &place_v)));
        }
    }
    let d2 = {
        let mut d = Mat::zeros(nz, nw);
        d.view_mut((0, 0), (nz, wcols)).copy_from(&(&perf.d21 * &factors.w_half));
        d.view_mut((0, wcols), (nz, factors.v_factor.ncols())).copy_from(&(&perf.d22 * &factors.v_factor));
        d
    };
    let block2 = if d2.iter().all(|v| *v == 0.0) {
        AffineBlockMatrix::new(vec![n, nw])
            .with(0, 0, LinExpr::var(p))?
            .with(0, 1, pb)?
            .with(1, 1, LinExpr::var(x))?
    } else {
        AffineBlockMatrix::new(vec![nz, n, nw])
            .with(0, 0, LinExpr::identity(nz))?
            .with(0, 2, LinExpr::constant(d2))?
            .with(1, 1, LinExpr::var(p))?
            .with(1, 2, pb)?
            .with(2, 2, LinExpr::var(x))?
    };
    prog.add_psd("h2[noise]", block2, 0.0)?;
    Ok(x)
}

/// Threshold parameterization of the H∞ block.
#[derive(Debug, Clone)]
pub enum Thresholds {
    /// One symmetric `p_i x p_i` variable per agent.
    Decision,
    Fixed(Vec<Mat>),
}

#[derive(Debug, Clone)]
pub struct HinfVars {
    pub q: Var,
    pub gamma: Var,
    pub deltas: Vec<Var>,
}

/// Bounded-real block `[[Q, ÂQ, LΔ, 0], [·, Q, 0, QĈᵀ], [·, ·, I, 0], [·, ·, ·, γI]]`
/// with `L` fixed.
pub fn hinf_constraints(
    prog: &mut SdpProgram,
    a_hat: &Mat,
    l: &Mat,
    c_hat: &Mat,
    output_blocks: &[usize],
    thresholds: &Thresholds,
) -> Result<HinfVars> {
    let n = a_hat.nrows();
    let p: usize = output_blocks.iter().sum();
    if a_hat.ncols() != n || l.shape() != (n, p) || c_hat.ncols() != n {
        return Err(Error::Dimension("H∞ block operand shapes".into()));
    }
    let nz = c_hat.nrows();
    let q = prog.symmetric("Q", n);
    let gamma = prog.scalar("gamma");
    let mut ld = LinExpr::zeros(n, p);
    let mut deltas = Vec::new();
    let mut off = 0;
    for (i, &pi) in output_blocks.iter().enumerate() {
        if pi == 0 {
            continue;
        }
        let li = l.columns(off, pi).clone_owned();
        let mut sel = Mat::zeros(pi, p);
        sel.view_mut((0, off), (pi, pi)).fill_with_identity();
        match thresholds {
            Thresholds::Decision => {
                let d = prog.symmetric(&format!("Delta{}", i + 1), pi);
                deltas.push(d);
                ld = ld.add(&LinExpr::product(&li, d, &sel));
            }
            Thresholds::Fixed(ds) => {
                if ds.len() != output_blocks.len() || ds[i].shape() != (pi, pi) {
                    return Err(Error::Dimension("threshold block shapes".into()));
                }
                ld = ld.add_constant(&(&li * &ds[i] * &sel));
            }
        }
        off += pi;
    }
    let id_n = Mat::identity(n, n);
    let block = AffineBlockMatrix::new(vec![n, n, p, nz])
        .with(0, 0, LinExpr::var(q))?
        .with(0, 1, LinExpr::product(a_hat, q, &id_n))?
        .with(0, 2, ld)?
        .with(1, 1, LinExpr::var(q))?
        .with(1, 3, LinExpr::product(&id_n, q, &c_hat.transpose()))?
        .with(2, 2, LinExpr::identity(p))?
        .with(3, 3, gamma_identity(gamma, nz))?;
    prog.add_psd("hinf", block, 0.0)?;
    Ok(HinfVars { q, gamma, deltas })
}

/// `γ·I_k` for a scalar variable.
pub fn gamma_identity(gamma: Var, k: usize) -> LinExpr {
    let mut e = LinExpr::zeros(k, k);
    for i in 0..k {
        let mut l = Mat::zeros(k, 1);
        l[(i, 0)] = 1.0;
        e.terms.push(Term { var: gamma, left: l.clone(), right: l.transpose(), transposed: false });
    }
    e
}
