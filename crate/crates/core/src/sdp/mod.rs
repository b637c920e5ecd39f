//! Primal-dual interior-point solver for the LMI programs built in [`crate::lmi`].
//!
//! The program is read in its LMI form `min cᵀy s.t. F_b(y) ⪰ 0`, paired with
//! `max −Σ⟨F0_b, X_b⟩ s.t. Σ⟨F_{b,i}, X_b⟩ = c_i, X_b ⪰ 0`. Iterates follow the
//! infeasible Nesterov–Todd path with a Mehrotra predictor-corrector.

mod compile;

use std::fmt::Write as _;

use nalgebra::SymmetricEigen;
use serde::Serialize;

use crate::linalg::{self, Cholesky, Mat, Vector};
use crate::lmi::{SdpProgram, Sense};
use compile::Compiled;

pub const DEFAULT_TOL: f64 = 1e-8;
/// Constraint violation above which a stalled solve is reported infeasible.
pub const INFEASIBLE_VIOLATION: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    /// KKT residuals and relative gap within tolerance.
    Optimal,
    /// Constraints hold but optimality was not reached to tolerance.
    Feasible,
    Infeasible,
    /// The objective decreases without bound along a recession direction.
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Record one log line per iteration in the solution.
    pub log: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: 120, log: false }
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    /// Value of every program variable, indexed by variable id.
    pub values: Vec<Mat>,
    /// Objective in the program's own sense.
    pub objective: f64,
    /// `max_b max(0, margin_b − λ_min(block_b))` at the returned point.
    pub max_violation: f64,
    pub iterations: usize,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub relative_gap: f64,
    /// Smallest Cholesky pivot seen in the Schur system.
    pub min_pivot: f64,
    pub log: Vec<String>,
}

impl SdpSolution {
    pub fn is_solved(&self) -> bool {
        matches!(self.status, SolveStatus::Optimal | SolveStatus::Feasible)
    }
}

struct BlockScaling {
    g: Mat,
    g_inv: Mat,
    w: Mat,
    lambda: Vector,
}

/// NT scaling point: `W Z W = X`, `Gᵀ Z G = G⁻¹ X G⁻ᵀ = diag(λ)`.
fn nt_scaling(x: &Mat, z: &Mat) -> Option<BlockScaling> {
    let lx = Cholesky::new(x.clone()).ok()?;
    let l = lx.l();
    let m = linalg::sym(&(l.transpose() * z * l));
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.iter().any(|&e| !(e > 0.0)) {
        return None;
    }
    let lambda = eig.eigenvalues.map(f64::sqrt);
    let n = x.nrows();
    let mut g = l * &eig.eigenvectors;
    let l_inv = l.clone().solve_lower_triangular(&Mat::identity(n, n))?;
    let mut g_inv = eig.eigenvectors.transpose() * l_inv;
    for j in 0..n {
        let s = lambda[j].sqrt();
        g.column_mut(j).unscale_mut(s);
        g_inv.row_mut(j).scale_mut(s);
    }
    let w = linalg::sym(&(&g * g.transpose()));
    Some(BlockScaling { g, g_inv, w, lambda })
}

/// Largest `α ≤ cap` keeping `X + αΔX ⪰ 0`.
fn max_step(x: &Mat, dx: &Mat, cap: f64) -> f64 {
    let Ok(ch) = Cholesky::new(x.clone()) else { return 0.0 };
    let l = ch.l();
    let n = x.nrows();
    let Some(li) = l.clone().solve_lower_triangular(&Mat::identity(n, n)) else { return 0.0 };
    let m = linalg::sym(&(&li * dx * li.transpose()));
    let lmin = SymmetricEigen::new(m).eigenvalues.min();
    if lmin >= 0.0 {
        cap
    } else {
        (-1.0 / lmin).min(cap)
    }
}

fn frob(ms: &[Mat]) -> f64 {
    ms.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
}

fn inner_all(a: &[Mat], b: &[Mat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| linalg::inner(x, y)).sum()
}

fn factor_schur(m: &Mat, min_pivot: &mut f64) -> Option<Cholesky> {
    let scale = (0..m.nrows()).map(|i| m[(i, i)]).fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
    let mut reg = 0.0;
    for attempt in 0..8 {
        let mut mm = m.clone();
        if reg > 0.0 {
            for i in 0..mm.nrows() {
                mm[(i, i)] += reg;
            }
        }
        if let Ok(ch) = Cholesky::new(mm) {
            let l = ch.l();
            let piv = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
            *min_pivot = min_pivot.min(piv);
            return Some(ch);
        }
        reg = scale * 1e-14 * 100f64.powi(attempt);
    }
    None
}

/// Solves `program` to relative accuracy `opts.tol`.
pub fn solve(program: &SdpProgram, opts: &SolverOptions) -> SdpSolution {
    let mut comp = Compiled::new(program);
    let n_vars = comp.m;
    let sense_sign = match program.objective().sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };

    // scale each block; the feasible set is unchanged
    for b in comp.blocks.iter_mut() {
        let mut s = b.f0.norm();
        for t in &b.terms {
            s = s.max(t.weight * 2.0 * t.left.norm() * t.right.norm());
        }
        let s = if s > 0.0 { 1.0 / s } else { 1.0 };
        b.f0 *= s;
        for t in b.terms.iter_mut() {
            t.weight *= s;
        }
    }
    // scale each variable so its largest coordinate operator has unit norm
    let mut y_scale = Vector::from_element(n_vars, 1.0);
    {
        let unit: Vec<Mat> = comp.blocks.iter().map(|b| Mat::identity(b.dim, b.dim)).collect();
        let m = comp.schur(&unit);
        let mut var_scale = vec![1.0; comp.kinds.len()];
        for (v, vs) in var_scale.iter_mut().enumerate() {
            let off = comp.offsets[v];
            let nrm = (off..off + comp.kinds[v].free_entries()).map(|i| m[(i, i)].max(0.0).sqrt()).fold(0.0, f64::max);
            if nrm > 0.0 && nrm.is_finite() {
                *vs = 1.0 / nrm;
            }
            for i in off..off + comp.kinds[v].free_entries() {
                y_scale[i] = *vs;
            }
        }
        for b in comp.blocks.iter_mut() {
            for t in b.terms.iter_mut() {
                t.weight *= var_scale[t.var];
            }
        }
        comp.c.component_mul_assign(&y_scale);
    }
    let c_norm = comp.c.amax();
    let c_scale = if c_norm > 0.0 { 1.0 / c_norm } else { 1.0 };
    let c = &comp.c * c_scale;

    let dims: Vec<usize> = comp.blocks.iter().map(|b| b.dim).collect();
    let nu: usize = dims.iter().sum();
    let f0s: Vec<Mat> = comp.blocks.iter().map(|b| b.f0.clone()).collect();
    let f0_norm = frob(&f0s);
    let c_norm2 = c.norm();
    let fi_max = {
        let unit: Vec<Mat> = dims.iter().map(|&d| Mat::identity(d, d)).collect();
        let m = comp.schur(&unit);
        (0..n_vars).map(|i| m[(i, i)].max(0.0).sqrt()).fold(0.0_f64, f64::max)
    };

    let mut xs = Vec::new();
    let mut zs = Vec::new();
    for (b, &d) in comp.blocks.iter().zip(&dims) {
        let sd = (d as f64).sqrt();
        let xi = (10.0_f64).max(sd).max(d as f64 * (1.0 + c.amax()) / (1.0 + fi_max));
        let eta = (10.0_f64).max(sd).max(b.f0.norm()).max(fi_max);
        xs.push(Mat::identity(d, d) * xi);
        zs.push(Mat::identity(d, d) * eta);
    }
    let mut y = Vector::zeros(n_vars);

    let mut log = Vec::new();
    let mut min_pivot = f64::INFINITY;
    let mut status = SolveStatus::NumericalFailure;
    let mut iterations = 0;
    let mut stall = 0;
    let (mut pinf, mut dinf, mut relgap) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut best: Option<(f64, Vector)> = None;

    for it in 0..opts.max_iter {
        iterations = it;
        let fy = comp.affine(&y);
        let rp = &c - comp.adjoint(&xs);
        let rd: Vec<Mat> = fy.iter().zip(&zs).map(|(f, z)| f - z).collect();
        let gap = inner_all(&xs, &zs);
        let mu = gap / nu as f64;
        let pobj = c.dot(&y);
        let dobj = -inner_all(&f0s, &xs);
        pinf = rp.norm() / (1.0 + c_norm2);
        dinf = frob(&rd) / (1.0 + f0_norm);
        relgap = gap / (1.0 + pobj.abs() + dobj.abs());
        if opts.log {
            let mut line = String::new();
            let _ = write!(
                line,
                "{it:3} pobj {:+.9e} dobj {:+.9e} pinf {pinf:.2e} dinf {dinf:.2e} gap {relgap:.2e} mu {mu:.2e}",
                pobj / c_scale * sense_sign,
                dobj / c_scale * sense_sign
            );
            log.push(line);
        }
        // remember the most feasible point for stall diagnostics
        if dinf <= 1e-6 {
            let merit = relgap.max(dinf);
            if best.as_ref().is_none_or(|(m, _)| merit < *m) {
                best = Some((merit, y.clone()));
            }
        }
        if pinf <= opts.tol && dinf <= opts.tol && relgap <= opts.tol {
            status = SolveStatus::Optimal;
            break;
        }
        // infeasibility certificate: X ⪰ 0, adj(X) ≈ 0, ⟨F0, X⟩ < 0
        let f0x = -dobj;
        if f0x < 0.0 {
            let adj = comp.adjoint(&xs).norm();
            if adj / (-f0x) < opts.tol {
                status = SolveStatus::Infeasible;
                break;
            }
        }
        // recession certificate: F_lin(y) ⪰ 0 with cᵀy → −∞
        if pobj < 0.0 && -pobj > 1e10 * (1.0 + dobj.abs()) {
            status = SolveStatus::Unbounded;
            break;
        }

        let scal: Option<Vec<BlockScaling>> = xs.iter().zip(&zs).map(|(x, z)| nt_scaling(x, z)).collect();
        let Some(scal) = scal else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let ws: Vec<Mat> = scal.iter().map(|s| s.w.clone()).collect();
        let m = comp.schur(&ws);
        let Some(chol) = factor_schur(&m, &mut min_pivot) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let wrdw: Vec<Mat> = rd.iter().zip(&ws).map(|(r, w)| w * r * w).collect();

        let direction = |rc: &[Mat]| {
            let tmp: Vec<Mat> = rc.iter().zip(&wrdw).map(|(a, b)| a - b).collect();
            let rhs = comp.adjoint(&tmp) - &rp;
            let mut dy = chol.solve(&rhs);
            // iterative refinement against the operator form of the Schur system
            for _ in 0..3 {
                let wlw: Vec<Mat> = comp.apply(&dy).iter().zip(&ws).map(|(l, w)| w * l * w).collect();
                let r = &rhs - comp.adjoint(&wlw);
                if !(r.norm() > 1e-14 * rhs.norm()) {
                    break;
                }
                dy += chol.solve(&r);
            }
            let lin = comp.apply(&dy);
            let dz: Vec<Mat> = lin.iter().zip(&rd).map(|(l, r)| linalg::sym(&(l + r))).collect();
            let dx: Vec<Mat> =
                rc.iter().zip(&dz).zip(&ws).map(|((r, d), w)| linalg::sym(&(r - w * d * w))).collect();
            (dx, dy, dz)
        };

        // predictor
        let rc_aff: Vec<Mat> = xs.iter().map(|x| -x).collect();
        let (dxa, _dya, dza) = direction(&rc_aff);
        let ap = xs.iter().zip(&dxa).map(|(x, d)| max_step(x, d, 1.0)).fold(1.0, f64::min);
        let ad = zs.iter().zip(&dza).map(|(z, d)| max_step(z, d, 1.0)).fold(1.0, f64::min);
        let mut gap_aff = 0.0;
        for b in 0..xs.len() {
            let xa = &xs[b] + &dxa[b] * ap;
            let za = &zs[b] + &dza[b] * ad;
            gap_aff += linalg::inner(&xa, &za);
        }
        let mu_aff = gap_aff / nu as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let mut rc = Vec::with_capacity(xs.len());
        for (b, s) in scal.iter().enumerate() {
            let dxt = &s.g_inv * &dxa[b] * s.g_inv.transpose();
            let dzt = s.g.transpose() * &dza[b] * &s.g;
            let corr = (&dxt * &dzt + &dzt * &dxt) * 0.5;
            let d = s.lambda.len();
            let mut t = Mat::zeros(d, d);
            for j in 0..d {
                for i in 0..d {
                    let mut r = -corr[(i, j)];
                    if i == j {
                        r += sigma * mu - s.lambda[i] * s.lambda[i];
                    }
                    t[(i, j)] = 2.0 * r / (s.lambda[i] + s.lambda[j]);
                }
            }
            rc.push(&s.g * t * s.g.transpose());
        }
        let (dx, dy, dz) = direction(&rc);
        let ap_max = xs.iter().zip(&dx).map(|(x, d)| max_step(x, d, f64::INFINITY)).fold(f64::INFINITY, f64::min);
        let ad_max = zs.iter().zip(&dz).map(|(z, d)| max_step(z, d, f64::INFINITY)).fold(f64::INFINITY, f64::min);
        let tau = 0.9 + 0.09 * ap.min(ad);
        let alpha_p = (tau * ap_max).min(1.0);
        let alpha_d = (tau * ad_max).min(1.0);
        if !(alpha_p.is_finite() && alpha_d.is_finite()) || dy.iter().any(|v| !v.is_finite()) {
            status = SolveStatus::NumericalFailure;
            break;
        }
        for b in 0..xs.len() {
            xs[b] += &dx[b] * alpha_p;
            zs[b] += &dz[b] * alpha_d;
        }
        y += &dy * alpha_d;

        if alpha_p.min(alpha_d) < 1e-8 {
            stall += 1;
            if stall >= 3 {
                break;
            }
        } else {
            stall = 0;
        }
        iterations = it + 1;
    }

    let values_at = |y: &Vector| comp.values(&y.component_mul(&y_scale));
    let mut values = values_at(&y);
    let mut violation = max_violation(program, &values);
    if status == SolveStatus::NumericalFailure || (status != SolveStatus::Optimal && status != SolveStatus::Infeasible && status != SolveStatus::Unbounded) {
        // stalled or failed: fall back to the best nearly feasible iterate
        if let Some((_, yb)) = &best {
            let vb = values_at(yb);
            let viol_b = max_violation(program, &vb);
            if viol_b < violation {
                values = vb;
                violation = viol_b;
            }
        }
        let scale = program_scale(program, &values);
        status = if violation <= 1e-6 * scale {
            SolveStatus::Feasible
        } else if violation > INFEASIBLE_VIOLATION * scale {
            SolveStatus::Infeasible
        } else {
            SolveStatus::NumericalFailure
        };
    }
    let objective = program.objective().eval(&values);
    SdpSolution {
        status,
        values,
        objective,
        max_violation: violation,
        iterations,
        primal_infeasibility: pinf,
        dual_infeasibility: dinf,
        relative_gap: relgap,
        min_pivot,
        log,
    }
}

fn program_scale(program: &SdpProgram, values: &[Mat]) -> f64 {
    program
        .constraints()
        .iter()
        .map(|c| c.matrix.eval(values).amax())
        .fold(1.0_f64, f64::max)
}

fn max_violation(program: &SdpProgram, values: &[Mat]) -> f64 {
    program
        .constraints()
        .iter()
        .map(|c| (c.margin - linalg::min_eigenvalue(&c.matrix.eval(values))).max(0.0))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockCheck {
    pub name: String,
    pub dim: usize,
    pub margin: f64,
    pub min_eigenvalue: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub blocks: Vec<BlockCheck>,
    /// Largest `margin − λ_min` over blocks (negative when all blocks hold strictly).
    pub worst_violation: f64,
    pub passed: bool,
}

/// Re-evaluates every constraint from its expression at `values`. A block passes
/// when `λ_min ≥ margin − slack·max(1, |λ|_max)`.
pub fn verify(program: &SdpProgram, values: &[Mat], slack: f64) -> VerifyReport {
    let mut blocks = Vec::with_capacity(program.constraints().len());
    let mut worst = f64::NEG_INFINITY;
    for c in program.constraints() {
        let m = c.matrix.eval(values);
        let eig = SymmetricEigen::new(linalg::sym(&m)).eigenvalues;
        let lmin = eig.min();
        let scale = eig.iter().map(|v| v.abs()).fold(1.0_f64, f64::max);
        let passed = lmin >= c.margin - slack * scale;
        worst = worst.max(c.margin - lmin);
        blocks.push(BlockCheck { name: c.name.clone(), dim: m.nrows(), margin: c.margin, min_eigenvalue: lmin, passed });
    }
    let passed = blocks.iter().all(|b| b.passed);
    VerifyReport { blocks, worst_violation: worst, passed }
}
