//! Independent H₂ / H∞ norm evaluation for `e⁺ = Â e + B̂ ω`, `z = Ĉ e + D̂ ω`,
//! and exact certificate values from approximately optimal LMI solutions.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

fn require_stable(a: &Mat) -> Result<()> {
    let rho = linalg::spectral_radius(a);
    if rho >= 1.0 {
        return Err(Error::InvalidDesign(format!("spectral radius of the error dynamics is {rho:.6} >= 1")));
    }
    Ok(())
}

/// `‖G‖₂ = √(tr D̂ᵀD̂ + tr B̂ᵀ W_o B̂)` with the observability Gramian `W_o = ÂᵀW_oÂ + ĈᵀĈ`.
pub fn h2_norm_oracle(a: &Mat, b: &Mat, c: &Mat, d: Option<&Mat>) -> Result<f64> {
    require_stable(a)?;
    let wo = linalg::dlyap(&a.transpose(), &(c.transpose() * c))
        .ok_or_else(|| Error::Numerical("Gramian iteration failed".into()))?;
    let mut s = linalg::trace(&(b.transpose() * wo * b));
    if let Some(d) = d {
        s += d.norm_squared();
    }
    Ok(s.max(0.0).sqrt())
}

fn gain_at(a: &Mat, b: &Mat, c: &Mat, omega: f64) -> f64 {
    let n = a.nrows();
    let z = Complex::from_polar(1.0, omega);
    let ac = a.map(|v| Complex::new(v, 0.0));
    let m = DMatrix::<Complex<f64>>::identity(n, n) * z - ac;
    let bc = b.map(|v| Complex::new(v, 0.0));
    let Some(x) = m.lu().solve(&bc) else { return f64::INFINITY };
    let g = c.map(|v| Complex::new(v, 0.0)) * x;
    if g.nrows() == 0 || g.ncols() == 0 {
        return 0.0;
    }
    g.singular_values().max()
}

/// `sup_ω σ_max(Ĉ (e^{jω} I − Â)⁻¹ B̂)` by a uniform sweep of `[0, π]` followed by
/// golden-section refinement around the leading peaks.
pub fn hinf_norm_oracle(a: &Mat, b: &Mat, c: &Mat) -> Result<f64> {
    require_stable(a)?;
    const GRID: usize = 2048;
    let h = std::f64::consts::PI / GRID as f64;
    let vals: Vec<f64> = (0..=GRID).map(|k| gain_at(a, b, c, k as f64 * h)).collect();
    let mut best = vals.iter().cloned().fold(0.0_f64, f64::max);
    // local maxima, largest first
    let mut peaks: Vec<usize> = (0..=GRID)
        .filter(|&k| {
            let left = if k == 0 { f64::NEG_INFINITY } else { vals[k - 1] };
            let right = if k == GRID { f64::NEG_INFINITY } else { vals[k + 1] };
            vals[k] >= left && vals[k] >= right
        })
        .collect();
    peaks.sort_by(|&x, &y| vals[y].total_cmp(&vals[x]));
    for &k in peaks.iter().take(8) {
        let (mut lo, mut hi) = ((k as f64 - 1.0).max(0.0) * h, (k as f64 + 1.0).min(GRID as f64) * h);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = hi - phi * (hi - lo);
        let mut x2 = lo + phi * (hi - lo);
        let (mut f1, mut f2) = (gain_at(a, b, c, x1), gain_at(a, b, c, x2));
        while hi - lo > 1e-12 {
            if f1 < f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + phi * (hi - lo);
                f2 = gain_at(a, b, c, x2);
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - phi * (hi - lo);
                f1 = gain_at(a, b, c, x1);
            }
        }
        best = best.max(f1).max(f2);
    }
    Ok(best)
}

/// Smallest `tr X` certified by a Lyapunov candidate `P`: `P` is first lifted to
/// satisfy `P ⪰ ÂᵀPÂ + ĈᵀĈ` exactly, then `X = D̂ᵀD̂ + B̂ᵀPB̂`.
pub fn certified_h2(a: &Mat, b: &Mat, c: &Mat, d: Option<&Mat>, p: &Mat) -> Result<(f64, Mat)> {
    require_stable(a)?;
    let n = a.nrows();
    let y = linalg::dlyap(&a.transpose(), &Mat::identity(n, n))
        .ok_or_else(|| Error::Numerical("Lyapunov iteration failed".into()))?;
    let p = linalg::sym(p);
    let resid = |p: &Mat| linalg::min_eigenvalue(&(p - a.transpose() * p * a - c.transpose() * c));
    let deficit = (-resid(&p)).max(0.0);
    let mut delta = if deficit > 0.0 { deficit * (1.0 + 1e-6) + 1e-300 } else { 0.0 };
    let mut pc = &p + &y * delta;
    // absorb rounding in the eigenvalue estimate
    for _ in 0..60 {
        if resid(&pc) >= 0.0 {
            break;
        }
        delta = (delta * 2.0).max(f64::EPSILON * p.norm().max(1.0));
        pc = &p + &y * delta;
    }
    let mut x = b.transpose() * &pc * b;
    if let Some(d) = d {
        x += d.transpose() * d;
    }
    Ok((linalg::trace(&x), pc))
}

/// Smallest `γ` certified by `Q` in the bounded-real block with input `B = LΔ`:
/// `Q` is lifted until the leading 3x3 part is positive definite and `γ` is read
/// off the Schur complement of the last block.
pub fn certified_hinf(a: &Mat, b: &Mat, c: &Mat, q: &Mat) -> Result<(f64, Mat)> {
    require_stable(a)?;
    let (n, m, nz) = (a.nrows(), b.ncols(), c.nrows());
    if b.iter().all(|v| *v == 0.0) || nz == 0 {
        return Ok((0.0, q.clone()));
    }
    let y = linalg::dlyap(a, &Mat::identity(n, n)).ok_or_else(|| Error::Numerical("Lyapunov iteration failed".into()))?;
    let q = linalg::sym(q);
    let resid = |q: &Mat| linalg::min_eigenvalue(&(q - a * q * a.transpose() - b * b.transpose()));
    let deficit = (-resid(&q)).max(0.0);
    let mut delta = if deficit > 0.0 { deficit * (1.0 + 1e-6) } else { 0.0 };
    let assemble = |q: &Mat| {
        let mut mm = Mat::zeros(2 * n + m, 2 * n + m);
        mm.view_mut((0, 0), (n, n)).copy_from(q);
        let aq = a * q;
        mm.view_mut((0, n), (n, n)).copy_from(&aq);
        mm.view_mut((n, 0), (n, n)).copy_from(&aq.transpose());
        mm.view_mut((0, 2 * n), (n, m)).copy_from(b);
        mm.view_mut((2 * n, 0), (m, n)).copy_from(&b.transpose());
        mm.view_mut((n, n), (n, n)).copy_from(q);
        mm.view_mut((2 * n, 2 * n), (m, m)).fill_with_identity();
        mm
    };
    for _ in 0..80 {
        let qc = &q + &y * delta;
        if let Some(ch) = assemble(&qc).cholesky() {
            let mut r = Mat::zeros(2 * n + m, nz);
            r.view_mut((n, 0), (n, nz)).copy_from(&(&qc * c.transpose()));
            let s = r.transpose() * ch.solve(&r);
            return Ok((linalg::max_eigenvalue(&s).max(0.0), qc));
        }
        delta = (delta * 2.0).max(1e-14 * q.norm().max(1e-300));
    }
    Err(Error::Numerical("could not lift Q to a bounded-real certificate".into()))
}
