//! Periodic estimator resets for designs that only satisfy the relaxed switched
//! conditions `A_clᵀ P_k A_cl − P_l ≺ λ̄ I`.
//!
//! Between resets the inter-agent Lyapunov value is bounded by
//! `V̂(k) = a V̂(k−1) + c`, `a = (λ̄+α)/μσ + 1`, `c = (γ̄²/α + δ̄) D²`, starting from
//! `V̂ = 0` right after a reset. A reset is due at the first `k` with `V̂(k) ≥ V_max`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::lmi::{self, acl};
use crate::model::PartitionedSystem;

/// Largest agent count for which every transmit set is enumerated.
const EXACT_SUBSET_CAP: usize = 10;

#[derive(Debug, Clone, Serialize)]
pub struct ResetSchedule {
    pub lambda_bar: f64,
    pub alpha: f64,
    pub mu_sigma: f64,
    pub sigma_bar: f64,
    pub gamma_bar: f64,
    pub delta_bar: f64,
    pub d: f64,
    pub v_max: f64,
    pub a: f64,
    pub c: f64,
    /// Steps between resets; `None` when `V̂` never reaches `V_max`.
    pub period: Option<usize>,
    /// Reset instants up to the requested horizon.
    pub instants: Vec<usize>,
    /// Whether `γ̄` used every transmit set or the linear-size generator family.
    pub exact: bool,
}

impl ResetSchedule {
    pub fn is_reset(&self, k: usize) -> bool {
        matches!(self.period, Some(p) if k > 0 && k.is_multiple_of(p))
    }
}

/// Transmit sets entering `γ̄` and `λ̄`: all of them for small `N`, otherwise `∅` and
/// the singletons.
fn subsets(n_agents: usize) -> Result<(Vec<Vec<usize>>, bool)> {
    if n_agents <= EXACT_SUBSET_CAP {
        Ok((lmi::power_set(n_agents)?, true))
    } else {
        let mut s = vec![Vec::new()];
        s.extend((0..n_agents).map(|m| vec![m]));
        Ok((s, false))
    }
}

/// Smallest `λ̄` for which the certificates satisfy the relaxed switched conditions
/// (`P_k = P₂` on the empty set, `P₁` otherwise; a single certificate serves both).
pub fn certified_lambda(sys: &PartitionedSystem, gains: &[Mat], certs: &[Mat]) -> Result<f64> {
    let (p1, p2) = match certs {
        [p] => (p, p),
        [p1, p2] => (p1, p2),
        _ => return Err(Error::InvalidArgument("one or two certificate matrices expected".into())),
    };
    let (sets, _) = subsets(sys.agents())?;
    let mut worst = f64::NEG_INFINITY;
    for s in &sets {
        let a = acl(sys, gains, s)?;
        let pk = if s.is_empty() { p2 } else { p1 };
        let q = a.transpose() * pk * &a;
        for pl in [p1, p2] {
            worst = worst.max(linalg::max_eigenvalue(&(&q - pl)));
        }
    }
    Ok(worst)
}

/// Fractional first crossing of `V_max`; infinite when the recursion saturates below it.
fn crossing(a: f64, c: f64, v_max: f64) -> f64 {
    if c <= 0.0 {
        return f64::INFINITY;
    }
    if (a - 1.0).abs() < 1e-12 {
        return v_max / c;
    }
    let arg = 1.0 + v_max * (a - 1.0) / c;
    if arg <= 0.0 {
        return f64::INFINITY;
    }
    arg.ln() / a.ln()
}

/// `V̂(k)` from `V̂(0) = 0`.
fn v_hat(a: f64, c: f64, k: usize) -> f64 {
    if (a - 1.0).abs() < 1e-12 {
        c * k as f64
    } else {
        c * (a.powi(k as i32) - 1.0) / (a - 1.0)
    }
}

/// Builds the reset schedule for gains `L` certified by `certs` at relaxation
/// `λ̄`, disturbance bound `D` and Lyapunov budget `V_max`. The free constant `α`
/// is chosen to make the guaranteed reset period as long as possible.
pub fn reset_schedule(
    sys: &PartitionedSystem,
    gains: &[Mat],
    certs: &[Mat],
    lambda_bar: f64,
    d: f64,
    v_max: f64,
    horizon: usize,
) -> Result<ResetSchedule> {
    if !(d >= 0.0) || !(v_max > 0.0) || !lambda_bar.is_finite() {
        return Err(Error::InvalidArgument("need D >= 0, V_max > 0 and finite relaxation level".into()));
    }
    if certs.is_empty() || certs.len() > 2 {
        return Err(Error::InvalidArgument("one or two certificate matrices expected".into()));
    }
    let mut mu_sigma = f64::INFINITY;
    let mut sigma_bar: f64 = 0.0;
    for p in certs {
        let eig = nalgebra::SymmetricEigen::new(linalg::sym(p)).eigenvalues;
        mu_sigma = mu_sigma.min(eig.min());
        sigma_bar = sigma_bar.max(eig.max());
    }
    if !(mu_sigma > 0.0) {
        return Err(Error::InvalidDesign("certificates must be positive definite".into()));
    }
    let delta_bar = certs.iter().map(linalg::norm2).fold(0.0, f64::max);
    let (sets, exact) = subsets(sys.agents())?;
    let mut gamma_bar: f64 = 0.0;
    for s in &sets {
        let a = acl(sys, gains, s)?;
        for p in certs {
            gamma_bar = gamma_bar.max(linalg::norm2(&(p * &a)));
        }
    }

    let d2 = d * d;
    let coef = |alpha: f64| ((lambda_bar + alpha) / mu_sigma + 1.0, (gamma_bar * gamma_bar / alpha + delta_bar) * d2);
    // keep a > 0
    let lo = (-lambda_bar - mu_sigma).max(0.0) + 1e-12 * mu_sigma;
    let lo_log = lo.max(1e-300).ln();
    let hi_log = (1e12 * mu_sigma.max(lo)).ln();
    let score = |la: f64| {
        let (a, c) = coef(la.exp());
        crossing(a, c, v_max)
    };
    const GRID: usize = 400;
    let grid: Vec<f64> = (0..=GRID).map(|i| lo_log + (hi_log - lo_log) * i as f64 / GRID as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&g| score(g)).collect();
    let ibest = (0..=GRID).max_by(|&i, &j| vals[i].total_cmp(&vals[j])).expect("non-empty grid");
    let mut best_log = grid[ibest];
    if vals[ibest].is_finite() {
        // golden-section refinement between the neighbouring grid points
        let (mut l, mut h) = (grid[ibest.saturating_sub(1)], grid[(ibest + 1).min(GRID)]);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut x1, mut x2) = (h - phi * (h - l), l + phi * (h - l));
        let (mut f1, mut f2) = (score(x1), score(x2));
        for _ in 0..100 {
            if f1 < f2 {
                l = x1;
                x1 = x2;
                f1 = f2;
                x2 = l + phi * (h - l);
                f2 = score(x2);
            } else {
                h = x2;
                x2 = x1;
                f2 = f1;
                x1 = h - phi * (h - l);
                f1 = score(x1);
            }
        }
        let cand = if f1 >= f2 { x1 } else { x2 };
        if score(cand) >= vals[ibest] {
            best_log = cand;
        }
    } else {
        // never reaches V_max: pick the α with the lowest saturation level
        let sat = |la: f64| {
            let (a, c) = coef(la.exp());
            if a < 1.0 { c / (1.0 - a) } else { f64::INFINITY }
        };
        best_log = grid.iter().copied().filter(|&g| score(g).is_infinite()).min_by(|&x, &y| sat(x).total_cmp(&sat(y))).unwrap_or(best_log);
    }
    let alpha = best_log.exp();
    let (a, c) = coef(alpha);
    let k_cont = crossing(a, c, v_max);
    let period = if k_cont.is_finite() {
        if c >= v_max {
            return Err(Error::ScheduleInfeasible(format!(
                "one step already reaches V_max = {v_max:.3e} (additive term {c:.3e})"
            )));
        }
        // integer first crossing, guarding the closed form against rounding
        let mut k = k_cont.ceil().max(1.0) as usize;
        while k > 1 && v_hat(a, c, k - 1) >= v_max {
            k -= 1;
        }
        while v_hat(a, c, k) < v_max {
            k += 1;
        }
        Some(k)
    } else {
        None
    };
    let instants = match period {
        Some(p) => (1..).map(|j| j * p).take_while(|&k| k <= horizon).collect(),
        None => Vec::new(),
    };
    Ok(ResetSchedule {
        lambda_bar,
        alpha,
        mu_sigma,
        sigma_bar,
        gamma_bar,
        delta_bar,
        d,
        v_max,
        a,
        c,
        period,
        instants,
        exact,
    })
}
