//! Centralized steady-state Kalman filter and its reduced-rate variant.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::model::{NoiseSpec, PartitionedSystem};
use crate::serde_mat;

const RICCATI_TOL: f64 = 1e-13;
const RICCATI_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Clone, Serialize)]
pub struct KalmanFilter {
    /// Posterior-form gain `K = Σ⁻Cᵀ(CΣ⁻Cᵀ + W)⁻¹`.
    #[serde(with = "serde_mat")]
    pub gain: Mat,
    #[serde(with = "serde_mat")]
    pub prior: Mat,
    #[serde(with = "serde_mat")]
    pub posterior: Mat,
    pub iterations: usize,
}

/// Steady state of `Σ⁻ = AΣAᵀ + V`, `Σ = (I − KC)Σ⁻` by fixed-point iteration.
pub fn kalman_filter(a: &Mat, c: &Mat, v: &Mat, w: &Mat) -> Result<KalmanFilter> {
    let n = a.nrows();
    let mut post = v.clone();
    for it in 1..=RICCATI_MAX_ITER {
        let prior = linalg::sym(&(a * &post * a.transpose() + v));
        let s = linalg::sym(&(c * &prior * c.transpose() + w));
        let s_inv = s.try_inverse().ok_or_else(|| Error::Numerical("singular innovation covariance".into()))?;
        let gain = &prior * c.transpose() * s_inv;
        let next = linalg::sym(&((Mat::identity(n, n) - &gain * c) * &prior));
        if !linalg::is_finite(&next) {
            return Err(Error::Numerical("Riccati iteration diverged".into()));
        }
        let change = (&next - &post).norm();
        post = next;
        if change <= RICCATI_TOL * post.norm().max(f64::MIN_POSITIVE) {
            return Ok(KalmanFilter { gain, prior, posterior: post, iterations: it });
        }
    }
    Err(Error::SynthesisFailure("Riccati iteration did not converge".into()))
}

#[derive(Debug, Clone, Serialize)]
pub struct Baseline {
    pub rate_divisor: usize,
    /// Fraction of steps with communication, `1/r`.
    pub comm_rate: f64,
    /// `√(mean_j tr Σ_j)` over the `r` base-rate steps between measurements.
    pub error_power: f64,
    #[serde(with = "serde_mat")]
    pub gain: Mat,
}

/// Centralized filter receiving all measurements every `r` steps. The error
/// covariance is propagated open loop between measurement instants and averaged
/// over the period.
pub fn centralized_baseline(sys: &PartitionedSystem, noise: &NoiseSpec, r: usize) -> Result<Baseline> {
    if r == 0 {
        return Err(Error::InvalidArgument("rate divisor must be at least 1".into()));
    }
    noise.validate(sys)?;
    let a = sys.a();
    let n = sys.n();
    let mut ar = Mat::identity(n, n);
    let mut vr = Mat::zeros(n, n);
    // per-step covariance growth Σ_{i<j} A^i V A^iᵀ for j = 0..r
    let mut growth = Vec::with_capacity(r);
    for _ in 0..r {
        growth.push(vr.clone());
        vr += &ar * &noise.v * ar.transpose();
        ar = a * ar;
    }
    let vr = linalg::sym(&vr);
    if linalg::min_eigenvalue(&vr) < -1e-12 * vr.norm().max(1.0) {
        return Err(Error::Numerical("lifted process covariance lost positive semidefiniteness".into()));
    }
    let kf = kalman_filter(&ar, sys.c(), &vr, &noise.w_full())?;
    let mut total = 0.0;
    let mut aj = Mat::identity(n, n);
    for g in &growth {
        total += linalg::trace(&(&aj * &kf.posterior * aj.transpose() + g));
        aj = a * aj;
    }
    Ok(Baseline { rate_divisor: r, comm_rate: 1.0 / r as f64, error_power: (total / r as f64).sqrt(), gain: kf.gain })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_riccati_fixed_point() {
        // a=0.5, c=v=w=1: prior s solves s = 0.25 s/(s+1) + 1
        let one = Mat::from_element(1, 1, 1.0);
        let kf = kalman_filter(&Mat::from_element(1, 1, 0.5), &one, &one, &one).unwrap();
        let s = kf.prior[(0, 0)];
        assert!((s - (0.25 * s / (s + 1.0) + 1.0)).abs() < 1e-12);
        assert!((kf.gain[(0, 0)] - s / (s + 1.0)).abs() < 1e-12);
    }
}
