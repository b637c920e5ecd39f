//! Invariants re-evaluated from logged quantities.

use serde::Serialize;

use super::{EstimatorParams, SimTrace};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::model::PartitionedSystem;

fn invariant(step: usize, what: String) -> Error {
    Error::Invariant { step, what }
}

/// `i ∈ I(k)` exactly when `|Δ_i⁻¹ r_i(k)| ≥ 1` on the logged residuals.
pub fn trigger_check(trace: &SimTrace, est: &EstimatorParams) -> Result<()> {
    let inv: Vec<Mat> = est
        .thresholds
        .iter()
        .map(|d| d.clone().try_inverse().ok_or_else(|| Error::InvalidDesign("singular threshold".into())))
        .collect::<Result<_>>()?;
    for s in &trace.steps {
        for (i, r) in s.residuals.iter().enumerate() {
            let q = (&inv[i] * r).norm();
            let sent = s.transmit.binary_search(&i).is_ok();
            if sent != (q >= 1.0) {
                return Err(invariant(s.k, format!("agent {} has |q| = {q} but transmitted = {sent}", i + 1)));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct XiReport {
    /// `Σ_i σ_max(L_i Δ_i)`.
    pub bound: f64,
    pub max_xi: f64,
    pub worst_step: usize,
}

/// `|ξ(k)| ≤ Σ_i σ_max(L_i Δ_i)` with `ξ(k) = Σ_{j∉I(k)} L_j (y_j − C_j x̂_j(k|k−1))`.
pub fn xi_bound_check(trace: &SimTrace, est: &EstimatorParams) -> Result<XiReport> {
    let bound: f64 = est.gains.iter().zip(&est.thresholds).map(|(l, d)| linalg::norm2(&(l * d))).sum();
    let n = est.gains.first().map_or(0, |l| l.nrows());
    let mut report = XiReport { bound, max_xi: 0.0, worst_step: 0 };
    for s in &trace.steps {
        let mut xi = Vector::zeros(n);
        for (j, r) in s.residuals.iter().enumerate() {
            if s.transmit.binary_search(&j).is_err() {
                xi += &est.gains[j] * r;
            }
        }
        let m = xi.norm();
        if m > report.max_xi {
            report.max_xi = m;
            report.worst_step = s.k;
        }
        if m > bound * (1.0 + 1e-12) {
            return Err(invariant(s.k, format!("|xi| = {m:.6e} exceeds {bound:.6e}")));
        }
    }
    Ok(report)
}

fn full_estimates(trace: &SimTrace) -> Result<()> {
    if trace.steps.iter().any(|s| s.estimates.is_none()) {
        return Err(Error::InvalidArgument("check needs a fully recorded trace".into()));
    }
    Ok(())
}

/// Largest inter-agent error `max_{j,i,k} |x̂_j(k) − x̂_i(k)|`.
pub fn collapse_check(trace: &SimTrace) -> Result<f64> {
    full_estimates(trace)?;
    let mut worst: f64 = 0.0;
    for k in 0..=trace.steps.len() {
        let post = trace.posteriors(k).expect("full trace");
        for a in post {
            for b in post {
                worst = worst.max((a - b).norm());
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionReport {
    /// Largest residual of the state recursion in terms of agent errors.
    pub state: f64,
    /// Largest residual of the agent-error recursion.
    pub agent: f64,
    /// Largest residual of the inter-agent recursion.
    pub inter_agent: f64,
    pub steps_checked: usize,
}

/// Re-evaluates the state, agent-error and inter-agent-error recursions from a
/// fully recorded trace. Only meaningful for runs without input sharing and
/// without the local update; steps adjacent to a reset are skipped.
pub fn decomposition_check(sys: &PartitionedSystem, trace: &SimTrace, est: &EstimatorParams) -> Result<DecompositionReport> {
    full_estimates(trace)?;
    let na = sys.agents();
    let n = sys.n();
    let (a, b, c) = (sys.a(), sys.b(), sys.c());
    let f = sys.feedback_or_zero();
    let abf = a + b * &f;
    let l = sys.stack_gains(&est.gains)?;
    let i_lc = Mat::identity(n, n) - &l * c;
    let bf: Vec<Mat> = (0..na).map(|i| sys.b_block(i) * sys.f_block(i)).collect();
    let lc: Vec<Mat> = (0..na).map(|i| &est.gains[i] * sys.c_block(i)).collect();
    let mut rep = DecompositionReport { state: 0.0, agent: 0.0, inter_agent: 0.0, steps_checked: 0 };
    for s in &trace.steps {
        let k = s.k;
        let prev_reset = k >= 2 && trace.steps[k - 2].reset;
        if s.reset || prev_reset {
            continue;
        }
        let x_prev = trace.state(k - 1).expect("in range");
        let u_prev = trace.input(k - 1).expect("in range");
        let post_prev = trace.posteriors(k - 1).expect("full trace");
        let est_k = s.estimates.as_ref().expect("full trace");
        let v = &s.x - a * x_prev - b * u_prev;
        let w = &s.y - c * &s.x;
        let e_prev: Vec<Vector> = post_prev.iter().map(|p| x_prev - p).collect();

        let mut x_model = &abf * x_prev + &v;
        for i in 0..na {
            x_model -= &bf[i] * &e_prev[i];
        }
        rep.state = rep.state.max((&s.x - x_model).norm());

        let mut xi = Vector::zeros(n);
        for (j, r) in s.residuals.iter().enumerate() {
            if s.transmit.binary_search(&j).is_err() {
                xi += &est.gains[j] * r;
            }
        }
        let mut a_cl = Mat::identity(n, n);
        for &m in &s.transmit {
            a_cl -= &lc[m];
        }
        a_cl *= &abf;

        for i in 0..na {
            let eps = |j: usize| &post_prev[j] - &post_prev[i];
            let mut coupling = Vector::zeros(n);
            let mut silent = Vector::zeros(n);
            for j in 0..na {
                let e = eps(j);
                coupling += &bf[j] * &e;
                if s.transmit.binary_search(&j).is_err() {
                    silent += &lc[j] * &abf * &e;
                }
            }
            let e_model = &i_lc * (a * &e_prev[i] + &v + coupling) + &xi - &est_k.d[i] + silent - &l * &w;
            let e_logged = &s.x - &est_k.posterior[i];
            rep.agent = rep.agent.max((e_logged - e_model).norm());

            for j in 0..na {
                let model = &a_cl * eps(j) + &est_k.d[j] - &est_k.d[i];
                let logged = &est_k.posterior[j] - &est_k.posterior[i];
                rep.inter_agent = rep.inter_agent.max((logged - model).norm());
            }
        }
        rep.steps_checked += 1;
    }
    Ok(rep)
}
