use serde::Serialize;

use super::SimTrace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub window: usize,
    pub tail_fraction: f64,
    /// First step of the tail window.
    pub tail_start: usize,
    /// Trailing moving average of each agent's transmit indicator, one value per step.
    pub rate_series: Vec<Vec<f64>>,
    /// Mean transmit indicator over the tail, per agent.
    pub rates: Vec<f64>,
    /// Transmissions over the tail divided by `agents × steps`.
    pub total_rate: f64,
    /// `√(mean over the tail of |e_i(k)|²)` per agent.
    pub power: Vec<f64>,
    /// Largest `|x_j(k)|` over the tail for the requested state indices.
    pub band: Option<f64>,
}

impl Metrics {
    pub fn mean_power(&self) -> f64 {
        self.power.iter().sum::<f64>() / self.power.len().max(1) as f64
    }
}

/// Summarizes a trace. `band_indices` names the states whose excursion is
/// reported (the inter-vehicle gaps for a platoon).
pub fn metrics(trace: &SimTrace, window: usize, tail_fraction: f64, band_indices: &[usize]) -> Result<Metrics> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("tail fraction {tail_fraction} must lie in (0, 1]")));
    }
    let steps = &trace.steps;
    let len = steps.len();
    if len == 0 {
        return Err(Error::InvalidArgument("empty trace".into()));
    }
    let na = trace.agents;
    let tail_len = ((len as f64 * tail_fraction).ceil() as usize).clamp(1, len);
    let tail_start = len - tail_len;

    let mut rate_series = Vec::with_capacity(na);
    let mut rates = Vec::with_capacity(na);
    let mut power = Vec::with_capacity(na);
    let mut total = 0usize;
    for i in 0..na {
        let hit: Vec<u32> = steps.iter().map(|s| s.transmit.binary_search(&i).is_ok() as u32).collect();
        let mut prefix = vec![0u32; len + 1];
        for k in 0..len {
            prefix[k + 1] = prefix[k] + hit[k];
        }
        rate_series.push(
            (0..len)
                .map(|k| {
                    let lo = (k + 1).saturating_sub(window);
                    (prefix[k + 1] - prefix[lo]) as f64 / (k + 1 - lo) as f64
                })
                .collect(),
        );
        let tail_hits = (prefix[len] - prefix[tail_start]) as usize;
        total += tail_hits;
        rates.push(tail_hits as f64 / tail_len as f64);
        let ms = steps[tail_start..].iter().map(|s| s.err_sq[i]).sum::<f64>() / tail_len as f64;
        power.push(ms.sqrt());
    }
    let band = if band_indices.is_empty() {
        None
    } else {
        Some(
            steps[tail_start..]
                .iter()
                .flat_map(|s| band_indices.iter().map(move |&j| s.x[j].abs()))
                .fold(0.0, f64::max),
        )
    };
    Ok(Metrics {
        window,
        tail_fraction,
        tail_start: tail_start + 1,
        rate_series,
        rates,
        total_rate: total as f64 / (na * tail_len) as f64,
        power,
        band,
    })
}
