use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("power set of {n} agents exceeds the enumeration cap of {cap}; use the linear-size relaxation (cor3) instead")]
    Capacity { n: usize, cap: usize },

    #[error("synthesis failed: {0}")]
    SynthesisFailure(String),

    /// The stability LMIs have no solution. Carries the smallest relaxation
    /// level found by the relaxed program, when it was computed, so callers
    /// can fall back to scheduled estimator resets.
    #[error("stability conditions infeasible (relaxation level {relaxation:?})")]
    StabilityInfeasible { relaxation: Option<f64> },

    #[error("invalid target: J_max = {j_max} must exceed the full-communication floor c* = {c_star}")]
    InvalidTarget { j_max: f64, c_star: f64 },

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("reset schedule infeasible: {0}")]
    ScheduleInfeasible(String),

    #[error("simulation diverged at step {step}")]
    Divergence { step: usize },

    #[error("invariant violated at step {step}: {what}")]
    Invariant { step: usize, what: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
