//! Library half of the `ebse` binary: run configuration, flag handling and the
//! subcommands. Exit codes: 0 success, 1 bad configuration or usage, 2 infeasible
//! (including a design file that fails verification), 3 numerical failure
//! (including a fresh design that fails its own re-check, or a replay deviation).

pub mod args;
pub mod commands;
pub mod config;

use ebse_core::Error;

pub use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
    /// A run that finished but did not pass its own check.
    Check(String),
    /// A design whose certificate does not satisfy its conditions.
    Rejected(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Check(_) => 3,
            CliError::Rejected(_) => 2,
            CliError::Core(e) => match e {
                // the exponential families are refused for large N; the fix is a different variant
                Error::InvalidModel(_)
                | Error::InvalidArgument(_)
                | Error::Dimension(_)
                | Error::Capacity { .. }
                | Error::InvalidTarget { .. }
                | Error::InvalidDesign(_)
                | Error::Io(_)
                | Error::Json(_) => 1,
                Error::StabilityInfeasible { .. } | Error::SynthesisFailure(_) | Error::ScheduleInfeasible(_) => 2,
                Error::Numerical(_) | Error::Divergence { .. } | Error::Invariant { .. } => 3,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Core(e @ Error::InvalidTarget { .. }) => {
                write!(f, "{e}; the floor is the bound with every agent transmitting, so pick a larger J_max")
            }
            CliError::Core(e @ Error::Capacity { .. }) => write!(f, "{e}: pass --variant cor3"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
            CliError::Rejected(m) => write!(f, "design rejected: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}
