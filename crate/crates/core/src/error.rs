//! Error type shared by every module.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration.
    #[error("config: {0}")]
    Config(String),

    /// Shape or dimension mismatch between inputs.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Singular or badly conditioned system.
    #[error("singular system: condition estimate {cond:.3e} exceeds {limit:.1e}")]
    Singular { cond: f64, limit: f64 },

    /// Iterative solver diverged.
    #[error("solver diverged at iteration {iteration}: residual grew for {streak} consecutive iterations")]
    Divergence { iteration: usize, streak: usize },

    /// Other numerical failure (non-finite values, missing nulls, ...).
    #[error("numerical: {0}")]
    Numerical(String),

    /// Allocation would exceed the configured memory budget.
    #[error("memory budget exceeded: need {required} bytes, budget {budget} bytes")]
    Budget { required: u64, budget: u64 },

    /// Malformed binary or text artifact.
    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for configuration problems, 3 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::Format(_) | Error::Budget { .. } => 2,
            Error::Singular { .. } | Error::Divergence { .. } | Error::Numerical(_) => 3,
            Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
