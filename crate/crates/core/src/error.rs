use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A point or time lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// Stochastic integration broke down at the given grid step.
    #[error("integration failed at step {step}: {reason}")]
    Integration { step: usize, reason: String },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema violation in {file}: {reason}")]
    Schema { file: String, reason: String },
}

impl Error {
    pub(crate) fn at_step(step: usize, err: Error) -> Error {
        match err {
            Error::Integration { .. } => err,
            other => Error::Integration {
                step,
                reason: other.to_string(),
            },
        }
    }
}
