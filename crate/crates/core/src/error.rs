//! Shared error type for the whole engine.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A covariance (or capacitance) matrix could not be factorized even
    /// after jitter escalation. Usually signals broken kernel parameters
    /// or a degenerate covariance.
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("optimization diverged: {0}")]
    OptimizationDiverged(String),

    #[error("location outside the [-1, 1] domain: {0}")]
    OutOfDomain(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("context set is empty: {0}")]
    EmptyContext(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
