use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A checked hypothesis of the operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A generator matrix is numerically singular.
    #[error("numerically singular matrix at step {step} (log|det| = {log_abs_det:.3e})")]
    Singular { step: usize, log_abs_det: f64 },

    /// The requested horizon is too short for the estimate to be meaningful.
    #[error("horizon too short: {0}")]
    Horizon(String),

    #[error("series diverged: {0}")]
    Divergence(String),

    /// Two subspaces did not intersect in the expected dimension.
    #[error("subspace intersection has dimension mismatch: expected {expected}, principal cosines {cosines:?}")]
    Intersection { expected: usize, cosines: Vec<f64> },

    /// A value left the range representable in double precision.
    #[error("overflow: {0}")]
    Overflow(String),
}

pub type Result<T> = std::result::Result<T, Error>;
