use thiserror::Error;

/// Errors raised while assembling or solving recovery problems.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Malformed input: wrong lengths, out-of-range parameters, empty sets.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The kernel or field cannot supply the requested derivative.
    #[error("unsupported: {0}")]
    Capability(String),

    /// A symmetric positive-definite factorization failed even after
    /// escalating the diagonal shift.
    #[error("factorization failed with nugget {nugget:e}: smallest pivot {pivot:e}")]
    Conditioning { pivot: f64, nugget: f64 },

    /// A solve another computation depends on did not converge.
    #[error("not converged: {0}")]
    NotConverged(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
