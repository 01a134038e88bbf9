use thiserror::Error;

/// Errors raised by the kernel, mesh and solver routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    /// Kernel row `n` is not monotone at cell `k`: A_{n-k-1} < A_{n-k}.
    #[error("kernel row {n} is not monotone at k={k} (A2 violated)")]
    Monotonicity { n: usize, k: usize },

    /// Tridiagonal elimination hit a pivot that is not strictly positive.
    #[error("nonpositive pivot {pivot:e} at row {row} in time step {step}")]
    NonpositivePivot { step: usize, row: usize, pivot: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
