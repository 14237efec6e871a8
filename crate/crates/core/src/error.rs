//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shape or axis mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid input data or configuration (validation failures).
    #[error("validation error: {0}")]
    Validation(String),

    /// I/O or (de)serialization failure.
    #[error("io error: {0}")]
    Io(String),

    /// Numerical failure (non-convergence, non-finite values, unstable step).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Autodiff graph misuse (double backward, non-scalar loss, ...).
    #[error("graph error: {0}")]
    Graph(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
