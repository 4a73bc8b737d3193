use thiserror::Error;

/// Crate-wide error type.
///
/// Errors split into two families: invalid inputs (violated preconditions,
/// malformed structures) and numerical failures (root finding, matrix
/// factorization). The CLI maps the former to exit code 2 and the latter
/// to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("root finding failed: {0}")]
    RootFinding(String),

    #[error("correlation matrix factorization failed: {0}")]
    Factorization(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for errors caused by bad inputs rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Invalid(_) | Error::DimensionMismatch { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
