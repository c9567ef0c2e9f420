use thiserror::Error;

/// Errors surfaced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    /// The caller handed in data that violates a precondition (dimension
    /// mismatch, bad masses, duplicate atoms, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An operation was called in a state it cannot run from (e.g. backward
    /// without a cached forward pass).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A file could not be read, written or parsed.
    #[error("io error: {0}")]
    Io(String),

    /// An internal invariant was violated. Seeing this is a bug.
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid_input(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
