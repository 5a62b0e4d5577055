use thiserror::Error;

/// Errors shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated (bad PRN number, length
    /// mismatch, group size not dividing the epoch length, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Non-finite values reached a numeric routine.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A symmetric solve failed because the matrix is not positive definite.
    /// For regularized solves this signals that the aid parameter is too
    /// small for the observed eigenvalue spread.
    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    /// A file did not match the documented on-disk layout.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
