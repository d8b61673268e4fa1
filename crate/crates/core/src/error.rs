use thiserror::Error;

/// Errors raised by the tensor, decomposition and solver routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// The base point of a manifold operation has a rank-deficient core.
    #[error("degenerate point: {0}")]
    DegeneratePoint(String),

    /// The measurement design is too ill-conditioned for the requested operation.
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
