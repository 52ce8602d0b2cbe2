use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tape has already been consumed by backward()")]
    TapeConsumed,

    #[error("backward() needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged {
        epoch: usize,
        step: usize,
        reason: String,
    },

    #[error("format error in {source_name}: {message}")]
    Format {
        source_name: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
