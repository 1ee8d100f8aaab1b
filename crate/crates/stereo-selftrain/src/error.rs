//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation's arguments was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two array-like values that must agree in shape do not.
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    /// Teacher and student parameter sets do not line up entry-for-entry.
    #[error("parameter structure mismatch: {0}")]
    StructureMismatch(String),

    /// A file could not be decoded; `offset` is the byte position where
    /// decoding failed, when known.
    #[error("format error in {path}: {message} (byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    /// Run or dataset configuration is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// Rank correlation is undefined (a constant input has no ranking).
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// Training produced a non-finite loss; diagnostics were written to
    /// `dump_dir` when one was configured.
    #[error("non-finite loss at step {step}{}", dump_dir.as_ref().map(|d| format!(", diagnostics in {}", d.display())).unwrap_or_default())]
    NonFiniteLoss {
        step: u64,
        dump_dir: Option<PathBuf>,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
