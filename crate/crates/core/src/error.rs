//! Error type shared across the crate.
//!
//! Every error carries enough context to name the offending tensor, file
//! offset, or recipe key. [`Error::category`] buckets errors for the CLI
//! exit-code taxonomy (usage / data / numerical).

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Caller passed invalid arguments or an invalid recipe (exit 1).
    Usage,
    /// Input files are malformed or inconsistent with each other (exit 2).
    Data,
    /// A numerical contract was violated (exit 3).
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed container {path}: {reason}")]
    MalformedContainer { path: PathBuf, reason: String },

    #[error("tensor '{tensor}' contains non-finite values ({detail})")]
    NonFinite { tensor: String, detail: String },

    #[error("invalid tensor '{tensor}': {reason}")]
    InvalidTensor { tensor: String, reason: String },

    #[error("shape mismatch for tensor '{tensor}': expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("tensor name sets differ: only in left {only_left:?}, only in right {only_right:?}")]
    NameSetMismatch {
        only_left: Vec<String>,
        only_right: Vec<String>,
    },

    #[error("unknown tensor '{tensor}' ({context})")]
    UnknownTensor { tensor: String, context: String },

    #[error("invalid recipe: {reason}")]
    InvalidRecipe { reason: String },

    #[error("invalid argument: {reason}")]
    InvalidArgument { reason: String },

    #[error("numerical contract violation: {reason}")]
    Numerical { reason: String },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidRecipe { .. } | Error::InvalidArgument { .. } => ErrorCategory::Usage,
            Error::Numerical { .. } => ErrorCategory::Numerical,
            _ => ErrorCategory::Data,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::MalformedContainer {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
