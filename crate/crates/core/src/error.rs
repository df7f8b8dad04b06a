//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by simulator operations.
#[derive(Debug, Error)]
pub enum Error {
    /// An input vector, gradient, or dataset had the wrong shape.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// An argument violated an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value or combination of values is unusable.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Arithmetic produced a non-finite value where finiteness is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A persisted artifact could not be decoded.
    #[error("corrupt artifact: {0}")]
    CorruptArtifact(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parsable class tag, used by the CLI's one-line errors.
    pub fn class(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } | Error::InvalidInput(_) => "input",
            Error::InvalidConfig(_) => "config",
            Error::NonFinite(_) => "numeric",
            Error::CorruptArtifact(_) => "artifact",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
