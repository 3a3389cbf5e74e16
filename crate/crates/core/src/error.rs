use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("truncated body: expected {expected} {unit}, found {actual}")]
    Truncated {
        expected: usize,
        actual: usize,
        unit: &'static str,
    },

    #[error("invalid point {index}: {message}")]
    Validation { index: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("duplicate key ({content}, {distortion}) at row {row}")]
    DuplicateKey {
        content: String,
        distortion: String,
        row: usize,
    },

    #[error("{0}")]
    Domain(String),
}

/// Coarse classification used by front ends to choose an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Reading, writing or decoding input failed.
    Input,
    /// Inputs were well formed but rejected by a precondition.
    Domain,
}

impl Error {
    pub fn domain(message: impl Into<String>) -> Self {
        Error::Domain(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Domain(_) => ErrorClass::Domain,
            _ => ErrorClass::Input,
        }
    }

    /// Short machine-readable tag for diagnostics.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Truncated { .. } => "truncated",
            Error::Validation { .. } => "validation",
            Error::Schema(_) => "schema",
            Error::DuplicateKey { .. } => "duplicate-key",
            Error::Domain(_) => "domain",
        }
    }
}
