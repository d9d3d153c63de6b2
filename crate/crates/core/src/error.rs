use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {context}: {message}")]
    Json { context: String, message: String },

    /// A value violates one of the documented invariants of its type.
    #[error("invalid {what}: {message}")]
    Invalid { what: &'static str, message: String },

    /// Mismatched counts or shapes between arguments.
    #[error("structural mismatch: {0}")]
    Structural(String),

    #[error("png error: {0}")]
    Png(String),

    #[error("underdetermined: {0}")]
    Underdetermined(String),

    #[error("no valid observations: {0}")]
    EmptyObservations(String),

    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    #[error("palette capacity exceeded: requested {requested}, capacity {capacity}")]
    Capacity { requested: usize, capacity: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(what: &'static str, message: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            message: message.into(),
        }
    }

    pub fn json(context: impl Into<String>, err: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            message: err.to_string(),
        }
    }

    /// Failure class used by the command-line front end for exit codes.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } | Error::Png(_) => ErrorClass::Io,
            Error::Numerical(_) => ErrorClass::Numerical,
            _ => ErrorClass::Validation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Validation,
    Numerical,
}

pub type Result<T> = std::result::Result<T, Error>;
