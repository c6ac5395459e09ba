use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by tensor I/O, argument validation, and the inference engines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("duplicate index {index:?} (line {line})")]
    DuplicateIndex { index: Vec<usize>, line: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
