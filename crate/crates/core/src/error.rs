use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the downscaling toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("index ({row}, {col}) out of range for {height}x{width} grid")]
    Index {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("availability error: {0}")]
    Availability(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("state error: {0}")]
    State(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } | Error::Data(_) | Error::Availability(_) => 3,
            Error::Io { .. } | Error::Parse { .. } | Error::Json { .. } => 3,
            _ => 2,
        }
    }
}
