use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error after {bytes_written} bytes: {source}")]
    Io {
        bytes_written: u64,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    PathIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated stream: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("range error: {what} needs {required} frames, video has {available}")]
    Range {
        what: &'static str,
        required: usize,
        available: usize,
    },

    #[error("grid error: {0}")]
    Grid(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("scorer capability missing: {0}")]
    Capability(String),

    #[error("config syntax error at line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("invalid value for `{field}`: {message}")]
    Constraint { field: String, message: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn constraint(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Constraint {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn path_io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::PathIo {
            path: path.into(),
            source,
        }
    }
}
