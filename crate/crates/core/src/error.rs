use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GdrError>;

#[derive(Debug, Error)]
pub enum GdrError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("attention mask row {row} has no attendable key")]
    DegenerateMask { row: usize },

    #[error("{what} {value} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error("{path}:{line}: {msg}")]
    Data {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GdrError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        GdrError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GdrError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numbers themselves (NaN/Inf),
    /// as opposed to bad inputs or files.
    pub fn is_numeric(&self) -> bool {
        matches!(self, GdrError::NonFinite(_))
    }
}
