use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HsiError>;

#[derive(Debug, Error)]
pub enum HsiError {
    #[error("failed to decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no supported frames found in {0}")]
    NoFrames(PathBuf),

    #[error("inconsistent sequence: {path} is {found_cols}x{found_rows}, expected {cols}x{rows}")]
    InconsistentSequence {
        path: PathBuf,
        rows: usize,
        cols: usize,
        found_rows: usize,
        found_cols: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("accumulator is empty")]
    EmptyAccumulator,

    #[error("fingerprint format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("unsupported fingerprint version {0}")]
    UnsupportedVersion(u8),

    #[error("insufficient frames: need at least {needed}, got {got}")]
    InsufficientFrames { needed: usize, got: usize },

    #[error("no frame passed the registration threshold {tau}")]
    NoRegistrableFrames { tau: f64 },

    #[error("unknown device profile `{id}` (known: {known})")]
    UnknownProfile { id: String, known: String },

    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HsiError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HsiError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        HsiError::InvalidInput(msg.into())
    }

    pub(crate) fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        HsiError::InvalidField {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
