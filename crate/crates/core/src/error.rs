use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid timing: {0}")]
    InvalidTiming(String),
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("semantic error in event {index}: {message}")]
    Semantic { index: usize, message: String },
    #[error("corruption in {file}: {message}")]
    Corruption { file: PathBuf, message: String },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("integrity error in {file}: {message}")]
    Integrity { file: PathBuf, message: String },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },
    #[error("insufficient peaks: found {found}, need at least 2")]
    InsufficientPeaks { found: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short name used in CLI diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidRange(_) => "invalid-range",
            Error::InvalidSize(_) => "invalid-size",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Shape(_) => "shape-error",
            Error::InvalidTiming(_) => "invalid-timing",
            Error::Syntax { .. } => "syntax-error",
            Error::Semantic { .. } => "semantic-error",
            Error::Corruption { .. } => "corruption",
            Error::Version { .. } => "version-error",
            Error::Integrity { .. } => "integrity-error",
            Error::Divergence { .. } => "divergence",
            Error::InsufficientPeaks { .. } => "insufficient-peaks",
            Error::Io(_) => "io-error",
            Error::Json(_) => "json-error",
        }
    }
}
