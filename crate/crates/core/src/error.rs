use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PcsError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no qualifying patch region")]
    NoQualifyingPatch,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("config error in `{field}`: {message}")]
    ConfigDomain { field: String, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = PcsError> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> PcsError {
    PcsError::Domain(msg.into())
}

pub(crate) fn dim(msg: impl Into<String>) -> PcsError {
    PcsError::Dimension(msg.into())
}
