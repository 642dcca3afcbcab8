use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input data, configuration or model files.
    Data,
    /// Training or evaluation produced non-finite values.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid interval [{lo}, {hi}]: {reason}")]
    InvalidInterval { lo: f64, hi: f64, reason: &'static str },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("series of length {len} is too short for windows of length {window}")]
    EmptyWindow { len: usize, window: usize },

    #[error("target range is zero; PINAW is undefined for a constant target sequence")]
    UndefinedRange,

    #[error("input is empty: {0}")]
    Empty(&'static str),

    #[error("standard deviation of `{0}` is zero; cannot z-score normalize")]
    ZeroStd(&'static str),

    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite { what: &'static str, epoch: usize, batch: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("backward requires a scalar root, got a {rows}x{cols} node")]
    NonScalarRoot { rows: usize, cols: usize },

    #[error("{path}: row {row}: {reason}")]
    Csv { path: String, row: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("model has no uncertainty parameters")]
    NoUncertainty,

    #[error("unsupported model document: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonFinite { .. } | Error::Numeric(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn arg(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument { name, reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
