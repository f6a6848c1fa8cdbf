use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the CASH pipeline.
#[derive(Debug, Error)]
pub enum CashError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch { context: &'static str, expected: usize, actual: usize },

    #[error("signal of length {length} is shorter than the requested window {window}")]
    SignalTooShort { length: usize, window: usize },

    #[error("anchor {anchor} has no positive sample in the batch")]
    NoPositive { anchor: usize },

    #[error("instance {instance} has {views} views, expected exactly 2")]
    ViewCount { instance: usize, views: usize },

    #[error("label {0} is outside the seen class space")]
    UnknownLabel(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("identifier threshold has not been calibrated")]
    Uncalibrated,

    #[error("class {class} has {available} samples, {required} required")]
    InsufficientSamples { class: u32, available: usize, required: usize },

    #[error("training diverged at epoch {epoch}: {component} is not finite")]
    Diverged { epoch: usize, component: String },

    #[error("hash table is full ({0} entries)")]
    TableFull(usize),

    #[error("unsupported {what} version {found}")]
    Version { what: &'static str, found: u32 },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = CashError> = std::result::Result<T, E>;

impl CashError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CashError::Io { path: path.into(), source }
    }
}
