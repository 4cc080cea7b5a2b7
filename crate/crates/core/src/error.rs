use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("hyper-dict has no entry for model `{0}`")]
    MissingModel(String),
    #[error("malformed parameter `{name}`: {reason}")]
    MalformedParam { name: String, reason: String },
    #[error("unknown transform `{0}`")]
    UnknownTransform(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("parameter `{name}`: {reason}")]
    InvalidModification { name: String, reason: String },
    #[error("value {value} for `{name}` is outside [{lower}, {upper}]")]
    OutOfBounds {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("expected a vector of length {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid control setting: {0}")]
    InvalidControl(String),
    #[error("correlation matrix is not positive definite even with jitter {0:e}")]
    Factorization(f64),
    #[error("unknown optimizer `{0}`")]
    UnknownOptimizer(String),
    #[error("optimizer `{0}` is excluded from the portfolio: {1}")]
    ExcludedOptimizer(String, &'static str),
    #[error("non-finite gradient component at index {0}")]
    NonFiniteGradient(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("evaluation failed: {0}")]
    Evaluation(String),
    #[error("run state is empty")]
    EmptyState,
    #[error("dataset too small: {0}")]
    DatasetTooSmall(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(name: &str, reason: impl Into<String>) -> Self {
        Error::MalformedParam {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
