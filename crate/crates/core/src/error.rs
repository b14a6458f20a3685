use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {malformed} malformed rows out of {total} exceeds the allowed rate {max_rate}")]
    ErrorRateExceeded {
        path: PathBuf,
        malformed: usize,
        total: usize,
        max_rate: f64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("undefined objective: {0}")]
    UndefinedObjective(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("missing upstream output `{0}`")]
    MissingDependency(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag, used in JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::ErrorRateExceeded { .. } => "error_rate_exceeded",
            Error::InsufficientData(_) => "insufficient_data",
            Error::DegenerateSample(_) => "degenerate_sample",
            Error::UndefinedObjective(_) => "undefined_objective",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Config { .. } => "config",
            Error::MissingDependency(_) => "missing_dependency",
            Error::Parse(_) => "parse",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
