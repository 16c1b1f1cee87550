use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A container is well-formed but carries something we do not support.
    #[error("unsupported format: {field} = {value}")]
    Format { field: &'static str, value: String },

    /// A container is malformed or truncated.
    #[error("parse error: {0}")]
    Parse(String),

    /// An argument lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input audio is too short for the requested analysis.
    #[error(
        "utterance too short: need at least {min_samples} samples ({min_seconds:.3} s), got {got}"
    )]
    TooShort {
        min_samples: usize,
        min_seconds: f64,
        got: usize,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("shape error in layer {layer}: {detail}")]
    Shape { layer: String, detail: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 2 = configuration, 3 = data, 4 = numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Shape { .. } => 2,
            Error::Io { .. }
            | Error::Format { .. }
            | Error::Parse(_)
            | Error::TooShort { .. }
            | Error::Data(_)
            | Error::DimMismatch { .. } => 3,
            Error::Numeric(_) | Error::State(_) => 4,
        }
    }
}
