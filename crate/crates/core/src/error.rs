use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("shape mismatch in {context}: expected width {expected}, got {actual}")]
    Shape {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training aborted: {0}")]
    TrainingAbort(String),

    #[error("parse error at record {record}: {message}")]
    Parse { record: usize, message: String },

    #[error("unsupported {what} version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn shape(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Shape {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable kind, used by the CLI and the HTTP layer.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::RejectedInput(_) => "rejected_input",
            Error::Shape { .. } => "shape",
            Error::Contract(_) => "contract",
            Error::TrainingAbort(_) => "training_abort",
            Error::Parse { .. } => "parse",
            Error::Version { .. } => "version",
            Error::NotFound(_) => "not_found",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
