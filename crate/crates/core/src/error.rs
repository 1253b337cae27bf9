use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the paraphrase pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unusable input: {0}")]
    EmptyInput(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("training diverged at step {step}: non-finite {what}")]
    Diverged { step: usize, what: String },
    #[error("no trained model for cluster {0}")]
    MissingModel(usize),
    #[error("unknown filter predicate `{0}`")]
    UnknownFilter(String),
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("missing artifact {path} (run stage `{stage}` first)")]
    MissingArtifact { stage: String, path: PathBuf },
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
