use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{kind}: incompatible shapes {shapes}")]
    Dimension { kind: &'static str, shapes: String },

    #[error("unsupported operation `{0}`")]
    Unsupported(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    Vocabulary { id: usize, size: usize },

    #[error("sequence length {len} exceeds max_len {max_len}")]
    Length { len: usize, max_len: usize },

    #[error("unknown task `{0}`")]
    TaskLookup(String),

    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),

    #[error("checkpoint integrity: {0}")]
    Integrity(String),

    #[error("ingestion failed for {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("data: {0}")]
    Data(String),

    #[error("split: {0}")]
    Split(String),

    #[error("training diverged at step {step} on task `{task}` (loss = {loss})")]
    Divergence { step: u64, task: String, loss: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable category, used for CLI error lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Unsupported(_) => "unsupported",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Vocabulary { .. } => "vocabulary",
            Error::Length { .. } => "length",
            Error::TaskLookup(_) => "task-lookup",
            Error::CheckpointFormat(_) => "checkpoint-format",
            Error::Integrity(_) => "integrity",
            Error::Ingestion { .. } => "ingestion",
            Error::Data(_) => "data",
            Error::Split(_) => "split",
            Error::Divergence { .. } => "divergence",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn ingestion(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Ingestion {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
