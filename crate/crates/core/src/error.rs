use std::path::PathBuf;

use sshd_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error in {path}: at byte {offset}: {detail}")]
    Format { path: String, offset: usize, detail: String },

    #[error("label error in {sample}{}: {detail}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Label { sample: String, line: Option<usize>, detail: String },

    #[error("checkpoint error: {field}: {detail}")]
    Checkpoint { field: &'static str, detail: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

pub(crate) fn config(detail: impl Into<String>) -> CoreError {
    CoreError::Config(detail.into())
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CoreError {
    let path = path.into();
    move |source| CoreError::Io { path, source }
}
