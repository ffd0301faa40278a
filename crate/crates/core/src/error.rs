use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CabiError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CabiError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged in {what} at step {step}")]
    Diverged { what: String, step: usize },

    #[error("model not trained: {0}")]
    Untrained(String),

    #[error("load error for {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CabiError {
    pub(crate) fn load(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        CabiError::Load {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn ensure_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(CabiError::Dimension { expected, actual })
    }
}
