//! Error type for the tensor engine and network drivers.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("crop target too large: {0}")]
    TargetTooLarge(String),

    #[error("invalid network config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{}: {source}", path.display())]
    IoAt {
        path: std::path::PathBuf,
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Core(#[from] slideseg_core::CoreError),

    #[error("{0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, NnError>;
