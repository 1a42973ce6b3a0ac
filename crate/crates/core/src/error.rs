//! Error type shared by the data-pipeline modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{}: {source}", path.display())]
    IoAt {
        path: std::path::PathBuf,
        source: std::io::Error,
    },

    #[error("decode error: {0}")]
    Decode(String),

    #[error("encode error: {0}")]
    Encode(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("split assignment needs at least {needed} distinct patients, found {found}")]
    InsufficientPatients { needed: usize, found: usize },

    #[error("split ratios must sum to 1, got {0}")]
    BadSplitRatios(f64),

    #[error("slide {width}x{height} is smaller than the {patch_size} px patch grid")]
    SlideSmallerThanPatch {
        width: usize,
        height: usize,
        patch_size: usize,
    },

    #[error("invalid patch size {0}: must be >= 32 and divisible by 32")]
    BadPatchSize(usize),

    #[error("mean image requires at least one training patch")]
    EmptyTrainingSet,

    #[error("missing tile at grid ({gx}, {gy})")]
    MissingTile { gx: usize, gy: usize },

    #[error("duplicate tile at grid ({gx}, {gy})")]
    DuplicateTile { gx: usize, gy: usize },

    #[error("augmentation requires square patches, got {width}x{height}")]
    NonSquarePatch { width: usize, height: usize },

    #[error("manifest already contains augmented records; refusing to balance twice")]
    AlreadyBalanced,

    #[error("synthetic spec out of bounds: {0}")]
    SpecOutOfBounds(String),

    #[error("mask has no epidermis pixels adjacent to background")]
    NoEpidermisSurface,

    #[error("mask has no tumour pixels")]
    NoTumour,

    #[error("confusion matrix is empty")]
    EmptyMatrix,

    #[error("rater table is degenerate: {0}")]
    DegenerateTable(String),

    #[error("{0}")]
    InvalidInput(String),
}

/// Tags an i/o failure with the file it came from.
pub(crate) fn io_at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CoreError + '_ {
    move |source| CoreError::IoAt {
        path: path.to_path_buf(),
        source,
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
