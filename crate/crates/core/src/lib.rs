//! Data pipeline for whole-slide skin-histology segmentation: rasters and
//! label masks, synthetic slide generation, patch tiling, class balancing,
//! evaluation metrics, and tumour-depth measurement.

pub mod balance;
pub mod breslow;
pub mod error;
pub mod mean;
pub mod metrics;
pub mod patch;
pub mod raster;
pub mod split;
pub mod synth;

pub use error::{CoreError, Result};
pub use raster::{LabelMask, RgbRaster, TissueClass, NUM_CLASSES};
pub use split::{SlideRecord, Split};
