//! Training-set mean image: computation, raw-float persistence, and
//! mean-subtraction into a channel-first buffer.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_at, CoreError, Result};
use crate::patch::PatchManifest;
use crate::raster::{load_raster, RgbRaster};
use crate::split::Split;

/// Per-pixel per-channel mean of the training feature patches, stored
/// planar (all red values, then green, then blue). Held in f64; the on-disk
/// format is f32.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// Channel-first float image, the input layout of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ChwBuffer {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MeanSidecar {
    width: usize,
    height: usize,
    channels: usize,
}

impl MeanImage {
    pub fn value(&self, channel: usize, x: usize, y: usize) -> f64 {
        self.values[(channel * self.height + y) * self.width + x]
    }
}

/// Averages all training-split feature patches, accumulating in f64.
pub fn compute_mean_image(manifest: &PatchManifest, patches_root: &Path) -> Result<MeanImage> {
    let size = manifest.patch_size;
    let mut sums = vec![0.0f64; 3 * size * size];
    let mut count = 0usize;

    for rec in manifest.records.iter().filter(|r| r.split == Split::Train) {
        let patch = load_raster(&patches_root.join(rec.feature_rel_path()))?;
        if patch.width != size || patch.height != size {
            return Err(CoreError::ShapeMismatch(format!(
                "patch {} is {}x{}, manifest says {size}",
                rec.feature_rel_path().display(),
                patch.width,
                patch.height
            )));
        }
        for y in 0..size {
            for x in 0..size {
                let i = (y * size + x) * 3;
                for c in 0..3 {
                    sums[(c * size + y) * size + x] += patch.pixels[i + c] as f64;
                }
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(CoreError::EmptyTrainingSet);
    }

    let values = sums.iter().map(|&s| s / count as f64).collect();
    Ok(MeanImage {
        width: size,
        height: size,
        values,
    })
}

/// Writes the mean as raw little-endian f32 with a JSON shape sidecar.
pub fn save_mean_image(path: &Path, mean: &MeanImage) -> Result<()> {
    let mut file = BufWriter::new(File::create(path).map_err(io_at(path))?);
    for &v in &mean.values {
        file.write_all(&(v as f32).to_le_bytes())?;
    }
    file.flush()?;

    let sidecar = MeanSidecar {
        width: mean.width,
        height: mean.height,
        channels: 3,
    };
    let sc = sidecar_path(path);
    let sidecar_file = BufWriter::new(File::create(&sc).map_err(io_at(&sc))?);
    serde_json::to_writer_pretty(sidecar_file, &sidecar)?;
    Ok(())
}

pub fn load_mean_image(path: &Path) -> Result<MeanImage> {
    let sc = sidecar_path(path);
    let sidecar_file = BufReader::new(File::open(&sc).map_err(io_at(&sc))?);
    let sidecar: MeanSidecar = serde_json::from_reader(sidecar_file)?;
    if sidecar.channels != 3 {
        return Err(CoreError::Decode(format!(
            "mean image must have 3 channels, sidecar says {}",
            sidecar.channels
        )));
    }

    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(io_at(path))?).read_to_end(&mut bytes)?;
    let expected = sidecar.width * sidecar.height * 3 * 4;
    if bytes.len() != expected {
        return Err(CoreError::Decode(format!(
            "mean image file is {} bytes, sidecar implies {expected}",
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok(MeanImage {
        width: sidecar.width,
        height: sidecar.height,
        values,
    })
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    PathBuf::from(s)
}

/// Subtracts the mean from a patch, producing the network's input layout.
pub fn normalize(patch: &RgbRaster, mean: &MeanImage) -> Result<ChwBuffer> {
    if patch.width != mean.width || patch.height != mean.height {
        return Err(CoreError::ShapeMismatch(format!(
            "patch {}x{} vs mean {}x{}",
            patch.width, patch.height, mean.width, mean.height
        )));
    }
    let (w, h) = (patch.width, patch.height);
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) * 3;
            for c in 0..3 {
                data[(c * h + y) * w + x] = (patch.pixels[i + c] as f64 - mean.value(c, x, y)) as f32;
            }
        }
    }
    Ok(ChwBuffer {
        channels: 3,
        height: h,
        width: w,
        data,
    })
}
