//! Patch-grid extraction, the patch manifest, and stitched reassembly of
//! per-patch predictions into whole-slide masks.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_at, CoreError, Result};
use crate::raster::{
    class_histogram, load_mask, load_raster, save_mask, save_raster, LabelMask, RgbRaster,
    NUM_CLASSES,
};
use crate::split::{SlideRecord, Split};

/// Geometric transform applied to an oversampled patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    None,
    FlipLr,
    FlipTb,
    Rot90,
    Rot270,
}

impl Augmentation {
    pub const TRANSFORMS: [Augmentation; 4] = [
        Augmentation::FlipLr,
        Augmentation::FlipTb,
        Augmentation::Rot90,
        Augmentation::Rot270,
    ];

    /// Filename suffix; `None` for the untransformed patch.
    pub fn suffix(self) -> Option<&'static str> {
        match self {
            Augmentation::None => None,
            Augmentation::FlipLr => Some("flip_lr"),
            Augmentation::FlipTb => Some("flip_tb"),
            Augmentation::Rot90 => Some("rot90"),
            Augmentation::Rot270 => Some("rot270"),
        }
    }
}

/// One tile of a slide's patch grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub slide_id: String,
    pub grid_x: usize,
    pub grid_y: usize,
    pub origin_x: usize,
    pub origin_y: usize,
    pub size: usize,
    /// Zero-padding added on the right/bottom to fill the tile.
    pub pad_x: usize,
    pub pad_y: usize,
    pub class_histogram: [u64; NUM_CLASSES],
    pub augmentation: Augmentation,
    pub split: Split,
}

impl PatchRecord {
    fn stem(&self) -> String {
        match self.augmentation.suffix() {
            Some(sfx) => format!("{}_{}_{}", self.grid_x, self.grid_y, sfx),
            None => format!("{}_{}", self.grid_x, self.grid_y),
        }
    }

    /// Feature patch location relative to the patches root.
    pub fn feature_rel_path(&self) -> PathBuf {
        PathBuf::from(self.split.name())
            .join(&self.slide_id)
            .join(format!("{}.png", self.stem()))
    }

    /// Label patch location relative to the patches root.
    pub fn label_rel_path(&self) -> PathBuf {
        PathBuf::from(self.split.name())
            .join(&self.slide_id)
            .join(format!("{}_mask.png", self.stem()))
    }
}

/// The patch dataset: every tile of every slide plus dataset-level state.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchManifest {
    pub patch_size: usize,
    pub balanced: bool,
    pub mean_image_ref: Option<PathBuf>,
    pub records: Vec<PatchRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestHeader {
    patch_size: usize,
    balanced: bool,
    mean_image_ref: Option<PathBuf>,
    class_totals: ClassTotals,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct ClassTotals {
    train: [u64; NUM_CLASSES],
    val: [u64; NUM_CLASSES],
    test: [u64; NUM_CLASSES],
}

impl PatchManifest {
    pub fn new(patch_size: usize) -> PatchManifest {
        PatchManifest {
            patch_size,
            balanced: false,
            mean_image_ref: None,
            records: Vec::new(),
        }
    }

    /// Summed class histogram over one split's records.
    pub fn class_totals(&self, split: Split) -> [u64; NUM_CLASSES] {
        let mut totals = [0u64; NUM_CLASSES];
        for rec in self.records.iter().filter(|r| r.split == split) {
            for (t, h) in totals.iter_mut().zip(&rec.class_histogram) {
                *t += h;
            }
        }
        totals
    }

    fn totals(&self) -> ClassTotals {
        ClassTotals {
            train: self.class_totals(Split::Train),
            val: self.class_totals(Split::Val),
            test: self.class_totals(Split::Test),
        }
    }

    /// Writes the manifest as JSON lines: a header, then one record per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = BufWriter::new(File::create(path).map_err(io_at(path))?);
        let header = ManifestHeader {
            patch_size: self.patch_size,
            balanced: self.balanced,
            mean_image_ref: self.mean_image_ref.clone(),
            class_totals: self.totals(),
        };
        serde_json::to_writer(&mut file, &header)?;
        file.write_all(b"\n")?;
        for rec in &self.records {
            serde_json::to_writer(&mut file, rec)?;
            file.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PatchManifest> {
        let file = BufReader::new(File::open(path).map_err(io_at(path))?);
        let mut lines = file.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| CoreError::Decode("empty manifest".into()))??;
        let header: ManifestHeader = serde_json::from_str(&header_line)?;

        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str::<PatchRecord>(&line)?);
        }

        let manifest = PatchManifest {
            patch_size: header.patch_size,
            balanced: header.balanced,
            mean_image_ref: header.mean_image_ref,
            records,
        };
        if manifest.records.iter().any(|r| r.size != manifest.patch_size) {
            return Err(CoreError::Decode(
                "manifest contains records of a different patch size".into(),
            ));
        }
        if header.class_totals != manifest.totals() {
            return Err(CoreError::Decode(
                "manifest header class totals do not match its records".into(),
            ));
        }
        Ok(manifest)
    }
}

/// Validates the network-stride constraint on the patch size.
pub fn check_patch_size(patch_size: usize) -> Result<()> {
    if patch_size < 32 || !patch_size.is_multiple_of(32) {
        return Err(CoreError::BadPatchSize(patch_size));
    }
    Ok(())
}

/// Tile counts of the non-overlapping grid covering a slide.
pub fn grid_shape(width: usize, height: usize, patch_size: usize) -> Result<(usize, usize)> {
    check_patch_size(patch_size)?;
    if width < patch_size || height < patch_size {
        return Err(CoreError::SlideSmallerThanPatch {
            width,
            height,
            patch_size,
        });
    }
    Ok((width.div_ceil(patch_size), height.div_ceil(patch_size)))
}

/// Copies the tile at `(x0, y0)` out of a raster, zero-padding past the edge.
pub fn crop_rgb_padded(raster: &RgbRaster, x0: usize, y0: usize, size: usize) -> RgbRaster {
    let mut pixels = vec![0u8; size * size * 3];
    let copy_w = size.min(raster.width.saturating_sub(x0));
    let copy_h = size.min(raster.height.saturating_sub(y0));
    for y in 0..copy_h {
        let src = ((y0 + y) * raster.width + x0) * 3;
        let dst = y * size * 3;
        pixels[dst..dst + copy_w * 3].copy_from_slice(&raster.pixels[src..src + copy_w * 3]);
    }
    RgbRaster::new(size, size, pixels, raster.microns_per_pixel).expect("consistent by construction")
}

/// Copies the tile at `(x0, y0)` out of a mask, padding with background.
pub fn crop_mask_padded(mask: &LabelMask, x0: usize, y0: usize, size: usize) -> LabelMask {
    let mut labels = vec![0u8; size * size];
    let copy_w = size.min(mask.width.saturating_sub(x0));
    let copy_h = size.min(mask.height.saturating_sub(y0));
    for y in 0..copy_h {
        let src = (y0 + y) * mask.width + x0;
        let dst = y * size;
        labels[dst..dst + copy_w].copy_from_slice(&mask.labels[src..src + copy_w]);
    }
    LabelMask::new(size, size, labels).expect("consistent by construction")
}

/// Cuts one slide into its patch grid, writing feature/label PNG pairs under
/// `patches_root` and returning their records.
pub fn extract_patches(
    slide: &SlideRecord,
    patch_size: usize,
    patches_root: &Path,
) -> Result<Vec<PatchRecord>> {
    let split = slide.split.ok_or_else(|| {
        CoreError::InvalidInput(format!("slide {} has no split assigned", slide.slide_id))
    })?;
    let raster = load_raster(&slide.feature_path)?;
    let mask = load_mask(&slide.label_path)?;
    if raster.width != mask.width || raster.height != mask.height {
        return Err(CoreError::ShapeMismatch(format!(
            "slide {}: feature {}x{} vs label {}x{}",
            slide.slide_id, raster.width, raster.height, mask.width, mask.height
        )));
    }
    let (tiles_x, tiles_y) = grid_shape(raster.width, raster.height, patch_size)?;

    let dir = patches_root.join(split.name()).join(&slide.slide_id);
    std::fs::create_dir_all(&dir)?;

    let mut records = Vec::with_capacity(tiles_x * tiles_y);
    for gy in 0..tiles_y {
        for gx in 0..tiles_x {
            let x0 = gx * patch_size;
            let y0 = gy * patch_size;
            let feature = crop_rgb_padded(&raster, x0, y0, patch_size);
            let label = crop_mask_padded(&mask, x0, y0, patch_size);

            let record = PatchRecord {
                slide_id: slide.slide_id.clone(),
                grid_x: gx,
                grid_y: gy,
                origin_x: x0,
                origin_y: y0,
                size: patch_size,
                pad_x: (x0 + patch_size).saturating_sub(raster.width),
                pad_y: (y0 + patch_size).saturating_sub(raster.height),
                class_histogram: class_histogram(&label),
                augmentation: Augmentation::None,
                split,
            };
            save_raster(&patches_root.join(record.feature_rel_path()), &feature)?;
            save_mask(&patches_root.join(record.label_rel_path()), &label)?;
            records.push(record);
        }
    }
    Ok(records)
}

/// Reassembles per-patch predictions into a slide-size mask, cropping the
/// padded remainder. The grid must be complete, unaugmented, and from a
/// single slide.
pub fn stitch(predictions: &[(PatchRecord, LabelMask)]) -> Result<LabelMask> {
    let first = predictions
        .first()
        .map(|(r, _)| r)
        .ok_or_else(|| CoreError::InvalidInput("stitch called with no tiles".into()))?;
    let slide_id = &first.slide_id;
    let size = first.size;

    let mut tiles_x = 0;
    let mut tiles_y = 0;
    let mut width = 0;
    let mut height = 0;
    for (rec, mask) in predictions {
        if rec.augmentation != Augmentation::None {
            return Err(CoreError::InvalidInput(format!(
                "stitch requires unaugmented tiles, got {:?} at ({}, {})",
                rec.augmentation, rec.grid_x, rec.grid_y
            )));
        }
        if rec.slide_id != *slide_id || rec.size != size {
            return Err(CoreError::InvalidInput(
                "stitch tiles must come from one slide at one patch size".into(),
            ));
        }
        if mask.width != size || mask.height != size {
            return Err(CoreError::ShapeMismatch(format!(
                "tile ({}, {}) mask is {}x{}, expected {size}x{size}",
                rec.grid_x, rec.grid_y, mask.width, mask.height
            )));
        }
        tiles_x = tiles_x.max(rec.grid_x + 1);
        tiles_y = tiles_y.max(rec.grid_y + 1);
        width = width.max(rec.origin_x + size - rec.pad_x);
        height = height.max(rec.origin_y + size - rec.pad_y);
    }

    let mut seen = HashSet::new();
    for (rec, _) in predictions {
        if !seen.insert((rec.grid_x, rec.grid_y)) {
            return Err(CoreError::DuplicateTile {
                gx: rec.grid_x,
                gy: rec.grid_y,
            });
        }
    }
    for gy in 0..tiles_y {
        for gx in 0..tiles_x {
            if !seen.contains(&(gx, gy)) {
                return Err(CoreError::MissingTile { gx, gy });
            }
        }
    }

    let mut labels = vec![0u8; width * height];
    for (rec, mask) in predictions {
        let copy_w = size - rec.pad_x;
        let copy_h = size - rec.pad_y;
        for y in 0..copy_h {
            let src = y * size;
            let dst = (rec.origin_y + y) * width + rec.origin_x;
            labels[dst..dst + copy_w].copy_from_slice(&mask.labels[src..src + copy_w]);
        }
    }
    LabelMask::new(width, height, labels)
}
