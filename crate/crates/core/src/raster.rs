//! Raster primitives: RGB feature images, indexed label masks, and the
//! fixed five-class tissue palette.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_at, CoreError, Result};

/// Number of tissue classes.
pub const NUM_CLASSES: usize = 5;

/// Physical scale assumed when a slide has no sidecar metadata, in µm/px.
pub const DEFAULT_MICRONS_PER_PIXEL: f64 = 0.25;

/// Tissue classes in palette order; the discriminant is the class id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum TissueClass {
    Background = 0,
    Tumour = 1,
    Epidermis = 2,
    Dermis = 3,
    Ndi = 4,
}

impl TissueClass {
    pub const ALL: [TissueClass; NUM_CLASSES] = [
        TissueClass::Background,
        TissueClass::Tumour,
        TissueClass::Epidermis,
        TissueClass::Dermis,
        TissueClass::Ndi,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<TissueClass> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TissueClass::Background => "background",
            TissueClass::Tumour => "tumour",
            TissueClass::Epidermis => "epidermis",
            TissueClass::Dermis => "dermis",
            TissueClass::Ndi => "ndi",
        }
    }

    pub fn display_color(self) -> [u8; 3] {
        PALETTE[self as usize]
    }
}

/// Display colors indexed by class id.
pub const PALETTE: [[u8; 3]; NUM_CLASSES] = [
    [0, 0, 0],
    [255, 0, 0],
    [0, 255, 0],
    [255, 255, 0],
    [128, 128, 128],
];

/// An 8-bit RGB image with physical scale metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbRaster {
    pub width: usize,
    pub height: usize,
    /// Row-major interleaved RGB bytes, length `width * height * 3`.
    pub pixels: Vec<u8>,
    pub microns_per_pixel: f64,
}

impl RgbRaster {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<u8>,
        microns_per_pixel: f64,
    ) -> Result<RgbRaster> {
        if pixels.len() != width * height * 3 {
            return Err(CoreError::ShapeMismatch(format!(
                "rgb buffer of {} bytes does not match {}x{}x3",
                pixels.len(),
                width,
                height
            )));
        }
        if microns_per_pixel <= 0.0 {
            return Err(CoreError::InvalidInput(format!(
                "microns_per_pixel must be positive, got {microns_per_pixel}"
            )));
        }
        Ok(RgbRaster {
            width,
            height,
            pixels,
            microns_per_pixel,
        })
    }

    pub fn filled(width: usize, height: usize, color: [u8; 3], microns_per_pixel: f64) -> RgbRaster {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&color);
        }
        RgbRaster::new(width, height, pixels, microns_per_pixel).expect("consistent by construction")
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// A label image storing one tissue-class id per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub width: usize,
    pub height: usize,
    /// Row-major class ids, length `width * height`.
    pub labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<LabelMask> {
        if labels.len() != width * height {
            return Err(CoreError::ShapeMismatch(format!(
                "label buffer of {} bytes does not match {}x{}",
                labels.len(),
                width,
                height
            )));
        }
        if let Some(bad) = labels.iter().find(|&&v| v as usize >= NUM_CLASSES) {
            return Err(CoreError::Decode(format!(
                "label value {bad} is not a tissue class id"
            )));
        }
        Ok(LabelMask {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, class: TissueClass) -> LabelMask {
        LabelMask {
            width,
            height,
            labels: vec![class.id(); width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> TissueClass {
        TissueClass::from_id(self.labels[y * self.width + x]).expect("validated at construction")
    }

    pub fn set(&mut self, x: usize, y: usize, class: TissueClass) {
        self.labels[y * self.width + x] = class.id();
    }

    /// Renders the mask with the display palette.
    pub fn colorize(&self, microns_per_pixel: f64) -> RgbRaster {
        let mut pixels = Vec::with_capacity(self.width * self.height * 3);
        for &id in &self.labels {
            pixels.extend_from_slice(&PALETTE[id as usize]);
        }
        RgbRaster::new(self.width, self.height, pixels, microns_per_pixel)
            .expect("consistent by construction")
    }
}

/// Per-slide sidecar metadata stored next to the feature raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideMeta {
    pub slide_id: String,
    pub patient_id: String,
    pub microns_per_pixel: f64,
}

/// Path of the metadata sidecar belonging to a slide file.
pub fn meta_path(slide_path: &Path) -> PathBuf {
    slide_path.with_extension("meta.json")
}

pub fn save_meta(slide_path: &Path, meta: &SlideMeta) -> Result<()> {
    let path = meta_path(slide_path);
    let file = BufWriter::new(File::create(&path).map_err(io_at(&path))?);
    serde_json::to_writer_pretty(file, meta)?;
    Ok(())
}

pub fn load_meta(slide_path: &Path) -> Result<Option<SlideMeta>> {
    let path = meta_path(slide_path);
    if !path.exists() {
        return Ok(None);
    }
    let file = BufReader::new(File::open(&path).map_err(io_at(&path))?);
    Ok(Some(serde_json::from_reader(file)?))
}

/// Loads an RGB feature raster, picking up `microns_per_pixel` from the
/// sidecar when present.
pub fn load_raster(path: &Path) -> Result<RgbRaster> {
    let mut decoder = png::Decoder::new(BufReader::new(File::open(path).map_err(io_at(path))?));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(decode_err)?;
    buf.truncate(info.buffer_size());

    let width = info.width as usize;
    let height = info.height as usize;
    let pixels = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => {
            buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect()
        }
        other => {
            return Err(CoreError::Decode(format!(
                "unsupported color type {other:?} for feature raster"
            )))
        }
    };

    let microns_per_pixel = load_meta(path)?
        .map(|m| m.microns_per_pixel)
        .unwrap_or(DEFAULT_MICRONS_PER_PIXEL);
    RgbRaster::new(width, height, pixels, microns_per_pixel)
}

/// Saves an RGB feature raster as an 8-bit RGB PNG.
pub fn save_raster(path: &Path, raster: &RgbRaster) -> Result<()> {
    let file = BufWriter::new(File::create(path).map_err(io_at(path))?);
    let mut encoder = png::Encoder::new(file, raster.width as u32, raster.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(&raster.pixels).map_err(encode_err)?;
    Ok(())
}

/// Loads a label mask from an 8-bit indexed PNG, keeping palette indices
/// as class ids.
pub fn load_mask(path: &Path) -> Result<LabelMask> {
    let mut decoder = png::Decoder::new(BufReader::new(File::open(path).map_err(io_at(path))?));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(decode_err)?;
    buf.truncate(info.buffer_size());

    if info.color_type != png::ColorType::Indexed || info.bit_depth != png::BitDepth::Eight {
        return Err(CoreError::Decode(format!(
            "label mask must be an 8-bit indexed png, got {:?} at {:?}",
            info.color_type, info.bit_depth
        )));
    }
    LabelMask::new(info.width as usize, info.height as usize, buf)
}

/// Saves a label mask as an 8-bit indexed PNG with the fixed palette.
pub fn save_mask(path: &Path, mask: &LabelMask) -> Result<()> {
    let file = BufWriter::new(File::create(path).map_err(io_at(path))?);
    let mut encoder = png::Encoder::new(file, mask.width as u32, mask.height as u32);
    encoder.set_color(png::ColorType::Indexed);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_palette(PALETTE.concat());
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(&mask.labels).map_err(encode_err)?;
    Ok(())
}

/// Counts pixels per class id.
pub fn class_histogram(mask: &LabelMask) -> [u64; NUM_CLASSES] {
    let mut counts = [0u64; NUM_CLASSES];
    for &id in &mask.labels {
        counts[id as usize] += 1;
    }
    counts
}

fn decode_err(e: png::DecodingError) -> CoreError {
    CoreError::Decode(e.to_string())
}

fn encode_err(e: png::EncodingError) -> CoreError {
    CoreError::Encode(e.to_string())
}
