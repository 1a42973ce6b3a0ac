//! `infer`: segment whole slides with a trained checkpoint.

use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use slideseg_core::mean::load_mean_image;
use slideseg_core::raster::{load_raster, save_mask};
use slideseg_core::split::load_slide_manifest;
use slideseg_nn::{infer_slide, load_checkpoint};
use slideseg_nn::msfcn::build;

use crate::error::{CliError, Result};
use crate::{output, parse_split, Cli};

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Mean image the checkpoint was trained with.
    #[arg(long)]
    pub mean: PathBuf,

    /// Slide manifest; runs every slide in the chosen split.
    #[arg(long, required_unless_present = "image", conflicts_with = "image")]
    pub slides: Option<PathBuf>,

    /// Which split of the manifest to segment.
    #[arg(long, default_value = "test")]
    pub split: String,

    /// Segment a single image instead of a manifest split.
    #[arg(long)]
    pub image: Option<PathBuf>,

    /// Directory to write predicted masks into.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct Resolved<'a> {
    seed: u64,
    deterministic: bool,
    checkpoint: &'a PathBuf,
    mean: &'a PathBuf,
    slides: &'a Option<PathBuf>,
    split: &'a str,
    image: &'a Option<PathBuf>,
    out_dir: &'a PathBuf,
    patch_size: usize,
}

#[derive(Serialize)]
struct SlideResult {
    slide_id: String,
    mask: PathBuf,
    patches: usize,
    network_seconds: Value,
}

pub fn run(cli: &Cli, args: &InferArgs) -> Result<Value> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let graph = build(&ckpt.config)?;
    let mean = load_mean_image(&args.mean)?;
    let patch_size = ckpt.config.backbone.patch_size;

    // (slide_id, image path) pairs to segment.
    let jobs: Vec<(String, PathBuf)> = match (&args.image, &args.slides) {
        (Some(image), _) => {
            let stem = image
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "image".into());
            vec![(stem, image.clone())]
        }
        (None, Some(manifest_path)) => {
            let split = parse_split(&args.split)?;
            let slides = load_slide_manifest(manifest_path)?;
            let selected: Vec<_> = slides
                .iter()
                .filter(|r| r.split == Some(split))
                .map(|r| (r.slide_id.clone(), r.feature_path.clone()))
                .collect();
            if selected.is_empty() {
                return Err(CliError::Data(format!(
                    "no slides in the {} split of {}",
                    split.name(),
                    manifest_path.display()
                )));
            }
            selected
        }
        (None, None) => unreachable!("clap enforces --slides or --image"),
    };

    std::fs::create_dir_all(&args.out_dir)?;
    let results: Vec<SlideResult> = jobs
        .par_iter()
        .map(|(slide_id, path)| -> Result<SlideResult> {
            let raster = load_raster(path)?;
            let (mask, timing) = infer_slide(&graph, &ckpt.params, &raster, &mean, patch_size)?;
            let mask_path = args.out_dir.join(format!("{slide_id}_pred.png"));
            save_mask(&mask_path, &mask)?;
            Ok(SlideResult {
                slide_id: slide_id.clone(),
                mask: mask_path,
                patches: timing.patches,
                network_seconds: if cli.deterministic {
                    Value::Null
                } else {
                    json!(timing.network_seconds)
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let resolved = Resolved {
        seed: cli.seed,
        deterministic: cli.deterministic,
        checkpoint: &args.checkpoint,
        mean: &args.mean,
        slides: &args.slides,
        split: &args.split,
        image: &args.image,
        out_dir: &args.out_dir,
        patch_size,
    };
    output::write_config_dir(&args.out_dir, "infer", &resolved)?;

    let total_patches: usize = results.iter().map(|r| r.patches).sum();
    eprintln!(
        "segmented {} slides ({} patches) into {}",
        results.len(),
        total_patches,
        args.out_dir.display(),
    );

    Ok(json!({
        "out_dir": args.out_dir,
        "slides": results,
        "total_patches": total_patches,
        "config": output::config_value(&resolved)?,
    }))
}
