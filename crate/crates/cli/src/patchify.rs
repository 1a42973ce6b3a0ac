//! `patchify`: tile every slide in a manifest into a fixed patch grid.

use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use slideseg_core::patch::{check_patch_size, extract_patches, PatchManifest};
use slideseg_core::split::{load_slide_manifest, Split};

use crate::error::Result;
use crate::{output, Cli};

#[derive(Debug, Args)]
pub struct PatchifyArgs {
    /// Slide manifest (slides.jsonl) produced by `synth` or assembled by hand.
    #[arg(long)]
    pub slides: PathBuf,

    /// Directory to write patch images and the patch manifest into.
    #[arg(long)]
    pub patches_root: PathBuf,

    /// Tile edge length in pixels.
    #[arg(long, default_value_t = 512)]
    pub patch_size: usize,
}

#[derive(Serialize)]
struct Resolved<'a> {
    seed: u64,
    deterministic: bool,
    slides: &'a PathBuf,
    patches_root: &'a PathBuf,
    patch_size: usize,
}

pub fn run(cli: &Cli, args: &PatchifyArgs) -> Result<Value> {
    check_patch_size(args.patch_size)?;
    let slides = load_slide_manifest(&args.slides)?;

    let per_slide: Vec<_> = slides
        .par_iter()
        .map(|slide| extract_patches(slide, args.patch_size, &args.patches_root))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let mut manifest = PatchManifest::new(args.patch_size);
    for records in per_slide {
        manifest.records.extend(records);
    }
    let manifest_path = args.patches_root.join("manifest.jsonl");
    manifest.save(&manifest_path)?;

    let resolved = Resolved {
        seed: cli.seed,
        deterministic: cli.deterministic,
        slides: &args.slides,
        patches_root: &args.patches_root,
        patch_size: args.patch_size,
    };
    output::write_config_dir(&args.patches_root, "patchify", &resolved)?;

    let count = |split: Split| manifest.records.iter().filter(|r| r.split == split).count();
    eprintln!(
        "extracted {} patches from {} slides into {}",
        manifest.records.len(),
        slides.len(),
        args.patches_root.display(),
    );

    Ok(json!({
        "patches": manifest.records.len(),
        "split_counts": {
            "train": count(Split::Train),
            "val": count(Split::Val),
            "test": count(Split::Test),
        },
        "patch_manifest": manifest_path,
        "config": output::config_value(&resolved)?,
    }))
}
