//! `stitch`: reassemble one slide's label patches into a whole-slide mask.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use serde_json::{json, Value};

use slideseg_core::patch::{stitch, Augmentation, PatchManifest};
use slideseg_core::raster::{load_mask, save_mask};

use crate::error::{CliError, Result};
use crate::{output, Cli};

#[derive(Debug, Args)]
pub struct StitchArgs {
    /// Patch manifest covering the slide.
    #[arg(long)]
    pub manifest: PathBuf,

    /// Directory holding the patch images the manifest refers to.
    #[arg(long)]
    pub patches_root: PathBuf,

    /// Slide to reassemble.
    #[arg(long)]
    pub slide_id: String,

    /// Output mask path.
    #[arg(long)]
    pub mask_out: PathBuf,
}

#[derive(Serialize)]
struct Resolved<'a> {
    seed: u64,
    deterministic: bool,
    manifest: &'a PathBuf,
    patches_root: &'a PathBuf,
    slide_id: &'a str,
    mask_out: &'a PathBuf,
}

pub fn run(cli: &Cli, args: &StitchArgs) -> Result<Value> {
    let manifest = PatchManifest::load(&args.manifest)?;
    let tiles: Vec<_> = manifest
        .records
        .iter()
        .filter(|r| r.slide_id == args.slide_id && r.augmentation == Augmentation::None)
        .collect();
    if tiles.is_empty() {
        return Err(CliError::Data(format!(
            "no patches for slide {} in {}",
            args.slide_id,
            args.manifest.display()
        )));
    }

    let mut pairs = Vec::with_capacity(tiles.len());
    for rec in tiles {
        let mask = load_mask(&args.patches_root.join(rec.label_rel_path()))?;
        pairs.push((rec.clone(), mask));
    }
    let stitched = stitch(&pairs)?;
    save_mask(&args.mask_out, &stitched)?;

    let resolved = Resolved {
        seed: cli.seed,
        deterministic: cli.deterministic,
        manifest: &args.manifest,
        patches_root: &args.patches_root,
        slide_id: &args.slide_id,
        mask_out: &args.mask_out,
    };
    output::write_config_sidecar(&args.mask_out, &resolved)?;

    eprintln!(
        "stitched {} tiles of {} into {}",
        pairs.len(),
        args.slide_id,
        args.mask_out.display(),
    );

    Ok(json!({
        "mask_out": args.mask_out,
        "width": stitched.width,
        "height": stitched.height,
        "tiles": pairs.len(),
        "config": output::config_value(&resolved)?,
    }))
}
