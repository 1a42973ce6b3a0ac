//! `breslow`: measure tumour invasion depth from a segmentation mask.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use serde_json::{json, Value};

use slideseg_core::breslow::{breslow, DEFAULT_WINDOW_RADIUS};
use slideseg_core::raster::{load_mask, DEFAULT_MICRONS_PER_PIXEL};

use crate::error::{CliError, Result};
use crate::{output, Cli};

#[derive(Debug, Args)]
pub struct BreslowArgs {
    /// Segmentation mask to measure.
    #[arg(long)]
    pub mask: PathBuf,

    /// Physical pixel pitch of the slide.
    #[arg(long, default_value_t = DEFAULT_MICRONS_PER_PIXEL)]
    pub microns_per_pixel: f64,

    /// Radius of the rolling window used to trace the tissue surface.
    #[arg(long, default_value_t = DEFAULT_WINDOW_RADIUS)]
    pub window_radius: f64,
}

#[derive(Serialize)]
struct Resolved<'a> {
    seed: u64,
    deterministic: bool,
    mask: &'a PathBuf,
    microns_per_pixel: f64,
    window_radius: f64,
}

pub fn run(cli: &Cli, args: &BreslowArgs) -> Result<Value> {
    if !args.microns_per_pixel.is_finite() || args.microns_per_pixel <= 0.0 {
        return Err(CliError::Config(format!(
            "microns_per_pixel {} must be positive",
            args.microns_per_pixel
        )));
    }
    if !args.window_radius.is_finite() || args.window_radius <= 0.0 {
        return Err(CliError::Config(format!(
            "window_radius {} must be positive",
            args.window_radius
        )));
    }

    let mask = load_mask(&args.mask)?;
    let result = breslow(&mask, args.microns_per_pixel, args.window_radius)?;

    eprintln!("breslow thickness: {:.1} µm", result.thickness_um);

    let resolved = Resolved {
        seed: cli.seed,
        deterministic: cli.deterministic,
        mask: &args.mask,
        microns_per_pixel: args.microns_per_pixel,
        window_radius: args.window_radius,
    };

    Ok(json!({
        "thickness_um": result.thickness_um,
        "deep_point": result.deep_point,
        "surface_point": result.surface_point,
        "main_mass_size": result.main_mass_size,
        "method_flags": result.method_flags,
        "config": output::config_value(&resolved)?,
    }))
}
