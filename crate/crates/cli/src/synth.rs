//! `synth`: generate a synthetic slide dataset with patient-level splits.

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use slideseg_core::split::Split;
use slideseg_core::synth::{generate_dataset, SurfaceWave, SynthSpec, TumourBlob};

use crate::error::Result;
use crate::{output, Cli};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator settings as JSON; missing keys fall back to the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Number of slides, one synthetic patient each.
    #[arg(long, short)]
    pub n: Option<usize>,

    /// Train,val,test patient fractions.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub ratios: Option<Vec<f64>>,

    /// Directory to create the dataset in.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_slides: usize,
    pub ratios: (f64, f64, f64),
    pub spec: SynthSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_slides: 10,
            ratios: (0.7, 0.15, 0.15),
            spec: default_spec(),
        }
    }
}

/// A desk-scale slide: wavy epidermis over dermis, one tumour mass, and a
/// couple of small distractor specks.
fn default_spec() -> SynthSpec {
    SynthSpec {
        width: 256,
        height: 256,
        surface_y_px: 40.0,
        epidermis_thickness_px: 24.0,
        surface_waviness: SurfaceWave {
            amplitude_px: 10.0,
            period_px: 128.0,
            phase: 0.0,
        },
        tumour_blobs: vec![TumourBlob {
            center_x: 128.0,
            depth_px: 64.0,
            radius_px: 48.0,
        }],
        ndi_specks: 2,
        texture_noise: 0.02,
        microns_per_pixel: slideseg_core::raster::DEFAULT_MICRONS_PER_PIXEL,
        seed: 0,
    }
}

#[derive(Serialize)]
struct Resolved<'a> {
    seed: u64,
    deterministic: bool,
    out_dir: &'a PathBuf,
    #[serde(flatten)]
    config: &'a SynthConfig,
}

pub fn run(cli: &Cli, args: &SynthArgs) -> Result<Value> {
    let mut config: SynthConfig = output::load_config(args.config.as_deref())?;
    if let Some(n) = args.n {
        config.n_slides = n;
    }
    if let Some(r) = &args.ratios {
        config.ratios = (r[0], r[1], r[2]);
    }

    let records = generate_dataset(
        config.n_slides,
        &config.spec,
        cli.seed,
        config.ratios,
        &args.out_dir,
    )?;

    let resolved = Resolved {
        seed: cli.seed,
        deterministic: cli.deterministic,
        out_dir: &args.out_dir,
        config: &config,
    };
    output::write_config_dir(&args.out_dir, "synth", &resolved)?;

    let count = |split: Split| {
        records
            .iter()
            .filter(|r| r.split == Some(split))
            .count()
    };
    eprintln!(
        "generated {} slides under {} ({} train / {} val / {} test)",
        records.len(),
        args.out_dir.display(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
    );

    Ok(json!({
        "out_dir": args.out_dir,
        "slides": records.len(),
        "split_counts": {
            "train": count(Split::Train),
            "val": count(Split::Val),
            "test": count(Split::Test),
        },
        "slide_manifest": args.out_dir.join("slides.jsonl"),
        "config": output::config_value(&resolved)?,
    }))
}
