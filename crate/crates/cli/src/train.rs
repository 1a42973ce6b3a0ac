//! `train`: fit the multi-stride network on a balanced patch dataset.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use slideseg_core::mean::{compute_mean_image, load_mean_image, save_mean_image, MeanImage};
use slideseg_core::patch::PatchManifest;
use slideseg_nn::{train, MsfcnConfig, SgdConfig, TrainJob};

use crate::error::Result;
use crate::{output, Cli};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Network and optimizer settings as JSON; missing keys fall back to
    /// the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override the number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,

    /// Override the minibatch size.
    #[arg(long)]
    pub minibatch: Option<usize>,

    /// Override the initial learning rate.
    #[arg(long)]
    pub lr_start: Option<f64>,

    /// Override the final learning rate.
    #[arg(long)]
    pub lr_end: Option<f64>,

    /// Override the momentum coefficient.
    #[arg(long)]
    pub momentum: Option<f64>,

    /// Balanced patch manifest.
    #[arg(long)]
    pub manifest: PathBuf,

    /// Directory holding the patch images the manifest refers to.
    #[arg(long)]
    pub patches_root: PathBuf,

    /// Mean image path; computed from the training split and saved here
    /// when the file does not exist. Defaults to mean_image.bin under the
    /// patches root.
    #[arg(long)]
    pub mean: Option<PathBuf>,

    /// Where to write the trained checkpoint.
    #[arg(long)]
    pub checkpoint_out: PathBuf,

    /// Resume from an earlier checkpoint instead of fresh weights.
    #[arg(long)]
    pub warm_start: Option<PathBuf>,

    /// Optional per-iteration loss log.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub network: MsfcnConfig,
    pub sgd: SgdConfig,
}

#[derive(Serialize)]
struct Resolved<'a> {
    seed: u64,
    deterministic: bool,
    manifest: &'a PathBuf,
    patches_root: &'a PathBuf,
    mean: &'a PathBuf,
    checkpoint_out: &'a PathBuf,
    warm_start: &'a Option<PathBuf>,
    loss_csv: &'a Option<PathBuf>,
    #[serde(flatten)]
    config: &'a TrainConfig,
}

/// Loads the mean image, computing and saving it first if absent.
fn ensure_mean(path: &Path, manifest: &PatchManifest, patches_root: &Path) -> Result<MeanImage> {
    if path.exists() {
        return Ok(load_mean_image(path)?);
    }
    let mean = compute_mean_image(manifest, patches_root)?;
    save_mean_image(path, &mean)?;
    eprintln!("computed mean image from the training split: {}", path.display());
    Ok(mean)
}

pub fn run(cli: &Cli, args: &TrainArgs) -> Result<Value> {
    let mut config: TrainConfig = output::load_config(args.config.as_deref())?;
    if let Some(v) = args.epochs {
        config.sgd.epochs = v;
    }
    if let Some(v) = args.minibatch {
        config.sgd.minibatch = v;
    }
    if let Some(v) = args.lr_start {
        config.sgd.lr_start = v;
    }
    if let Some(v) = args.lr_end {
        config.sgd.lr_end = v;
    }
    if let Some(v) = args.momentum {
        config.sgd.momentum = v;
    }
    config.sgd.seed = cli.seed;
    config.sgd.validate()?;

    let manifest = PatchManifest::load(&args.manifest)?;
    let mean_path = args
        .mean
        .clone()
        .unwrap_or_else(|| args.patches_root.join("mean_image.bin"));
    let mean = ensure_mean(&mean_path, &manifest, &args.patches_root)?;

    let resolved = Resolved {
        seed: cli.seed,
        deterministic: cli.deterministic,
        manifest: &args.manifest,
        patches_root: &args.patches_root,
        mean: &mean_path,
        checkpoint_out: &args.checkpoint_out,
        warm_start: &args.warm_start,
        loss_csv: &args.loss_csv,
        config: &config,
    };
    let ckpt_dir = args
        .checkpoint_out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    output::write_config_dir(ckpt_dir, "train", &resolved)?;

    let job = TrainJob {
        config: config.network.clone(),
        manifest: &manifest,
        patches_root: &args.patches_root,
        mean: &mean,
        sgd: config.sgd.clone(),
        warm_start: args.warm_start.clone(),
        checkpoint_out: args.checkpoint_out.clone(),
        loss_csv: args.loss_csv.clone(),
    };
    let started = Instant::now();
    let summary = train(&job)?;
    let wall = started.elapsed().as_secs_f64();

    if let Some(miou) = summary.val_miou_per_epoch.last() {
        eprintln!(
            "trained {} iterations, final validation mIoU {:.4}",
            summary.iterations_run, miou
        );
    } else {
        eprintln!("trained {} iterations", summary.iterations_run);
    }

    Ok(json!({
        "checkpoint": args.checkpoint_out,
        "mean_image": mean_path,
        "iterations_run": summary.iterations_run,
        "parameter_count": summary.parameter_count,
        "first_loss": summary.first_loss(),
        "final_loss": summary.final_loss(),
        "val_miou_per_epoch": summary.val_miou_per_epoch,
        "wall_seconds": if cli.deterministic { Value::Null } else { json!(wall) },
        "config": output::config_value(&resolved)?,
    }))
}
