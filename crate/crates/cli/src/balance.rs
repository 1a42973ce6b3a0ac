//! `balance`: rebalance the training split of a patch dataset.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use serde_json::{json, Value};

use slideseg_core::balance::{balance_dataset, DEFAULT_BG_THRESHOLD};
use slideseg_core::patch::PatchManifest;

use crate::error::{CliError, Result};
use crate::{output, Cli};

#[derive(Debug, Args)]
pub struct BalanceArgs {
    /// Unbalanced patch manifest.
    #[arg(long)]
    pub manifest: PathBuf,

    /// Directory holding the patch images the manifest refers to.
    #[arg(long)]
    pub patches_root: PathBuf,

    /// Background fraction above which a training patch is dropped.
    #[arg(long, default_value_t = DEFAULT_BG_THRESHOLD)]
    pub bg_threshold: f64,

    /// Where to write the balanced manifest; defaults to the input path
    /// with a `.balanced.jsonl` extension.
    #[arg(long)]
    pub manifest_out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved<'a> {
    seed: u64,
    deterministic: bool,
    manifest: &'a PathBuf,
    patches_root: &'a PathBuf,
    bg_threshold: f64,
    manifest_out: &'a PathBuf,
}

pub fn run(cli: &Cli, args: &BalanceArgs) -> Result<Value> {
    if !(0.0..=1.0).contains(&args.bg_threshold) {
        return Err(CliError::Config(format!(
            "bg_threshold {} outside [0, 1]",
            args.bg_threshold
        )));
    }
    let manifest_out = args
        .manifest_out
        .clone()
        .unwrap_or_else(|| args.manifest.with_extension("balanced.jsonl"));

    let manifest = PatchManifest::load(&args.manifest)?;
    let (balanced, report) = balance_dataset(&manifest, &args.patches_root, args.bg_threshold)?;
    balanced.save(&manifest_out)?;

    let resolved = Resolved {
        seed: cli.seed,
        deterministic: cli.deterministic,
        manifest: &args.manifest,
        patches_root: &args.patches_root,
        bg_threshold: args.bg_threshold,
        manifest_out: &manifest_out,
    };
    output::write_config_dir(&args.patches_root, "balance", &resolved)?;

    eprintln!(
        "balanced training split: removed {} patches, added {} augmented copies",
        report.removed_patches, report.added_patches,
    );

    Ok(json!({
        "report": report,
        "patch_manifest": manifest_out,
        "config": output::config_value(&resolved)?,
    }))
}
