//! Command-line front end for the slide segmentation pipeline.
//!
//! Each subcommand prints a JSON result on stdout (or to `--out`), logs
//! progress on stderr, and leaves a fully resolved config file next to
//! whatever it wrote. Runs are idempotent except `balance`, which refuses
//! to run twice over the same manifest. Inputs are never mutated.

mod balance;
mod breslow;
mod error;
mod evaluate;
mod infer;
mod kappa;
mod output;
mod overlay;
mod patchify;
mod stitch;
mod synth;
mod train;

pub use error::{CliError, Result};

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use slideseg_core::split::Split;

#[derive(Debug, Parser)]
#[command(
    name = "slideseg",
    version,
    about = "Whole-slide melanoma segmentation: synthesis, tiling, training, inference, and evaluation"
)]
pub struct Cli {
    /// Seed for every random choice in the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads; 0 means one per logical core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Single-threaded byte-reproducible mode; wall-clock fields are
    /// reported as null.
    #[arg(long, global = true)]
    pub deterministic: bool,

    /// Write the result JSON here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic slide dataset with patient-level splits.
    Synth(synth::SynthArgs),
    /// Tile slides into a fixed patch grid.
    Patchify(patchify::PatchifyArgs),
    /// Rebalance the training split by undersampling and augmentation.
    Balance(balance::BalanceArgs),
    /// Train the multi-stride network on balanced patches.
    Train(train::TrainArgs),
    /// Segment slides with a trained checkpoint.
    Infer(infer::InferArgs),
    /// Reassemble one slide's label patches into a whole-slide mask.
    Stitch(stitch::StitchArgs),
    /// Score predicted masks against ground truth.
    Evaluate(evaluate::EvaluateArgs),
    /// Measure tumour invasion depth from a segmentation mask.
    Breslow(breslow::BreslowArgs),
    /// Chance-corrected inter-rater agreement.
    Kappa(kappa::KappaArgs),
    /// Render a colour image of one class's prediction errors.
    Overlay(overlay::OverlayArgs),
}

pub fn run(cli: &Cli) -> Result<()> {
    init_threads(cli);
    let result = match &cli.command {
        Command::Synth(args) => synth::run(cli, args)?,
        Command::Patchify(args) => patchify::run(cli, args)?,
        Command::Balance(args) => balance::run(cli, args)?,
        Command::Train(args) => train::run(cli, args)?,
        Command::Infer(args) => infer::run(cli, args)?,
        Command::Stitch(args) => stitch::run(cli, args)?,
        Command::Evaluate(args) => evaluate::run(cli, args)?,
        Command::Breslow(args) => breslow::run(cli, args)?,
        Command::Kappa(args) => kappa::run(cli, args)?,
        Command::Overlay(args) => overlay::run(cli, args)?,
    };
    output::emit(cli, &result)
}

/// Sizes the global worker pool once per process. Deterministic mode pins
/// it to a single thread so work is ordered identically on every run.
fn init_threads(cli: &Cli) {
    let threads = if cli.deterministic { 1 } else { cli.threads };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if threads > 0 {
        builder = builder.num_threads(threads);
    }
    let _ = builder.build_global();
}

pub(crate) fn parse_split(name: &str) -> Result<Split> {
    match name {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(CliError::Config(format!(
            "unknown split {other:?}; expected train, val, or test"
        ))),
    }
}
