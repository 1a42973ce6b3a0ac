//! `overlay`: render a colour image of one class's prediction errors.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use serde_json::{json, Value};

use slideseg_core::breslow::error_overlay;
use slideseg_core::raster::{load_mask, save_raster, TissueClass};

use crate::error::{CliError, Result};
use crate::{output, Cli};

#[derive(Debug, Args)]
pub struct OverlayArgs {
    /// Ground-truth mask.
    #[arg(long)]
    pub truth: PathBuf,

    /// Predicted mask.
    #[arg(long)]
    pub pred: PathBuf,

    /// Class to highlight: background, tumour, epidermis, dermis, or ndi.
    #[arg(long, default_value = "tumour")]
    pub class: String,

    /// Output image path.
    #[arg(long)]
    pub image_out: PathBuf,
}

#[derive(Serialize)]
struct Resolved<'a> {
    seed: u64,
    deterministic: bool,
    truth: &'a PathBuf,
    pred: &'a PathBuf,
    class: &'a str,
    image_out: &'a PathBuf,
}

fn parse_class(name: &str) -> Result<TissueClass> {
    TissueClass::ALL
        .iter()
        .copied()
        .find(|c| c.name() == name)
        .ok_or_else(|| {
            CliError::Config(format!(
                "unknown tissue class {name:?}; expected one of background, tumour, epidermis, dermis, ndi"
            ))
        })
}

pub fn run(cli: &Cli, args: &OverlayArgs) -> Result<Value> {
    let class = parse_class(&args.class)?;
    let truth = load_mask(&args.truth)?;
    let pred = load_mask(&args.pred)?;
    let image = error_overlay(&truth, &pred, class)?;
    save_raster(&args.image_out, &image)?;

    let id = class as u8;
    let mut true_positive = 0u64;
    let mut false_positive = 0u64;
    let mut false_negative = 0u64;
    for (&t, &p) in truth.labels.iter().zip(&pred.labels) {
        match (t == id, p == id) {
            (true, true) => true_positive += 1,
            (false, true) => false_positive += 1,
            (true, false) => false_negative += 1,
            (false, false) => {}
        }
    }

    let resolved = Resolved {
        seed: cli.seed,
        deterministic: cli.deterministic,
        truth: &args.truth,
        pred: &args.pred,
        class: &args.class,
        image_out: &args.image_out,
    };
    output::write_config_sidecar(&args.image_out, &resolved)?;

    eprintln!(
        "{} overlay: {} true positive, {} false positive, {} false negative pixels",
        class.name(),
        true_positive,
        false_positive,
        false_negative,
    );

    Ok(json!({
        "image_out": args.image_out,
        "class": class.name(),
        "true_positive": true_positive,
        "false_positive": false_positive,
        "false_negative": false_negative,
        "config": output::config_value(&resolved)?,
    }))
}
