//! `evaluate`: score predicted masks against ground truth.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use serde::Serialize;
use serde_json::{json, Value};

use slideseg_core::metrics::{metrics, ConfusionMatrix, MetricBundle};
use slideseg_core::raster::load_mask;
use slideseg_core::split::load_slide_manifest;

use crate::error::{CliError, Result};
use crate::{output, parse_split, Cli};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Ground-truth mask for single-pair scoring.
    #[arg(long, requires = "pred", conflicts_with_all = ["slides", "pred_dir"])]
    pub truth: Option<PathBuf>,

    /// Predicted mask for single-pair scoring.
    #[arg(long)]
    pub pred: Option<PathBuf>,

    /// Slide manifest for dataset scoring.
    #[arg(long, requires = "pred_dir", required_unless_present = "truth")]
    pub slides: Option<PathBuf>,

    /// Directory of predicted masks named <slide_id>_pred.png.
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,

    /// Which split of the manifest to score.
    #[arg(long, default_value = "test")]
    pub split: String,

    /// Inference result JSON; joins per-slide network seconds into the table.
    #[arg(long)]
    pub timings: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved<'a> {
    seed: u64,
    deterministic: bool,
    truth: &'a Option<PathBuf>,
    pred: &'a Option<PathBuf>,
    slides: &'a Option<PathBuf>,
    pred_dir: &'a Option<PathBuf>,
    split: &'a str,
    timings: &'a Option<PathBuf>,
}

#[derive(Serialize)]
struct SlideScore {
    slide_id: String,
    #[serde(flatten)]
    bundle: MetricBundle,
    network_seconds: Option<f64>,
}

/// Pulls per-slide network seconds out of an `infer` result JSON.
fn load_timings(path: &PathBuf) -> Result<HashMap<String, f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)?;
    let mut seconds = HashMap::new();
    if let Some(slides) = value.get("slides").and_then(|v| v.as_array()) {
        for slide in slides {
            if let (Some(id), Some(s)) = (
                slide.get("slide_id").and_then(|v| v.as_str()),
                slide.get("network_seconds").and_then(|v| v.as_f64()),
            ) {
                seconds.insert(id.to_string(), s);
            }
        }
    }
    Ok(seconds)
}

fn score_pair(truth_path: &PathBuf, pred_path: &PathBuf) -> Result<MetricBundle> {
    let truth = load_mask(truth_path)?;
    let pred = load_mask(pred_path)?;
    let mut cm = ConfusionMatrix::for_tissue();
    cm.accumulate(&truth, &pred)?;
    Ok(metrics(&cm)?)
}

pub fn run(cli: &Cli, args: &EvaluateArgs) -> Result<Value> {
    let resolved = Resolved {
        seed: cli.seed,
        deterministic: cli.deterministic,
        truth: &args.truth,
        pred: &args.pred,
        slides: &args.slides,
        pred_dir: &args.pred_dir,
        split: &args.split,
        timings: &args.timings,
    };

    if let (Some(truth), Some(pred)) = (&args.truth, &args.pred) {
        let bundle = score_pair(truth, pred)?;
        eprintln!(
            "PA {:.4}  mPA {:.4}  mIoU {:.4}  fwIoU {:.4}  score {:.4}",
            bundle.pa, bundle.mpa, bundle.miou, bundle.fwiou, bundle.score,
        );
        let mut result = json!({
            "kind": "pair",
            "config": output::config_value(&resolved)?,
        });
        let bundle_value = serde_json::to_value(&bundle)?;
        for (k, v) in bundle_value.as_object().expect("bundle is an object") {
            result[k] = v.clone();
        }
        return Ok(result);
    }

    let manifest_path = args.slides.as_ref().expect("clap enforces --slides");
    let pred_dir = args.pred_dir.as_ref().expect("clap enforces --pred-dir");
    let split = parse_split(&args.split)?;
    let timings = match &args.timings {
        Some(path) => load_timings(path)?,
        None => HashMap::new(),
    };

    let slides = load_slide_manifest(manifest_path)?;
    let selected: Vec<_> = slides.iter().filter(|r| r.split == Some(split)).collect();
    if selected.is_empty() {
        return Err(CliError::Data(format!(
            "no slides in the {} split of {}",
            split.name(),
            manifest_path.display()
        )));
    }

    let started = Instant::now();
    let mut pooled = ConfusionMatrix::for_tissue();
    let mut scores = Vec::with_capacity(selected.len());
    for record in &selected {
        let truth = load_mask(&record.label_path)?;
        let pred_path = pred_dir.join(format!("{}_pred.png", record.slide_id));
        let pred = load_mask(&pred_path)?;
        let mut cm = ConfusionMatrix::for_tissue();
        cm.accumulate(&truth, &pred)?;
        pooled.merge(&cm);
        scores.push(SlideScore {
            slide_id: record.slide_id.clone(),
            bundle: metrics(&cm)?,
            network_seconds: timings.get(&record.slide_id).copied(),
        });
    }
    let pooled_bundle = metrics(&pooled)?;
    let wall = started.elapsed().as_secs_f64();

    let mean_of = |f: fn(&MetricBundle) -> f64| {
        scores.iter().map(|s| f(&s.bundle)).sum::<f64>() / scores.len() as f64
    };
    let mean_per_slide = json!({
        "pa": mean_of(|b| b.pa),
        "mpa": mean_of(|b| b.mpa),
        "miou": mean_of(|b| b.miou),
        "fwiou": mean_of(|b| b.fwiou),
        "score": mean_of(|b| b.score),
    });

    eprintln!(
        "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9}",
        "slide", "PA", "mPA", "mIoU", "fwIoU", "score", "net s"
    );
    for s in &scores {
        let net = match s.network_seconds {
            Some(v) => format!("{v:.3}"),
            None => "-".into(),
        };
        eprintln!(
            "{:<12} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>9}",
            s.slide_id, s.bundle.pa, s.bundle.mpa, s.bundle.miou, s.bundle.fwiou, s.bundle.score, net,
        );
    }
    eprintln!(
        "{:<12} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
        "pooled",
        pooled_bundle.pa,
        pooled_bundle.mpa,
        pooled_bundle.miou,
        pooled_bundle.fwiou,
        pooled_bundle.score,
    );

    Ok(json!({
        "kind": "dataset",
        "slides": scores,
        "pooled": pooled_bundle,
        "mean_per_slide": mean_per_slide,
        "wall_seconds": if cli.deterministic { Value::Null } else { json!(wall) },
        "config": output::config_value(&resolved)?,
    }))
}
