//! Training driver: minibatch SGD over normalized patches with per-epoch
//! validation mIoU, CSV loss logging, and warm starts from a checkpoint.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use slideseg_core::mean::{normalize, MeanImage};
use slideseg_core::metrics::{metrics, ConfusionMatrix};
use slideseg_core::patch::{PatchManifest, PatchRecord};
use slideseg_core::raster::{load_mask, load_raster, LabelMask};
use slideseg_core::split::Split;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainState};
use crate::error::{NnError, Result};
use crate::graph::{Params, Phase};
use crate::infer::argmax_classes;
use crate::msfcn::{build, MsfcnConfig};
use crate::ops::loss::{softmax_multinomial_loss, LabelBatch};
use crate::sgd::{sgd_step, zero_like, SgdConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct LossRow {
    pub epoch: usize,
    pub iteration: u64,
    pub lr: f64,
    pub train_loss: f64,
    /// Present on each epoch's final iteration.
    pub val_miou: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub iterations_run: u64,
    pub rows: Vec<LossRow>,
    pub val_miou_per_epoch: Vec<f64>,
    pub parameter_count: usize,
}

impl TrainSummary {
    pub fn first_loss(&self) -> Option<f64> {
        self.rows.first().map(|r| r.train_loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.train_loss)
    }

    /// Mean loss over the first and last `window` iterations.
    pub fn smoothed_endpoints(&self, window: usize) -> Option<(f64, f64)> {
        if self.rows.len() < window || window == 0 {
            return None;
        }
        let head: f64 = self.rows[..window].iter().map(|r| r.train_loss).sum();
        let tail: f64 = self.rows[self.rows.len() - window..]
            .iter()
            .map(|r| r.train_loss)
            .sum();
        Some((head / window as f64, tail / window as f64))
    }
}

pub struct TrainJob<'a> {
    pub config: MsfcnConfig,
    pub manifest: &'a PatchManifest,
    pub patches_root: &'a Path,
    pub mean: &'a MeanImage,
    pub sgd: SgdConfig,
    pub warm_start: Option<PathBuf>,
    pub checkpoint_out: PathBuf,
    pub loss_csv: Option<PathBuf>,
}

fn load_pair(
    root: &Path,
    record: &PatchRecord,
    mean: &MeanImage,
) -> Result<(Tensor<f32>, LabelMask)> {
    let raster = load_raster(&root.join(record.feature_rel_path()))?;
    let mask = load_mask(&root.join(record.label_rel_path()))?;
    let chw = normalize(&raster, mean)?;
    let x = Tensor::from_vec(1, chw.channels, chw.height, chw.width, chw.data)?;
    Ok((x, mask))
}

fn batch_of(pairs: &[&(Tensor<f32>, LabelMask)]) -> Result<(Tensor<f32>, LabelBatch)> {
    let (_, c, h, w) = pairs[0].0.shape();
    let mut x = Tensor::zeros(pairs.len(), c, h, w);
    for (i, (t, _)) in pairs.iter().enumerate() {
        x.sample_mut(i).copy_from_slice(t.sample(0));
    }
    let masks: Vec<&LabelMask> = pairs.iter().map(|(_, m)| m).collect();
    let labels = LabelBatch::from_masks(&masks)?;
    Ok((x, labels))
}

pub fn train(job: &TrainJob) -> Result<TrainSummary> {
    job.sgd.validate()?;
    let graph = build(&job.config)?;
    if job.manifest.patch_size != job.config.backbone.patch_size {
        return Err(NnError::InvalidConfig(format!(
            "manifest patches are {} px but the network expects {}",
            job.manifest.patch_size, job.config.backbone.patch_size
        )));
    }
    if !job.manifest.balanced {
        return Err(NnError::InvalidInput(
            "training manifest is not balanced; run the balancer first".into(),
        ));
    }
    let train_records: Vec<&PatchRecord> = job
        .manifest
        .records
        .iter()
        .filter(|r| r.split == Split::Train)
        .collect();
    let val_records: Vec<&PatchRecord> = job
        .manifest
        .records
        .iter()
        .filter(|r| r.split == Split::Val)
        .collect();
    if train_records.is_empty() {
        return Err(NnError::InvalidInput("manifest has no training patches".into()));
    }
    if val_records.is_empty() {
        return Err(NnError::InvalidInput("manifest has no validation patches".into()));
    }

    let (mut params, mut velocity, mut rng, seed, start_iter, start_epoch) =
        match &job.warm_start {
            Some(path) => {
                let ckpt = load_checkpoint(path)?;
                if ckpt.config != job.config {
                    return Err(NnError::CheckpointMismatch(
                        "checkpoint was trained with a different network config".into(),
                    ));
                }
                let velocity = ckpt.momentum.unwrap_or_else(|| zero_like(&ckpt.params));
                let mut rng = ChaCha8Rng::seed_from_u64(ckpt.state.rng_seed);
                rng.set_word_pos(ckpt.state.rng_word_pos);
                (
                    ckpt.params,
                    velocity,
                    rng,
                    ckpt.state.rng_seed,
                    ckpt.state.iteration,
                    ckpt.state.epoch,
                )
            }
            None => {
                let params: Params<f32> = crate::msfcn::init_params(&graph, job.sgd.seed);
                let velocity = zero_like(&params);
                let rng = ChaCha8Rng::seed_from_u64(job.sgd.seed);
                (params, velocity, rng, job.sgd.seed, 0, 0)
            }
        };

    let train_pairs: Vec<(Tensor<f32>, LabelMask)> = train_records
        .iter()
        .map(|r| load_pair(job.patches_root, r, job.mean))
        .collect::<Result<_>>()?;
    let val_pairs: Vec<(Tensor<f32>, LabelMask)> = val_records
        .iter()
        .map(|r| load_pair(job.patches_root, r, job.mean))
        .collect::<Result<_>>()?;

    let iters_per_epoch = train_pairs.len().div_ceil(job.sgd.minibatch) as u64;
    let total_iters = job.sgd.epochs as u64 * iters_per_epoch;

    let mut rows: Vec<LossRow> = Vec::new();
    let mut val_curve: Vec<f64> = Vec::new();
    let mut iteration = start_iter;
    for epoch in 0..job.sgd.epochs {
        let mut order: Vec<usize> = (0..train_pairs.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(job.sgd.minibatch) {
            let picked: Vec<&(Tensor<f32>, LabelMask)> =
                chunk.iter().map(|&i| &train_pairs[i]).collect();
            let (x, labels) = batch_of(&picked)?;
            let fwd = graph.forward(&params, &x, &mut Phase::Train(&mut rng))?;
            let (loss, d_scores) =
                softmax_multinomial_loss(fwd.output(&graph), &labels, None)?;
            let (grads, _) = graph.backward(&params, &fwd, &d_scores)?;
            let local_t = iteration - start_iter;
            let lr = job.sgd.learning_rate(local_t, total_iters);
            sgd_step(&mut params, &grads, &mut velocity, job.sgd.momentum, lr);
            iteration += 1;
            rows.push(LossRow {
                epoch: start_epoch as usize + epoch,
                iteration,
                lr,
                train_loss: loss,
                val_miou: None,
            });
        }

        let miou = validation_miou(&graph, &params, &val_pairs, job.config.classes)?;
        val_curve.push(miou);
        if let Some(last) = rows.last_mut() {
            last.val_miou = Some(miou);
        }
    }

    let state = TrainState {
        iteration,
        epoch: start_epoch + job.sgd.epochs as u64,
        rng_seed: seed,
        rng_word_pos: rng.get_word_pos(),
    };
    save_checkpoint(
        &job.checkpoint_out,
        &Checkpoint {
            config: job.config.clone(),
            params,
            momentum: Some(velocity),
            state,
        },
    )?;
    if let Some(csv) = &job.loss_csv {
        write_loss_csv(csv, &rows)?;
    }

    Ok(TrainSummary {
        iterations_run: iteration - start_iter,
        rows,
        val_miou_per_epoch: val_curve,
        parameter_count: graph.parameter_count(),
    })
}

fn validation_miou(
    graph: &crate::graph::Graph,
    params: &Params<f32>,
    val_pairs: &[(Tensor<f32>, LabelMask)],
    classes: usize,
) -> Result<f64> {
    let mut cm = ConfusionMatrix::new(classes);
    for (x, truth) in val_pairs {
        let fwd = graph.forward(params, x, &mut Phase::Infer)?;
        let pred = argmax_classes(fwd.output(graph))?;
        cm.accumulate(truth, &pred[0])?;
    }
    Ok(metrics(&cm)?.miou)
}

fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,iteration,lr,train_loss,val_miou")?;
    for r in rows {
        let miou = r.val_miou.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.iteration, r.lr, r.train_loss, miou
        )?;
    }
    out.flush()?;
    Ok(())
}
