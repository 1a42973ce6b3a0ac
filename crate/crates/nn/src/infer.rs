//! Slide inference: tile, normalize, forward, argmax, stitch.

use std::path::Path;
use std::time::Instant;

use slideseg_core::mean::{normalize, MeanImage};
use slideseg_core::patch::{check_patch_size, crop_rgb_padded, grid_shape, stitch, Augmentation, PatchRecord};
use slideseg_core::raster::{class_histogram, LabelMask, RgbRaster};
use slideseg_core::split::Split;

use crate::checkpoint::load_checkpoint;
use crate::error::{NnError, Result};
use crate::graph::{Graph, Params, Phase};
use crate::msfcn::build;
use crate::tensor::Tensor;

/// Per-pixel argmax over class scores, one mask per batch sample.
/// Ties resolve to the lowest class id.
pub fn argmax_classes(scores: &Tensor<f32>) -> Result<Vec<LabelMask>> {
    let (n, c, h, w) = scores.shape();
    if c == 0 || c > slideseg_core::NUM_CLASSES {
        return Err(NnError::ShapeMismatch(format!(
            "cannot map {c} score channels onto tissue classes"
        )));
    }
    let mut masks = Vec::with_capacity(n);
    for s in 0..n {
        let mut labels = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut best = scores.at(s, 0, y, x);
                let mut best_ch = 0u8;
                for ch in 1..c {
                    let v = scores.at(s, ch, y, x);
                    if v > best {
                        best = v;
                        best_ch = ch as u8;
                    }
                }
                labels[y * w + x] = best_ch;
            }
        }
        masks.push(LabelMask::new(w, h, labels)?);
    }
    Ok(masks)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct InferTiming {
    pub patches: usize,
    /// Wall time summed from the moment each patch enters the network
    /// until its class mask is out.
    pub network_seconds: f64,
}

/// Runs the network over a whole slide in patch-size tiles and stitches
/// the per-tile argmax masks back to slide size.
pub fn infer_slide(
    graph: &Graph,
    params: &Params<f32>,
    raster: &RgbRaster,
    mean: &MeanImage,
    patch_size: usize,
) -> Result<(LabelMask, InferTiming)> {
    check_patch_size(patch_size)?;
    let (grid_w, grid_h) = grid_shape(raster.width, raster.height, patch_size)?;
    let mut tiles: Vec<(PatchRecord, LabelMask)> = Vec::with_capacity(grid_w * grid_h);
    let mut timing = InferTiming::default();
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            let origin_x = gx * patch_size;
            let origin_y = gy * patch_size;
            let tile = crop_rgb_padded(raster, origin_x, origin_y, patch_size);
            let chw = normalize(&tile, mean)?;
            let x = Tensor::from_vec(1, chw.channels, chw.height, chw.width, chw.data)?;

            let start = Instant::now();
            let fwd = graph.forward(params, &x, &mut Phase::Infer)?;
            let mask = argmax_classes(fwd.output(graph))?.remove(0);
            timing.network_seconds += start.elapsed().as_secs_f64();
            timing.patches += 1;

            let record = PatchRecord {
                slide_id: "inference".into(),
                grid_x: gx,
                grid_y: gy,
                origin_x,
                origin_y,
                size: patch_size,
                pad_x: (origin_x + patch_size).saturating_sub(raster.width),
                pad_y: (origin_y + patch_size).saturating_sub(raster.height),
                class_histogram: class_histogram(&mask),
                augmentation: Augmentation::None,
                split: Split::Test,
            };
            tiles.push((record, mask));
        }
    }
    let stitched = stitch(&tiles)?;
    Ok((stitched, timing))
}

/// Loads a checkpoint and rebuilds its graph, ready for `infer_slide`.
pub fn load_for_inference(path: &Path) -> Result<(Graph, Params<f32>)> {
    let ckpt = load_checkpoint(path)?;
    let graph = build(&ckpt.config)?;
    Ok((graph, ckpt.params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msfcn::{init_params, BackboneSpec, MsfcnConfig};
    use crate::sgd::zero_like;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_graph() -> (Graph, MsfcnConfig) {
        let config = MsfcnConfig {
            backbone: BackboneSpec {
                stage_widths: vec![2, 2, 2, 4, 4],
                convs_per_stage: vec![1, 1, 1, 1, 1],
                patch_size: 32,
                fc6_channels: 8,
                fc7_channels: 8,
            },
            ..MsfcnConfig::default()
        };
        (crate::msfcn::build(&config).unwrap(), config)
    }

    fn flat_mean(size: usize) -> MeanImage {
        MeanImage {
            width: size,
            height: size,
            values: vec![0.0; 3 * size * size],
        }
    }

    #[test]
    fn ties_resolve_to_lowest_class_id() {
        let mut scores = Tensor::<f32>::zeros(1, 3, 1, 2);
        // Pixel 0: classes 1 and 2 tie above class 0.
        scores.set(0, 1, 0, 0, 5.0);
        scores.set(0, 2, 0, 0, 5.0);
        // Pixel 1: class 2 wins outright.
        scores.set(0, 2, 0, 1, 1.0);
        let masks = argmax_classes(&scores).unwrap();
        assert_eq!(masks[0].labels, vec![1, 2]);
    }

    #[test]
    fn bias_only_network_yields_a_constant_mask() {
        let (graph, _) = tiny_graph();
        let mut params = init_params::<f32>(&graph, 0);
        for t in params.values_mut() {
            for v in t.data.iter_mut() {
                *v = 0.0;
            }
        }
        // Keep the bilinear upsampling kernels so the class-3 bias reaches
        // the output; every other parameter is zero.
        let fresh = init_params::<f32>(&graph, 0);
        for name in ["upscore32_w", "upscore2_a_w", "upscore16_w", "upscore2_b_w", "upscore8_w"] {
            params.insert(name.into(), fresh[name].clone());
        }
        params.get_mut("score_fr_b").unwrap().data[3] = 1.0;

        let raster = RgbRaster::filled(64, 48, [100, 100, 100], 0.25);
        let (mask, timing) = infer_slide(&graph, &params, &raster, &flat_mean(32), 32).unwrap();
        assert_eq!((mask.width, mask.height), (64, 48));
        assert!(mask.labels.iter().all(|&v| v == 3));
        assert_eq!(timing.patches, 4);
        assert!(timing.network_seconds > 0.0);
    }

    #[test]
    fn stitched_mask_matches_slide_size_with_padding() {
        let (graph, _) = tiny_graph();
        let params = init_params::<f32>(&graph, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut raster = RgbRaster::filled(70, 50, [0, 0, 0], 0.25);
        for v in raster.pixels.iter_mut() {
            *v = rng.gen();
        }
        let (mask, timing) = infer_slide(&graph, &params, &raster, &flat_mean(32), 32).unwrap();
        assert_eq!((mask.width, mask.height), (70, 50));
        assert_eq!(timing.patches, 6);
        assert!(mask.labels.iter().all(|&v| v < 5));
    }

    #[test]
    fn inference_is_deterministic() {
        let (graph, _) = tiny_graph();
        let params = init_params::<f32>(&graph, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut raster = RgbRaster::filled(64, 64, [0, 0, 0], 0.25);
        for v in raster.pixels.iter_mut() {
            *v = rng.gen();
        }
        let (a, _) = infer_slide(&graph, &params, &raster, &flat_mean(32), 32).unwrap();
        let (b, _) = infer_slide(&graph, &params, &raster, &flat_mean(32), 32).unwrap();
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn checkpoint_roundtrip_feeds_inference() {
        let (graph, config) = tiny_graph();
        let params = init_params::<f32>(&graph, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        crate::checkpoint::save_checkpoint(
            &path,
            &crate::checkpoint::Checkpoint {
                config,
                params: params.clone(),
                momentum: Some(zero_like(&params)),
                state: Default::default(),
            },
        )
        .unwrap();
        let (graph2, params2) = load_for_inference(&path).unwrap();
        let raster = RgbRaster::filled(32, 32, [30, 60, 90], 0.25);
        let (a, _) = infer_slide(&graph, &params, &raster, &flat_mean(32), 32).unwrap();
        let (b, _) = infer_slide(&graph2, &params2, &raster, &flat_mean(32), 32).unwrap();
        assert_eq!(a.labels, b.labels);
    }
}
