//! Release gate, one test per shipping requirement: layer gradient
//! fidelity, metric and kappa oracles, fusion degeneracy, balancing rules,
//! patch round trips, a full synthetic training run, depth measurement
//! against generating geometry, the learning-rate schedule, and byte-level
//! determinism of the whole pipeline.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slideseg_core::balance::{
    balance_dataset, is_oversample_candidate, is_undersampled, select_oversample_candidates,
    DEFAULT_BG_THRESHOLD,
};
use slideseg_core::breslow::{breslow, DEFAULT_WINDOW_RADIUS};
use slideseg_core::metrics::{kappa_from_agreement, metrics, randolph_kappa, ConfusionMatrix, RaterTable};
use slideseg_core::patch::{extract_patches, stitch, Augmentation, PatchManifest, PatchRecord};
use slideseg_core::raster::{class_histogram, load_mask, save_mask, save_raster};
use slideseg_core::synth::{generate_slide, SurfaceWave, SynthSpec, TumourBlob};
use slideseg_core::{LabelMask, RgbRaster, SlideRecord, Split, TissueClass, NUM_CLASSES};
use slideseg_nn::gradcheck::{max_rel_error, numeric_grad, random_tensor, sum_weighted};
use slideseg_nn::graph::{Node, Op};
use slideseg_nn::ops;
use slideseg_nn::ops::LabelBatch;
use slideseg_nn::{build, init_params, Graph, MsfcnConfig, Params, Phase, SgdConfig, Tensor};

const GRAD_TOL: f64 = 1e-4;

// 1. Gradient fidelity: every layer's backward pass against central finite
//    differences in f64, five shapes each, under a minute.

#[test]
fn layer_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    // (n, ci, co, k, h, w, stride, pad)
    for &(n, ci, co, k, h, w, stride, pad) in &[
        (1usize, 1usize, 2usize, 3usize, 6usize, 6usize, 1usize, 1usize),
        (2, 3, 4, 3, 7, 5, 1, 1),
        (1, 2, 3, 1, 4, 4, 1, 0),
        (1, 3, 2, 5, 9, 9, 1, 2),
        (2, 2, 3, 3, 8, 6, 2, 1),
    ] {
        let label = format!("conv {n}x{ci}x{h}x{w} k{k} s{stride} p{pad}");
        let x: Tensor<f64> = random_tensor(&mut rng, n, ci, h, w, 1.0);
        let weight: Tensor<f64> = random_tensor(&mut rng, co, ci, k, k, 0.8);
        let bias: Tensor<f64> = random_tensor(&mut rng, co, 1, 1, 1, 0.5);
        let out = ops::conv_forward(&x, &weight, &bias, stride, pad).unwrap();
        let probe = probe_like(&mut rng, &out);

        let (dx, dw, db) = ops::conv_backward(&x, &weight, &bias, &probe, stride, pad).unwrap();
        let ndx = numeric_grad(
            |v| sum_weighted(&ops::conv_forward(v, &weight, &bias, stride, pad).unwrap(), &probe),
            &x,
        );
        assert!(max_rel_error(&dx, &ndx) < GRAD_TOL, "{label}: input gradient");
        let ndw = numeric_grad(
            |v| sum_weighted(&ops::conv_forward(&x, v, &bias, stride, pad).unwrap(), &probe),
            &weight,
        );
        assert!(max_rel_error(&dw, &ndw) < GRAD_TOL, "{label}: weight gradient");
        let ndb = numeric_grad(
            |v| sum_weighted(&ops::conv_forward(&x, &weight, v, stride, pad).unwrap(), &probe),
            &bias,
        );
        assert!(max_rel_error(&db, &ndb) < GRAD_TOL, "{label}: bias gradient");
    }

    // (n, ci, co, k, stride, h, w)
    for &(n, ci, co, k, stride, h, w) in &[
        (1usize, 1usize, 1usize, 4usize, 2usize, 3usize, 3usize),
        (1, 2, 3, 4, 2, 4, 3),
        (2, 3, 2, 2, 2, 3, 4),
        (1, 2, 2, 3, 1, 5, 5),
        (2, 1, 2, 6, 3, 3, 3),
    ] {
        let label = format!("deconv {n}x{ci}x{h}x{w} k{k} s{stride}");
        let x: Tensor<f64> = random_tensor(&mut rng, n, ci, h, w, 1.0);
        let weight: Tensor<f64> = random_tensor(&mut rng, ci, co, k, k, 0.8);
        let out = ops::deconv_forward(&x, &weight, stride).unwrap();
        let probe = probe_like(&mut rng, &out);

        let (dx, dw) = ops::deconv_backward(&x, &weight, &probe, stride).unwrap();
        let ndx = numeric_grad(
            |v| sum_weighted(&ops::deconv_forward(v, &weight, stride).unwrap(), &probe),
            &x,
        );
        assert!(max_rel_error(&dx, &ndx) < GRAD_TOL, "{label}: input gradient");
        let ndw = numeric_grad(
            |v| sum_weighted(&ops::deconv_forward(&x, v, stride).unwrap(), &probe),
            &weight,
        );
        assert!(max_rel_error(&dw, &ndw) < GRAD_TOL, "{label}: weight gradient");
    }

    // (n, c, h, w, th, tw)
    for &(n, c, h, w, th, tw) in &[
        (1usize, 1usize, 5usize, 5usize, 3usize, 3usize),
        (2, 3, 6, 4, 6, 2),
        (1, 2, 7, 7, 4, 5),
        (1, 4, 3, 8, 1, 1),
        (2, 2, 9, 5, 8, 5),
    ] {
        let label = format!("crop {n}x{c}x{h}x{w} to {th}x{tw}");
        let x: Tensor<f64> = random_tensor(&mut rng, n, c, h, w, 1.0);
        let (oy, ox) = ops::center_offsets(h, w, th, tw);
        let out = ops::crop_forward(&x, th, tw, oy, ox).unwrap();
        let probe = probe_like(&mut rng, &out);

        let dx = ops::crop_backward(x.dims(), oy, ox, &probe).unwrap();
        let ndx = numeric_grad(
            |v| sum_weighted(&ops::crop_forward(v, th, tw, oy, ox).unwrap(), &probe),
            &x,
        );
        assert!(max_rel_error(&dx, &ndx) < GRAD_TOL, "{label}: input gradient");
    }

    // (arity, n, c, h, w); weights include a zero and a negative entry
    for &(arity, n, c, h, w) in &[
        (2usize, 1usize, 1usize, 3usize, 3usize),
        (3, 2, 2, 4, 3),
        (1, 1, 3, 5, 2),
        (4, 1, 2, 2, 6),
        (2, 2, 1, 7, 4),
    ] {
        let label = format!("wsum of {arity} at {n}x{c}x{h}x{w}");
        let inputs: Vec<Tensor<f64>> =
            (0..arity).map(|_| random_tensor(&mut rng, n, c, h, w, 1.0)).collect();
        let weights: Vec<f64> = (0..arity)
            .map(|i| match i {
                0 => 0.0,
                1 => -1.3,
                _ => rng.gen_range(0.2..2.0),
            })
            .collect();
        let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
        let out = ops::wsum_forward(&refs, &weights).unwrap();
        let probe = probe_like(&mut rng, &out);

        let parts = ops::wsum_backward(&weights, &probe);
        for (i, analytic) in parts.iter().enumerate() {
            let numeric = numeric_grad(
                |v| {
                    let mut swapped: Vec<&Tensor<f64>> = inputs.iter().collect();
                    swapped[i] = v;
                    sum_weighted(&ops::wsum_forward(&swapped, &weights).unwrap(), &probe)
                },
                &inputs[i],
            );
            assert!(max_rel_error(analytic, &numeric) < GRAD_TOL, "{label}: input {i}");
        }
    }

    // Dropout in inference mode is the identity; its backward must be too.
    for &(n, c, h, w, rate) in &[
        (1usize, 1usize, 4usize, 4usize, 0.5f64),
        (2, 3, 3, 3, 0.9),
        (1, 2, 6, 2, 0.1),
        (1, 5, 2, 5, 0.75),
        (2, 1, 5, 4, 0.3),
    ] {
        let label = format!("dropout-off {n}x{c}x{h}x{w} rate {rate}");
        let graph = Graph {
            nodes: vec![
                Node { name: "in".into(), op: Op::Input, inputs: vec![] },
                Node { name: "drop".into(), op: Op::Dropout { rate }, inputs: vec![0] },
            ],
            params: vec![],
            output: 1,
        };
        graph.validate().unwrap();
        let params: Params<f64> = Params::new();
        let x: Tensor<f64> = random_tensor(&mut rng, n, c, h, w, 1.0);
        let fwd = graph.forward(&params, &x, &mut Phase::Infer).unwrap();
        let probe = probe_like(&mut rng, fwd.output(&graph));

        let (_, dx) = graph.backward(&params, &fwd, &probe).unwrap();
        let ndx = numeric_grad(
            |v| {
                let f = graph.forward(&params, v, &mut Phase::Infer).unwrap();
                sum_weighted(f.output(&graph), &probe)
            },
            &x,
        );
        assert!(max_rel_error(&dx, &ndx) < GRAD_TOL, "{label}");
    }

    for &(n, c, h, w) in &[
        (1usize, 2usize, 2usize, 2usize),
        (2, 3, 3, 2),
        (1, 5, 2, 3),
        (2, 4, 1, 4),
        (1, 3, 4, 4),
    ] {
        let label = format!("softmax loss {n}x{c}x{h}x{w}");
        let scores: Tensor<f64> = random_tensor(&mut rng, n, c, h, w, 2.0);
        let labels = LabelBatch {
            n,
            h,
            w,
            ids: (0..n * h * w).map(|_| rng.gen_range(0..c as u8)).collect(),
        };
        let (_, grad) = ops::softmax_multinomial_loss(&scores, &labels, None).unwrap();
        let ngrad = numeric_grad(
            |v| ops::softmax_multinomial_loss(v, &labels, None).unwrap().0,
            &scores,
        );
        assert!(max_rel_error(&grad, &ngrad) < GRAD_TOL, "{label}");
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "gradient checks took {elapsed:.1}s, budget 60s");
}

fn probe_like(rng: &mut ChaCha8Rng, out: &Tensor<f64>) -> Tensor<f64> {
    let (n, c, h, w) = out.shape();
    random_tensor(rng, n, c, h, w, 1.0)
}

// 2. Metric oracle: the suite against direct-formula recomputation on 100
//    random matrices, and the worked 2-class example with zero tolerance.

struct OracleBundle {
    pa: f64,
    mpa: f64,
    miou: f64,
    fwiou: f64,
    score: f64,
    per_class_iou: Vec<Option<f64>>,
}

/// Direct transcription of the formulas: PA = Σnᵢᵢ/N, per-class recall
/// nᵢᵢ/tᵢ and IoU nᵢᵢ/(tᵢ+pᵢ−nᵢᵢ), mPA/mIoU averaged over classes present
/// in the truth, fwIoU = Σtᵢ·IoUᵢ/N, score the mPA/mIoU mean.
fn oracle_metrics(rows: &[Vec<u64>]) -> OracleBundle {
    let k = rows.len();
    let row_sum = |i: usize| rows[i].iter().sum::<u64>();
    let col_sum = |j: usize| (0..k).map(|i| rows[i][j]).sum::<u64>();
    let total: u64 = (0..k).map(row_sum).sum();

    let pa = (0..k).map(|i| rows[i][i]).sum::<u64>() as f64 / total as f64;
    let mut recall_sum = 0.0;
    let mut iou_sum = 0.0;
    let mut fw_sum = 0.0;
    let mut counted = 0usize;
    let mut per_class_iou = vec![None; k];
    for i in 0..k {
        let union = row_sum(i) + col_sum(i) - rows[i][i];
        if union > 0 {
            per_class_iou[i] = Some(rows[i][i] as f64 / union as f64);
        }
        if row_sum(i) > 0 {
            counted += 1;
            recall_sum += rows[i][i] as f64 / row_sum(i) as f64;
            iou_sum += rows[i][i] as f64 / union as f64;
            fw_sum += row_sum(i) as f64 * (rows[i][i] as f64 / union as f64);
        }
    }
    let mpa = recall_sum / counted as f64;
    let miou = iou_sum / counted as f64;
    OracleBundle {
        pa,
        mpa,
        miou,
        fwiou: fw_sum / total as f64,
        score: (mpa + miou) / 2.0,
        per_class_iou,
    }
}

#[test]
fn metric_suite_matches_direct_formula_oracle() {
    const TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(202);

    for case in 0..100 {
        let mut rows: Vec<Vec<u64>> =
            (0..5).map(|_| (0..5).map(|_| rng.gen_range(0..100)).collect()).collect();
        if case % 4 == 0 {
            let gone = rng.gen_range(0..5);
            rows[gone] = vec![0; 5];
        }
        if case % 7 == 0 {
            let gone = rng.gen_range(0..5);
            for row in &mut rows {
                row[gone] = 0;
            }
        }
        if rows.iter().flatten().sum::<u64>() == 0 {
            rows[0][0] = 1;
        }

        let bundle = metrics(&ConfusionMatrix::from_rows(&rows).unwrap()).unwrap();
        let oracle = oracle_metrics(&rows);
        assert!((bundle.pa - oracle.pa).abs() < TOL, "case {case}: pa");
        assert!((bundle.mpa - oracle.mpa).abs() < TOL, "case {case}: mpa");
        assert!((bundle.miou - oracle.miou).abs() < TOL, "case {case}: miou");
        assert!((bundle.fwiou - oracle.fwiou).abs() < TOL, "case {case}: fwiou");
        assert!((bundle.score - oracle.score).abs() < TOL, "case {case}: score");
        for (i, (got, want)) in bundle.per_class_iou.iter().zip(&oracle.per_class_iou).enumerate() {
            match (got, want) {
                (None, None) => {}
                (Some(g), Some(w)) => assert!((g - w).abs() < TOL, "case {case}: iou[{i}]"),
                _ => panic!("case {case}: iou[{i}] presence mismatch: {got:?} vs {want:?}"),
            }
        }
    }

    // Worked 2-class example: 4 pixels, 3 correct, per-class IoUs 1/2 and
    // 2/3. PA is exactly 0.75 and the oracle must agree bit for bit.
    let rows = vec![vec![1u64, 1], vec![0, 2]];
    let bundle = metrics(&ConfusionMatrix::from_rows(&rows).unwrap()).unwrap();
    let oracle = oracle_metrics(&rows);
    assert_eq!(bundle.pa, 0.75);
    assert_eq!(bundle.pa, oracle.pa);
    assert_eq!(bundle.mpa, oracle.mpa);
    assert_eq!(bundle.miou, oracle.miou);
    assert_eq!(bundle.fwiou, oracle.fwiou);
    assert_eq!(bundle.score, oracle.score);

    // mIoU is exactly 7/12 in rational arithmetic: check by
    // cross-multiplication, then pin the float to within one final
    // rounding of the 7/12 literal (the mean of 1/2 and 2/3 rounds once).
    let union = |i: usize| {
        rows[i].iter().sum::<u64>() + (0..2).map(|r| rows[r][i]).sum::<u64>() - rows[i][i]
    };
    let (u0, u1) = (union(0) as u128, union(1) as u128);
    let (n00, n11) = (rows[0][0] as u128, rows[1][1] as u128);
    let (num, den) = (n00 * u1 + n11 * u0, 2 * u0 * u1);
    assert_eq!(num * 12, den * 7, "worked example mIoU is not 7/12");
    assert!((bundle.miou - 7.0 / 12.0).abs() <= 0.5 * f64::EPSILON);
}

// 3. Two raters at 75% observed agreement over two categories.

#[test]
fn two_rater_kappa_from_published_agreement_is_exact() {
    assert_eq!(kappa_from_agreement(0.75, 2), 0.5);

    // The same point reached through a concrete table: two raters agree on
    // three of four cases.
    let table = RaterTable::new(2, vec![vec![0, 0], vec![1, 1], vec![0, 0], vec![0, 1]]).unwrap();
    let (p_observed, kappa) = randolph_kappa(&table).unwrap();
    assert_eq!(p_observed, 0.75);
    assert_eq!(kappa, 0.5);
}

// 4. Fusion degeneracy: weights (1, 0, 0) on the full three-block network
//    must reproduce the single-stride network exactly, given shared weights.

#[test]
fn unit_fusion_on_first_block_matches_single_stride_network() {
    let mut cfg = MsfcnConfig::default();
    cfg.blocks[0].fusion_weight = 1.0;
    cfg.blocks[1].fusion_weight = 0.0;
    cfg.blocks[2].fusion_weight = 0.0;

    let full = build(&cfg).unwrap();
    let full_params: Params<f32> = init_params(&full, 99);
    let solo = build(&cfg.single_stride()).unwrap();
    let solo_params: Params<f32> = solo
        .params
        .iter()
        .map(|p| (p.name.clone(), full_params[&p.name].clone()))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for i in 0..10 {
        let size = [64usize, 96, 128][i % 3];
        let x: Tensor<f32> = random_tensor(&mut rng, 1, 3, size, size, 1.0);
        let a = full.forward(&full_params, &x, &mut Phase::Infer).unwrap();
        let b = solo.forward(&solo_params, &x, &mut Phase::Infer).unwrap();
        assert_eq!(
            a.output(&full).max_abs_diff(b.output(&solo)),
            0.0,
            "input {i} at {size}x{size}"
        );
    }
}

// 5. Balancing rules on a fixture that violates both undersampling rules
//    and contains every oversampling pattern.

/// 32x32 mask whose histogram matches the requested counts (out of 1024).
fn mask_with_counts(counts: &[(TissueClass, u64)]) -> LabelMask {
    let total: u64 = counts.iter().map(|&(_, n)| n).sum();
    assert_eq!(total, 1024, "fixture counts must fill the patch");
    let mut labels = Vec::with_capacity(1024);
    for &(class, n) in counts {
        labels.extend(std::iter::repeat_n(class.id(), n as usize));
    }
    LabelMask::new(32, 32, labels).unwrap()
}

fn materialize_patch(
    root: &Path,
    gx: usize,
    counts: &[(TissueClass, u64)],
    split: Split,
) -> PatchRecord {
    let label = mask_with_counts(counts);
    let feature = RgbRaster::filled(32, 32, [120, 120, 120], 0.25);
    let rec = PatchRecord {
        slide_id: "fixture".into(),
        grid_x: gx,
        grid_y: 0,
        origin_x: gx * 32,
        origin_y: 0,
        size: 32,
        pad_x: 0,
        pad_y: 0,
        class_histogram: class_histogram(&label),
        augmentation: Augmentation::None,
        split,
    };
    std::fs::create_dir_all(root.join(split.name()).join("fixture")).unwrap();
    save_raster(&root.join(rec.feature_rel_path()), &feature).unwrap();
    save_mask(&root.join(rec.label_rel_path()), &label).unwrap();
    rec
}

#[test]
fn balancing_fixture_clears_all_rule_violations() {
    use TissueClass::{Background, Dermis, Epidermis, Ndi, Tumour};
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    let undersampled: [&[(TissueClass, u64)]; 2] = [
        &[(Background, 1014), (Dermis, 10)],
        &[(Background, 614), (Ndi, 410)],
    ];
    let oversampled: [&[(TissueClass, u64)]; 5] = [
        &[(Epidermis, 1024)],
        &[(Background, 700), (Epidermis, 324)],
        &[(Background, 700), (Ndi, 200), (Epidermis, 124)],
        &[(Ndi, 700), (Epidermis, 324)],
        &[(Ndi, 700), (Background, 200), (Epidermis, 124)],
    ];
    let tumour_mass: [&[(TissueClass, u64)]; 2] = [
        &[(Tumour, 900), (Dermis, 124)],
        &[(Tumour, 1000), (Epidermis, 24)],
    ];

    let mut manifest = PatchManifest::new(32);
    let mut gx = 0;
    for counts in undersampled.iter().chain(&oversampled).chain(&tumour_mass) {
        manifest.records.push(materialize_patch(root, gx, counts, Split::Train));
        gx += 1;
    }
    manifest.records.push(materialize_patch(root, gx, &[(Background, 1020), (Dermis, 4)], Split::Val));

    for counts in &undersampled {
        assert!(is_undersampled(&class_histogram(&mask_with_counts(counts)), DEFAULT_BG_THRESHOLD));
    }
    for counts in &oversampled {
        let hist = class_histogram(&mask_with_counts(counts));
        assert!(is_oversample_candidate(&hist));
        assert!(!is_undersampled(&hist, DEFAULT_BG_THRESHOLD));
    }
    let candidates = select_oversample_candidates(&manifest);
    assert_eq!(candidates.len(), oversampled.len());

    let (balanced, report) = balance_dataset(&manifest, root, DEFAULT_BG_THRESHOLD).unwrap();

    assert_eq!(report.removed_patches, undersampled.len());
    assert_eq!(report.added_patches, 4 * candidates.len());

    // Rescan from the pixels on disk, not the manifest histograms.
    let mut train_seen = 0;
    for rec in balanced.records.iter().filter(|r| r.split == Split::Train) {
        train_seen += 1;
        let mask = load_mask(&root.join(rec.label_rel_path())).unwrap();
        let hist = class_histogram(&mask);
        assert_eq!(hist, rec.class_histogram, "stale histogram at grid_x {}", rec.grid_x);
        assert!(
            !is_undersampled(&hist, DEFAULT_BG_THRESHOLD),
            "undersampling violation survived at grid_x {} ({:?})",
            rec.grid_x,
            rec.augmentation
        );
    }
    assert_eq!(train_seen, 9 - 2 + 20);

    let before = report.ratio_tumour_epidermis_before.unwrap();
    let after = report.ratio_tumour_epidermis_after.unwrap();
    assert!(after < before, "tumour:epidermis ratio {before:.3} -> {after:.3} did not decrease");

    let val: Vec<_> = balanced.records.iter().filter(|r| r.split == Split::Val).collect();
    assert_eq!(val.len(), 1);
    assert_eq!(val[0].augmentation, Augmentation::None);
}

// 6. Patchify then stitch is the identity on label masks.

#[test]
fn patch_grid_round_trips_label_masks_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let dir = tempfile::tempdir().unwrap();

    let mut sizes: Vec<(usize, usize)> = vec![(512, 512)];
    while sizes.len() < 5 {
        let w = rng.gen_range(520..1400);
        let h = rng.gen_range(520..1400);
        if w % 512 == 0 || h % 512 == 0 {
            continue;
        }
        sizes.push((w, h));
    }

    for (i, &(w, h)) in sizes.iter().enumerate() {
        let labels: Vec<u8> = (0..w * h).map(|_| rng.gen_range(0..NUM_CLASSES as u8)).collect();
        let mask = LabelMask::new(w, h, labels).unwrap();
        let pixels: Vec<u8> = (0..w * h * 3).map(|_| rng.gen()).collect();
        let raster = RgbRaster::new(w, h, pixels, 0.25).unwrap();

        let slide_dir = dir.path().join(format!("slide{i}"));
        std::fs::create_dir_all(&slide_dir).unwrap();
        let feature_path = slide_dir.join("slide.png");
        let label_path = slide_dir.join("mask.png");
        save_raster(&feature_path, &raster).unwrap();
        save_mask(&label_path, &mask).unwrap();

        let record = SlideRecord {
            slide_id: format!("slide{i}"),
            patient_id: format!("case{i}"),
            feature_path,
            label_path,
            split: Some(Split::Test),
        };
        let patches_root = dir.path().join(format!("patches{i}"));
        let records = extract_patches(&record, 512, &patches_root).unwrap();
        assert_eq!(records.len(), w.div_ceil(512) * h.div_ceil(512));

        let tiles: Vec<(PatchRecord, LabelMask)> = records
            .iter()
            .map(|r| (r.clone(), load_mask(&patches_root.join(r.label_rel_path())).unwrap()))
            .collect();
        let stitched = stitch(&tiles).unwrap();
        assert_eq!(stitched, mask, "round trip failed for {w}x{h}");
    }
}

// 7. End-to-end: synthesize, balance, train the default three-stride
//    network at 128x128, infer the test split, and clear the IoU bars.

const SYNTH_SPEC: &str = r#"{
  "spec": {
    "width": 256, "height": 256,
    "surface_y_px": 72.0, "epidermis_thickness_px": 36.0,
    "surface_waviness": {"amplitude_px": 8.0, "period_px": 128.0, "phase": 0.0},
    "tumour_blobs": [{"center_x": 128.0, "depth_px": 84.0, "radius_px": 48.0}],
    "ndi_specks": 0, "texture_noise": 0.02,
    "microns_per_pixel": 0.25, "seed": 0
  }
}"#;

fn run_ok(cwd: &Path, args: &[&str]) -> serde_json::Value {
    let out = Command::new(env!("CARGO_BIN_EXE_slideseg"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("binary launches");
    assert!(
        out.status.success(),
        "slideseg {:?} exited with {:?}\n--- stdout ---\n{}\n--- stderr ---\n{}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    if out.stdout.is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::from_slice(&out.stdout).expect("result JSON on stdout")
    }
}

#[test]
fn synthetic_end_to_end_training_reaches_target_iou() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    std::fs::write(cwd.join("spec.json"), SYNTH_SPEC).unwrap();

    run_ok(cwd, &["--seed", "42", "synth", "--config", "spec.json", "--n", "10", "--out-dir", "slides"]);
    run_ok(cwd, &[
        "--seed", "42", "patchify",
        "--slides", "slides/slides.jsonl",
        "--patches-root", "patches",
        "--patch-size", "128",
    ]);
    run_ok(cwd, &[
        "--seed", "42", "balance",
        "--manifest", "patches/manifest.jsonl",
        "--patches-root", "patches",
    ]);

    let t0 = Instant::now();
    run_ok(cwd, &[
        "--seed", "42", "train",
        "--manifest", "patches/manifest.balanced.jsonl",
        "--patches-root", "patches",
        "--epochs", "20",
        "--checkpoint-out", "model.ckpt",
    ]);
    let train_secs = t0.elapsed().as_secs_f64();
    assert!(train_secs < 900.0, "training took {train_secs:.0}s, budget 900s");

    run_ok(cwd, &[
        "--seed", "42", "infer",
        "--checkpoint", "model.ckpt",
        "--mean", "patches/mean_image.bin",
        "--slides", "slides/slides.jsonl",
        "--split", "test",
        "--out-dir", "preds",
    ]);
    let eval = run_ok(cwd, &[
        "evaluate",
        "--slides", "slides/slides.jsonl",
        "--pred-dir", "preds",
        "--split", "test",
    ]);

    let miou = eval["pooled"]["miou"].as_f64().expect("pooled miou");
    let epidermis = eval["pooled"]["per_class_iou"][TissueClass::Epidermis as usize]
        .as_f64()
        .expect("epidermis IoU");
    assert!(miou >= 0.80, "pooled mIoU {miou:.4} below 0.80");
    assert!(epidermis >= 0.70, "epidermis IoU {epidermis:.4} below 0.70");
}

// 8. Depth estimates against the generating geometry: flat surfaces to a
//    pixel, sinusoidal ones to a pixel and a half.

#[test]
fn depth_estimates_track_generating_geometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for case in 0..20u64 {
        let flat = case < 10;
        let mpp = if case % 2 == 0 { 0.25 } else { 0.5 };
        let radius = rng.gen_range(16.0..36.0);
        let surface_y = rng.gen_range(34.0..56.0);
        let epidermis = rng.gen_range(12.0..26.0);
        let (amplitude, period, phase) = if flat {
            (0.0, 128.0, 0.0)
        } else {
            (rng.gen_range(4.0..12.0), rng.gen_range(96.0..200.0), rng.gen_range(0.0..TAU))
        };
        let spec = SynthSpec {
            width: 256,
            height: 256,
            surface_y_px: surface_y,
            epidermis_thickness_px: epidermis,
            surface_waviness: SurfaceWave { amplitude_px: amplitude, period_px: period, phase },
            tumour_blobs: vec![TumourBlob {
                center_x: rng.gen_range(radius + 4.0..252.0 - radius),
                depth_px: rng.gen_range(radius + 6.0..radius + 70.0),
                radius_px: radius,
            }],
            ndi_specks: if case % 3 == 0 { 2 } else { 0 },
            texture_noise: 0.02,
            microns_per_pixel: mpp,
            seed: case,
        };
        let (_, mask, analytic_um) = generate_slide(&spec).unwrap();
        let estimate = breslow(&mask, mpp, DEFAULT_WINDOW_RADIUS).unwrap();

        let tolerance_px = if flat { 1.0 } else { 1.5 };
        let error_um = (estimate.thickness_um - analytic_um).abs();
        assert!(
            error_um <= tolerance_px * mpp,
            "case {case} ({}): estimate {:.2}um vs analytic {:.2}um, error {:.2}um over {:.2}um budget",
            if flat { "flat" } else { "sinusoidal" },
            estimate.thickness_um,
            analytic_um,
            error_um,
            tolerance_px * mpp
        );
    }
}

// 9. Learning-rate schedule endpoints and exact midpoint.

#[test]
fn learning_rate_schedule_hits_published_endpoints() {
    let cfg = SgdConfig::default();
    for &total in &[2u64, 20, 720, 100_000] {
        let lr0 = cfg.learning_rate(0, total);
        let lr_t = cfg.learning_rate(total, total);
        assert!((lr0 - 1e-4).abs() / 1e-4 < 0.005, "lr(0) = {lr0:.6e} over {total}");
        assert!((lr_t - 1e-5).abs() / 1e-5 < 0.005, "lr(T) = {lr_t:.6e} over {total}");
        assert_eq!(cfg.learning_rate(total / 2, total), 5.5e-5, "midpoint over {total}");
    }
}

// 10. Two full pipeline runs with the same seed in deterministic mode must
//     leave byte-identical trees: checkpoints, masks, and reports.

const TINY_SPEC: &str = r#"{
  "n_slides": 6,
  "spec": {
    "width": 96, "height": 96,
    "surface_y_px": 24.0, "epidermis_thickness_px": 12.0,
    "surface_waviness": {"amplitude_px": 4.0, "period_px": 48.0, "phase": 0.0},
    "tumour_blobs": [{"center_x": 48.0, "depth_px": 30.0, "radius_px": 18.0}],
    "ndi_specks": 1, "texture_noise": 0.02,
    "microns_per_pixel": 0.25, "seed": 0
  }
}"#;

const TINY_NET: &str = r#"{
  "network": {
    "backbone": {
      "stage_widths": [4, 4, 8, 8, 8],
      "convs_per_stage": [1, 1, 1, 1, 1],
      "patch_size": 64,
      "fc6_channels": 16,
      "fc7_channels": 16
    }
  },
  "sgd": {"epochs": 2}
}"#;

fn full_deterministic_run(cwd: &Path) {
    std::fs::create_dir_all(cwd).unwrap();
    std::fs::write(cwd.join("spec.json"), TINY_SPEC).unwrap();
    std::fs::write(cwd.join("net.json"), TINY_NET).unwrap();
    let with = |extra: &[&'static str]| -> Vec<&'static str> {
        let mut args = vec!["--seed", "7", "--deterministic"];
        args.extend_from_slice(extra);
        args
    };
    run_ok(cwd, &with(&["synth", "--config", "spec.json", "--out-dir", "slides", "--out", "synth.result.json"]));
    run_ok(cwd, &with(&[
        "patchify", "--slides", "slides/slides.jsonl", "--patches-root", "patches",
        "--patch-size", "64", "--out", "patchify.result.json",
    ]));
    run_ok(cwd, &with(&[
        "balance", "--manifest", "patches/manifest.jsonl", "--patches-root", "patches",
        "--out", "balance.result.json",
    ]));
    run_ok(cwd, &with(&[
        "train", "--config", "net.json", "--manifest", "patches/manifest.balanced.jsonl",
        "--patches-root", "patches", "--checkpoint-out", "model.ckpt",
        "--loss-csv", "loss.csv", "--out", "train.result.json",
    ]));
    run_ok(cwd, &with(&[
        "infer", "--checkpoint", "model.ckpt", "--mean", "patches/mean_image.bin",
        "--slides", "slides/slides.jsonl", "--split", "test", "--out-dir", "preds",
        "--out", "infer.result.json",
    ]));
    run_ok(cwd, &with(&[
        "evaluate", "--slides", "slides/slides.jsonl", "--pred-dir", "preds",
        "--split", "test", "--out", "eval.result.json",
    ]));
    run_ok(cwd, &with(&[
        "stitch", "--manifest", "patches/manifest.jsonl", "--patches-root", "patches",
        "--slide-id", "slide_000", "--mask-out", "restitched.png", "--out", "stitch.result.json",
    ]));
    run_ok(cwd, &with(&[
        "breslow", "--mask", "slides/slide_000_mask.png", "--out", "breslow.result.json",
    ]));
}

fn collect_files(root: &Path, base: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(&path, base, out);
        } else {
            let rel = path.strip_prefix(base).unwrap().to_path_buf();
            out.insert(rel, std::fs::read(&path).unwrap());
        }
    }
}

#[test]
fn deterministic_runs_produce_byte_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    full_deterministic_run(&first);
    full_deterministic_run(&second);

    let mut a = BTreeMap::new();
    let mut b = BTreeMap::new();
    collect_files(&first, &first, &mut a);
    collect_files(&second, &second, &mut b);

    let names = |m: &BTreeMap<PathBuf, Vec<u8>>| m.keys().cloned().collect::<Vec<_>>();
    assert_eq!(names(&a), names(&b), "runs produced different file sets");
    assert!(a.keys().any(|p| p == Path::new("model.ckpt")));
    assert!(a.keys().any(|p| p.starts_with("preds") && p.to_string_lossy().ends_with("_pred.png")));
    assert!(a.keys().any(|p| p == Path::new("eval.result.json")));

    for (rel, bytes) in &a {
        assert!(
            bytes == &b[rel],
            "artifact {} differs between identically seeded runs",
            rel.display()
        );
    }
}
