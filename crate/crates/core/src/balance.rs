//! Hybrid class balancing: rule-based removal of background-dominated
//! training patches and fourfold augmentation of epidermis-bearing ones.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::patch::{Augmentation, PatchManifest, PatchRecord};
use crate::raster::{
    class_histogram, load_mask, load_raster, save_mask, save_raster, LabelMask, RgbRaster,
    TissueClass, NUM_CLASSES,
};
use crate::split::Split;

pub const DEFAULT_BG_THRESHOLD: f64 = 0.98;

/// Pixel bookkeeping for one balancing run over the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub before: [u64; NUM_CLASSES],
    pub after: [u64; NUM_CLASSES],
    pub removed_patches: usize,
    pub added_patches: usize,
    pub ratio_tumour_epidermis_before: Option<f64>,
    pub ratio_tumour_epidermis_after: Option<f64>,
}

/// Classes present in a histogram, most frequent first; ties broken by
/// lowest class id.
fn ranked_classes(hist: &[u64; NUM_CLASSES]) -> Vec<(TissueClass, u64)> {
    let mut present: Vec<(TissueClass, u64)> = TissueClass::ALL
        .iter()
        .map(|&c| (c, hist[c as usize]))
        .filter(|&(_, n)| n > 0)
        .collect();
    present.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    present
}

/// Whether a patch falls to either undersampling rule: background modal and
/// above the threshold, or background modal with NDI as the only other class.
pub fn is_undersampled(hist: &[u64; NUM_CLASSES], bg_threshold: f64) -> bool {
    let ranked = ranked_classes(hist);
    let Some(&(modal, modal_count)) = ranked.first() else {
        return false;
    };
    if modal != TissueClass::Background {
        return false;
    }
    let total: u64 = hist.iter().sum();
    if modal_count as f64 / total as f64 > bg_threshold {
        return true;
    }
    ranked.len() == 2 && ranked[1].0 == TissueClass::Ndi
}

/// Drops every training patch matching the undersampling rules.
pub fn undersample(
    manifest: &PatchManifest,
    bg_threshold: f64,
) -> (PatchManifest, Vec<PatchRecord>) {
    let mut kept = manifest.clone();
    kept.records.clear();
    let mut removed = Vec::new();
    for rec in &manifest.records {
        if rec.split == Split::Train && is_undersampled(&rec.class_histogram, bg_threshold) {
            removed.push(rec.clone());
        } else {
            kept.records.push(rec.clone());
        }
    }
    (kept, removed)
}

/// Whether a patch matches any of the five oversampling criteria.
pub fn is_oversample_candidate(hist: &[u64; NUM_CLASSES]) -> bool {
    use TissueClass::{Background, Epidermis, Ndi};
    let ranked = ranked_classes(hist);
    let class = |i: usize| ranked.get(i).map(|&(c, _)| c);

    let all_epidermis = ranked.len() == 1 && class(0) == Some(Epidermis);
    all_epidermis
        || (class(0) == Some(Background) && class(1) == Some(Epidermis))
        || (class(0) == Some(Background) && class(1) == Some(Ndi) && class(2) == Some(Epidermis))
        || (class(0) == Some(Ndi) && class(1) == Some(Epidermis))
        || (class(0) == Some(Ndi) && class(1) == Some(Background) && class(2) == Some(Epidermis))
}

/// Training patches that the oversampling rules select for augmentation.
pub fn select_oversample_candidates(manifest: &PatchManifest) -> Vec<PatchRecord> {
    manifest
        .records
        .iter()
        .filter(|r| r.split == Split::Train && is_oversample_candidate(&r.class_histogram))
        .cloned()
        .collect()
}

fn transform_indices(
    width: usize,
    height: usize,
    aug: Augmentation,
) -> Result<impl Fn(usize, usize) -> (usize, usize)> {
    if aug != Augmentation::None && width != height {
        return Err(CoreError::NonSquarePatch { width, height });
    }
    let s = width;
    Ok(move |x: usize, y: usize| match aug {
        Augmentation::None => (x, y),
        Augmentation::FlipLr => (s - 1 - x, y),
        Augmentation::FlipTb => (x, s - 1 - y),
        Augmentation::Rot90 => (y, s - 1 - x),
        Augmentation::Rot270 => (s - 1 - y, x),
    })
}

/// Applies one transform to a feature patch.
pub fn transform_rgb(patch: &RgbRaster, aug: Augmentation) -> Result<RgbRaster> {
    let src_of = transform_indices(patch.width, patch.height, aug)?;
    let mut out = patch.clone();
    for y in 0..patch.height {
        for x in 0..patch.width {
            let (sx, sy) = src_of(x, y);
            out.set(x, y, patch.get(sx, sy));
        }
    }
    Ok(out)
}

/// Applies one transform to a label patch.
pub fn transform_mask(mask: &LabelMask, aug: Augmentation) -> Result<LabelMask> {
    let src_of = transform_indices(mask.width, mask.height, aug)?;
    let mut out = mask.clone();
    for y in 0..mask.height {
        for x in 0..mask.width {
            let (sx, sy) = src_of(x, y);
            out.set(x, y, mask.get(sx, sy));
        }
    }
    Ok(out)
}

/// Produces the four transformed copies of a feature/label pair.
pub fn augment(
    feature: &RgbRaster,
    label: &LabelMask,
) -> Result<Vec<(Augmentation, RgbRaster, LabelMask)>> {
    Augmentation::TRANSFORMS
        .iter()
        .map(|&aug| Ok((aug, transform_rgb(feature, aug)?, transform_mask(label, aug)?)))
        .collect()
}

/// Runs the full balancing pass over the training split: undersample, then
/// materialize the four augmentations of every oversample candidate.
pub fn balance_dataset(
    manifest: &PatchManifest,
    patches_root: &Path,
    bg_threshold: f64,
) -> Result<(PatchManifest, BalanceReport)> {
    if manifest.balanced
        || manifest.records.iter().any(|r| r.augmentation != Augmentation::None)
    {
        return Err(CoreError::AlreadyBalanced);
    }

    let before = manifest.class_totals(Split::Train);
    let (mut balanced, removed) = undersample(manifest, bg_threshold);
    let candidates = select_oversample_candidates(&balanced);

    let mut added = 0usize;
    for rec in &candidates {
        let feature = load_raster(&patches_root.join(rec.feature_rel_path()))?;
        let label = load_mask(&patches_root.join(rec.label_rel_path()))?;
        for (aug, feat_t, label_t) in augment(&feature, &label)? {
            let mut aug_rec = rec.clone();
            aug_rec.augmentation = aug;
            aug_rec.class_histogram = class_histogram(&label_t);
            save_raster(&patches_root.join(aug_rec.feature_rel_path()), &feat_t)?;
            save_mask(&patches_root.join(aug_rec.label_rel_path()), &label_t)?;
            balanced.records.push(aug_rec);
            added += 1;
        }
    }
    balanced.balanced = true;

    let after = balanced.class_totals(Split::Train);
    let ratio = |totals: &[u64; NUM_CLASSES]| {
        let epi = totals[TissueClass::Epidermis as usize];
        (epi > 0).then(|| totals[TissueClass::Tumour as usize] as f64 / epi as f64)
    };
    let report = BalanceReport {
        before,
        after,
        removed_patches: removed.len(),
        added_patches: added,
        ratio_tumour_epidermis_before: ratio(&before),
        ratio_tumour_epidermis_after: ratio(&after),
    };
    Ok((balanced, report))
}
