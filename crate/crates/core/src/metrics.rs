//! Segmentation metrics (pixel accuracy, mean accuracy, IoU family, final
//! score) over a confusion matrix, plus Randolph's free-marginal kappa for
//! multirater agreement.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::raster::{LabelMask, NUM_CLASSES};

/// Square count matrix, rows = ground truth class, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> ConfusionMatrix {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    /// Matrix over the five tissue classes.
    pub fn for_tissue() -> ConfusionMatrix {
        ConfusionMatrix::new(NUM_CLASSES)
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<ConfusionMatrix> {
        let k = rows.len();
        let mut counts = Vec::with_capacity(k * k);
        for row in rows {
            if row.len() != k {
                return Err(CoreError::ShapeMismatch(format!(
                    "confusion matrix row of length {} in a {k}-class matrix",
                    row.len()
                )));
            }
            counts.extend_from_slice(row);
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize, n: u64) {
        self.counts[truth * self.k + pred] += n;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Ground-truth pixel count t_i.
    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.k..(i + 1) * self.k].iter().sum()
    }

    /// Prediction pixel count for class j.
    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.k).map(|i| self.count(i, j)).sum()
    }

    /// Tallies one truth/prediction mask pair into the matrix.
    pub fn accumulate(&mut self, truth: &LabelMask, pred: &LabelMask) -> Result<()> {
        if truth.width != pred.width || truth.height != pred.height {
            return Err(CoreError::ShapeMismatch(format!(
                "truth {}x{} vs prediction {}x{}",
                truth.width, truth.height, pred.width, pred.height
            )));
        }
        for (&t, &p) in truth.labels.iter().zip(&pred.labels) {
            self.counts[t as usize * self.k + p as usize] += 1;
        }
        Ok(())
    }

    /// Sums another matrix into this one, for joining per-thread partials.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.k, other.k, "merging matrices of different class counts");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// The metric suite computed from one confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub pa: f64,
    pub mpa: f64,
    pub miou: f64,
    pub fwiou: f64,
    pub score: f64,
    /// IoU per class id; `None` when the class appears in neither truth nor
    /// prediction.
    pub per_class_iou: Vec<Option<f64>>,
}

/// Computes the metric suite. Classes absent from the ground truth are
/// excluded from the mPA and mIoU averages.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricBundle> {
    let total = cm.total();
    if total == 0 {
        return Err(CoreError::EmptyMatrix);
    }
    let k = cm.classes();

    let mut diag_sum = 0u64;
    let mut recall_sum = 0.0;
    let mut iou_sum = 0.0;
    let mut fw_sum = 0.0;
    let mut n_cl = 0usize;
    let mut per_class_iou = vec![None; k];

    for (i, class_iou) in per_class_iou.iter_mut().enumerate() {
        let t_i = cm.row_sum(i);
        let n_ii = cm.count(i, i);
        diag_sum += n_ii;

        let union = t_i + cm.col_sum(i) - n_ii;
        if union > 0 {
            *class_iou = Some(n_ii as f64 / union as f64);
        }
        if t_i > 0 {
            n_cl += 1;
            recall_sum += n_ii as f64 / t_i as f64;
            let iou = n_ii as f64 / union as f64;
            iou_sum += iou;
            fw_sum += t_i as f64 * iou;
        }
    }

    let pa = diag_sum as f64 / total as f64;
    let mpa = recall_sum / n_cl as f64;
    let miou = iou_sum / n_cl as f64;
    let fwiou = fw_sum / total as f64;
    Ok(MetricBundle {
        pa,
        mpa,
        miou,
        fwiou,
        score: (mpa + miou) / 2.0,
        per_class_iou,
    })
}

/// Category assignments of `n` raters over `N` cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterTable {
    /// Number of categories q; assignments are 0-based ids below q.
    pub categories: usize,
    /// One row per case, one entry per rater.
    pub assignments: Vec<Vec<usize>>,
}

impl RaterTable {
    pub fn new(categories: usize, assignments: Vec<Vec<usize>>) -> Result<RaterTable> {
        let table = RaterTable {
            categories,
            assignments,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories < 2 {
            return Err(CoreError::DegenerateTable(format!(
                "need at least 2 categories, got {}",
                self.categories
            )));
        }
        if self.assignments.is_empty() {
            return Err(CoreError::DegenerateTable("no cases".into()));
        }
        let n = self.assignments[0].len();
        if n < 2 {
            return Err(CoreError::DegenerateTable(format!(
                "need at least 2 raters, got {n}"
            )));
        }
        for (case, row) in self.assignments.iter().enumerate() {
            if row.len() != n {
                return Err(CoreError::DegenerateTable(format!(
                    "case {case} has {} ratings, expected {n}",
                    row.len()
                )));
            }
            if let Some(&bad) = row.iter().find(|&&c| c >= self.categories) {
                return Err(CoreError::DegenerateTable(format!(
                    "case {case} uses category {bad}, table has {}",
                    self.categories
                )));
            }
        }
        Ok(())
    }

    pub fn raters(&self) -> usize {
        self.assignments[0].len()
    }
}

/// Randolph's free-marginal multirater kappa.
///
/// Returns `(p_observed, kappa)` where the observed agreement is
/// `Σ_cases Σ_categories n_ij(n_ij−1) / (N·n·(n−1))` and
/// `kappa = (p_observed − 1/q) / (1 − 1/q)`.
pub fn randolph_kappa(table: &RaterTable) -> Result<(f64, f64)> {
    table.validate()?;
    let n = table.raters();
    let cases = table.assignments.len();

    let mut agree = 0u64;
    let mut tally = vec![0u64; table.categories];
    for row in &table.assignments {
        tally.iter_mut().for_each(|t| *t = 0);
        for &c in row {
            tally[c] += 1;
        }
        agree += tally.iter().map(|&t| t * t.saturating_sub(1)).sum::<u64>();
    }

    let p_observed = agree as f64 / (cases as f64 * (n * (n - 1)) as f64);
    Ok((p_observed, kappa_from_agreement(p_observed, table.categories)))
}

/// Chance-corrects an observed agreement for `q` categories.
pub fn kappa_from_agreement(p_observed: f64, q: usize) -> f64 {
    let chance = 1.0 / q as f64;
    (p_observed - chance) / (1.0 - chance)
}
