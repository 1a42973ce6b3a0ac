//! Per-pixel softmax and the multinomial logistic loss.

use crate::error::{NnError, Result};
use crate::tensor::{Scalar, Tensor};
use slideseg_core::LabelMask;

/// Dense batch of per-pixel class ids matching a score tensor's layout.
#[derive(Clone, Debug)]
pub struct LabelBatch {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub ids: Vec<u8>,
}

impl LabelBatch {
    pub fn from_masks(masks: &[&LabelMask]) -> Result<Self> {
        if masks.is_empty() {
            return Err(NnError::InvalidInput("label batch needs at least one mask".into()));
        }
        let h = masks[0].height;
        let w = masks[0].width;
        let mut ids = Vec::with_capacity(masks.len() * h * w);
        for m in masks {
            if m.height != h || m.width != w {
                return Err(NnError::ShapeMismatch(format!(
                    "mask {}x{} differs from first mask {}x{}",
                    m.width, m.height, w, h
                )));
            }
            ids.extend_from_slice(&m.labels);
        }
        Ok(LabelBatch {
            n: masks.len(),
            h,
            w,
            ids,
        })
    }

    #[inline]
    pub fn at(&self, n: usize, y: usize, x: usize) -> u8 {
        self.ids[(n * self.h + y) * self.w + x]
    }
}

/// Channel-wise softmax at every pixel, stabilised by subtracting the
/// per-pixel maximum before exponentiation.
pub fn softmax<T: Scalar>(scores: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = scores.shape();
    let mut out = scores.clone();
    let plane = h * w;
    for s in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mut max = scores.at(s, 0, y, x);
                for ch in 1..c {
                    let v = scores.at(s, ch, y, x);
                    if v > max {
                        max = v;
                    }
                }
                let mut sum = T::ZERO;
                for ch in 0..c {
                    let i = ((s * c + ch) * plane) + y * w + x;
                    let e = (scores.data[i] - max).exp();
                    out.data[i] = e;
                    sum += e;
                }
                for ch in 0..c {
                    let i = ((s * c + ch) * plane) + y * w + x;
                    out.data[i] = out.data[i] / sum;
                }
            }
        }
    }
    out
}

/// Mean negative log-likelihood over labelled pixels and its gradient
/// with respect to the scores: (softmax - onehot) / pixel_count.
///
/// Pixels whose label equals `ignore` contribute nothing to the loss or
/// the gradient and do not count toward the normaliser. The scalar loss
/// is accumulated in f64 regardless of the tensor element type.
pub fn softmax_multinomial_loss<T: Scalar>(
    scores: &Tensor<T>,
    labels: &LabelBatch,
    ignore: Option<u8>,
) -> Result<(f64, Tensor<T>)> {
    let (n, c, h, w) = scores.shape();
    if labels.n != n || labels.h != h || labels.w != w {
        return Err(NnError::ShapeMismatch(format!(
            "labels ({}, {}, {}) do not match scores ({n}, {h}, {w})",
            labels.n, labels.h, labels.w
        )));
    }
    for &id in &labels.ids {
        if (id as usize) >= c && Some(id) != ignore {
            return Err(NnError::InvalidInput(format!(
                "label id {id} out of range for {c} classes"
            )));
        }
    }
    let counted = labels
        .ids
        .iter()
        .filter(|&&id| Some(id) != ignore)
        .count();
    if counted == 0 {
        return Err(NnError::InvalidInput(
            "every pixel is ignored; loss is undefined".into(),
        ));
    }

    let mut grad = softmax(scores);
    let plane = h * w;
    let norm = T::from_f64(1.0 / counted as f64);
    let mut nll = 0.0f64;
    for s in 0..n {
        for y in 0..h {
            for x in 0..w {
                let id = labels.at(s, y, x);
                let pix = y * w + x;
                if Some(id) == ignore {
                    for ch in 0..c {
                        grad.data[(s * c + ch) * plane + pix] = T::ZERO;
                    }
                    continue;
                }
                let ti = (s * c + id as usize) * plane + pix;
                nll -= grad.data[ti].to_f64().ln();
                grad.data[ti] = grad.data[ti] - T::ONE;
                for ch in 0..c {
                    let i = (s * c + ch) * plane + pix;
                    grad.data[i] = grad.data[i] * norm;
                }
            }
        }
    }
    Ok((nll / counted as f64, grad))
}
