//! Weighted elementwise sum of same-shaped tensors.

use crate::error::{NnError, Result};
use crate::tensor::{Scalar, Tensor};

pub fn wsum_forward<T: Scalar>(inputs: &[&Tensor<T>], weights: &[f64]) -> Result<Tensor<T>> {
    if inputs.is_empty() || inputs.len() != weights.len() {
        return Err(NnError::ShapeMismatch(format!(
            "weighted sum needs matching inputs and weights, got {} and {}",
            inputs.len(),
            weights.len()
        )));
    }
    let dims = inputs[0].dims();
    for t in inputs.iter().skip(1) {
        if t.dims() != dims {
            return Err(NnError::ShapeMismatch(format!(
                "weighted sum inputs disagree: {:?} vs {dims:?}",
                t.dims()
            )));
        }
    }
    let mut out = Tensor::zeros(dims[0], dims[1], dims[2], dims[3]);
    for (t, &wf) in inputs.iter().zip(weights.iter()) {
        let w = T::from_f64(wf);
        for (o, &v) in out.data.iter_mut().zip(t.data.iter()) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Gradient toward input i is weight_i times the upstream gradient.
pub fn wsum_backward<T: Scalar>(weights: &[f64], d_out: &Tensor<T>) -> Vec<Tensor<T>> {
    weights
        .iter()
        .map(|&w| d_out.scale(T::from_f64(w)))
        .collect()
}
