//! ReLU and inverted dropout.

use crate::error::{NnError, Result};
use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

pub fn relu_backward<T: Scalar>(x: &Tensor<T>, d_out: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != d_out.shape() {
        return Err(NnError::ShapeMismatch(format!(
            "relu gradient shape {:?} does not match input {:?}",
            d_out.shape(),
            x.shape()
        )));
    }
    let mut dx = d_out.clone();
    for (g, &v) in dx.data.iter_mut().zip(x.data.iter()) {
        if v <= T::ZERO {
            *g = T::ZERO;
        }
    }
    Ok(dx)
}

/// Inverted dropout: kept activations are scaled by 1/(1-rate) during
/// training so inference is a plain identity. Returns the output and the
/// per-element multiplier mask used, which the backward pass reapplies.
pub fn dropout_forward<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::InvalidInput(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    let keep = 1.0 - rate;
    let scale = T::from_f64(1.0 / keep);
    let mask: Vec<T> = (0..x.numel())
        .map(|_| {
            if rng.gen::<f64>() < keep {
                scale
            } else {
                T::ZERO
            }
        })
        .collect();
    let mut out = x.clone();
    for (v, &m) in out.data.iter_mut().zip(mask.iter()) {
        *v = *v * m;
    }
    Ok((out, mask))
}

pub fn dropout_backward<T: Scalar>(mask: &[T], d_out: &Tensor<T>) -> Result<Tensor<T>> {
    if mask.len() != d_out.numel() {
        return Err(NnError::ShapeMismatch(format!(
            "dropout mask has {} entries, upstream gradient {}",
            mask.len(),
            d_out.numel()
        )));
    }
    let mut dx = d_out.clone();
    for (g, &m) in dx.data.iter_mut().zip(mask.iter()) {
        *g = *g * m;
    }
    Ok(dx)
}
