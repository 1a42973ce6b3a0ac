//! Max pooling with recorded argmax routing.

use crate::error::{NnError, Result};
use crate::tensor::{Scalar, Tensor};

pub fn pool_out_size(input: usize, kernel: usize, stride: usize) -> usize {
    (input - kernel) / stride + 1
}

/// Returns the pooled tensor and, per output element, the flat index into
/// the input tensor that won the window. Ties go to the first element in
/// scan order, which keeps the backward pass deterministic.
pub fn maxpool_forward<T: Scalar>(
    x: &Tensor<T>,
    kernel: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<u32>)> {
    let (n, c, h, w) = x.shape();
    if kernel == 0 || stride == 0 {
        return Err(NnError::ShapeMismatch("pool kernel and stride must be positive".into()));
    }
    if h < kernel || w < kernel {
        return Err(NnError::ShapeMismatch(format!(
            "pool kernel {kernel} exceeds input {h}x{w}"
        )));
    }
    let oh = pool_out_size(h, kernel, stride);
    let ow = pool_out_size(w, kernel, stride);
    let mut out = Tensor::zeros(n, c, oh, ow);
    let mut argmax = vec![0u32; n * c * oh * ow];
    for s in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = x.at(s, ch, oy * stride, ox * stride);
                    let mut best_idx = x.index(s, ch, oy * stride, ox * stride);
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let v = x.at(s, ch, oy * stride + ky, ox * stride + kx);
                            if v > best {
                                best = v;
                                best_idx = x.index(s, ch, oy * stride + ky, ox * stride + kx);
                            }
                        }
                    }
                    let o = out.index(s, ch, oy, ox);
                    out.data[o] = best;
                    argmax[o] = best_idx as u32;
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool_backward<T: Scalar>(
    input_dims: [usize; 4],
    argmax: &[u32],
    d_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != d_out.numel() {
        return Err(NnError::ShapeMismatch(format!(
            "pool argmax has {} entries, upstream gradient {}",
            argmax.len(),
            d_out.numel()
        )));
    }
    let mut dx = Tensor::zeros(input_dims[0], input_dims[1], input_dims[2], input_dims[3]);
    for (i, &src) in argmax.iter().enumerate() {
        dx.data[src as usize] += d_out.data[i];
    }
    Ok(dx)
}
