//! Transposed convolution (learned upsampling).
//!
//! Weights are (in_channels, out_channels, k, k). No padding and no bias:
//! output spatial size is stride * (in - 1) + k. The adjoint relationship
//! with `conv` lets forward and backward reuse im2col/col2im.

use crate::error::{NnError, Result};
use crate::ops::conv::{col2im, im2col};
use crate::tensor::{gemm, Scalar, Tensor};

pub fn deconv_out_size(input: usize, kernel: usize, stride: usize) -> usize {
    stride * (input - 1) + kernel
}

fn check_deconv_shapes<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
) -> Result<(usize, usize)> {
    let (_, ci, h, w) = x.shape();
    let (wci, _, kh, kw) = weight.shape();
    if kh != kw {
        return Err(NnError::ShapeMismatch(format!(
            "deconv kernel must be square, got {kh}x{kw}"
        )));
    }
    if wci != ci {
        return Err(NnError::ShapeMismatch(format!(
            "deconv weight expects {wci} input channels, input has {ci}"
        )));
    }
    if stride == 0 {
        return Err(NnError::ShapeMismatch("deconv stride must be positive".into()));
    }
    if h == 0 || w == 0 {
        return Err(NnError::ShapeMismatch("deconv input has empty spatial extent".into()));
    }
    Ok((deconv_out_size(h, kh, stride), deconv_out_size(w, kh, stride)))
}

pub fn deconv_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (n, ci, h, w) = x.shape();
    let (_, co, k, _) = weight.shape();
    let (out_h, out_w) = check_deconv_shapes(x, weight, stride)?;
    let krows = co * k * k;
    let cols = h * w;

    let mut out = Tensor::zeros(n, co, out_h, out_w);
    let mut colbuf = vec![T::ZERO; krows * cols];
    for s in 0..n {
        // cols = W^T (viewed ci x (co*k*k)) * x, then scatter-add into the
        // output canvas exactly where a stride-s conv would have read.
        gemm(
            T::ONE,
            &weight.data,
            ci,
            krows,
            true,
            x.sample(s),
            ci,
            cols,
            false,
            T::ZERO,
            &mut colbuf,
        );
        col2im(&colbuf, out.sample_mut(s), co, out_h, out_w, k, stride, 0);
    }
    Ok(out)
}

/// Gradients of the transposed convolution: returns (d_input, d_weight).
pub fn deconv_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    d_out: &Tensor<T>,
    stride: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, ci, h, w) = x.shape();
    let (_, co, k, _) = weight.shape();
    let (out_h, out_w) = check_deconv_shapes(x, weight, stride)?;
    if d_out.shape() != (n, co, out_h, out_w) {
        return Err(NnError::ShapeMismatch(format!(
            "deconv upstream gradient has shape {:?}, expected ({n}, {co}, {out_h}, {out_w})",
            d_out.shape()
        )));
    }
    let krows = co * k * k;
    let cols = h * w;

    let mut dx = Tensor::zeros(n, ci, h, w);
    let mut dw = Tensor::zeros(ci, co, k, k);
    for s in 0..n {
        let dcol = im2col(d_out.sample(s), co, out_h, out_w, k, stride, 0);

        // dx = W (ci x co*k*k) * dcol
        gemm(
            T::ONE,
            &weight.data,
            ci,
            krows,
            false,
            &dcol,
            krows,
            cols,
            false,
            T::ZERO,
            dx.sample_mut(s),
        );

        // dW += x * dcol^T
        gemm(
            T::ONE,
            x.sample(s),
            ci,
            cols,
            false,
            &dcol,
            krows,
            cols,
            true,
            T::ONE,
            &mut dw.data,
        );
    }
    Ok((dx, dw))
}

/// Bilinear interpolation kernel for a (channels_in, channels_out, k, k)
/// deconv weight: identity across channels, the classic separable tent
/// filter within each matched channel pair, zero elsewhere.
pub fn bilinear_kernel<T: Scalar>(channels_in: usize, channels_out: usize, k: usize) -> Tensor<T> {
    let factor = k.div_ceil(2);
    let center = if k % 2 == 1 {
        (factor - 1) as f64
    } else {
        factor as f64 - 0.5
    };
    let mut w = Tensor::zeros(channels_in, channels_out, k, k);
    for c in 0..channels_in.min(channels_out) {
        for y in 0..k {
            for x in 0..k {
                let fy = 1.0 - (y as f64 - center).abs() / factor as f64;
                let fx = 1.0 - (x as f64 - center).abs() / factor as f64;
                w.set(c, c, y, x, T::from_f64(fy * fx));
            }
        }
    }
    w
}
