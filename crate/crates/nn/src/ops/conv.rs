//! 2-d convolution via im2col and GEMM.
//!
//! Weights are (out_channels, in_channels, k, k); bias is (out_channels,
//! 1, 1, 1). Padding is zero fill.

use crate::error::{NnError, Result};
use crate::tensor::{gemm, Scalar, Tensor};

pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Unrolls one sample (c, h, w) into a (c*k*k) x (out_h*out_w) matrix.
pub fn im2col<T: Scalar>(
    sample: &[T],
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Vec<T> {
    let out_h = conv_out_size(h, kernel, stride, pad);
    let out_w = conv_out_size(w, kernel, stride, pad);
    let cols = out_h * out_w;
    let mut out = vec![T::ZERO; c * kernel * kernel * cols];
    for ch in 0..c {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ch * kernel + ky) * kernel + kx;
                let base = row * cols;
                for oy in 0..out_h {
                    let sy = (oy * stride + ky) as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = (ch * h + sy as usize) * w;
                    for ox in 0..out_w {
                        let sx = (ox * stride + kx) as isize - pad as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        out[base + oy * out_w + ox] = sample[src_row + sx as usize];
                    }
                }
            }
        }
    }
    out
}

/// Inverse scatter of `im2col`: accumulates a (c*k*k) x (out_h*out_w)
/// matrix back onto one sample buffer of shape (c, h, w).
#[allow(clippy::too_many_arguments)]
pub fn col2im<T: Scalar>(
    cols_mat: &[T],
    sample: &mut [T],
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) {
    let out_h = conv_out_size(h, kernel, stride, pad);
    let out_w = conv_out_size(w, kernel, stride, pad);
    let cols = out_h * out_w;
    for ch in 0..c {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ch * kernel + ky) * kernel + kx;
                let base = row * cols;
                for oy in 0..out_h {
                    let sy = (oy * stride + ky) as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst_row = (ch * h + sy as usize) * w;
                    for ox in 0..out_w {
                        let sx = (ox * stride + kx) as isize - pad as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        sample[dst_row + sx as usize] += cols_mat[base + oy * out_w + ox];
                    }
                }
            }
        }
    }
}

fn check_conv_shapes<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize)> {
    let (_, ci, h, w) = x.shape();
    let (co, wci, kh, kw) = weight.shape();
    if kh != kw {
        return Err(NnError::ShapeMismatch(format!(
            "conv kernel must be square, got {kh}x{kw}"
        )));
    }
    if wci != ci {
        return Err(NnError::ShapeMismatch(format!(
            "conv weight expects {wci} input channels, input has {ci}"
        )));
    }
    if bias.shape() != (co, 1, 1, 1) {
        return Err(NnError::ShapeMismatch(format!(
            "conv bias must be ({co}, 1, 1, 1), got {:?}",
            bias.shape()
        )));
    }
    if stride == 0 {
        return Err(NnError::ShapeMismatch("conv stride must be positive".into()));
    }
    if h + 2 * pad < kh || w + 2 * pad < kh {
        return Err(NnError::ShapeMismatch(format!(
            "conv kernel {kh} exceeds padded input {}x{}",
            h + 2 * pad,
            w + 2 * pad
        )));
    }
    Ok((
        conv_out_size(h, kh, stride, pad),
        conv_out_size(w, kh, stride, pad),
    ))
}

pub fn conv_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, ci, h, w) = x.shape();
    let (co, _, k, _) = weight.shape();
    let (out_h, out_w) = check_conv_shapes(x, weight, bias, stride, pad)?;
    let cols = out_h * out_w;
    let krows = ci * k * k;

    let mut out = Tensor::zeros(n, co, out_h, out_w);
    for s in 0..n {
        let col = im2col(x.sample(s), ci, h, w, k, stride, pad);
        let dst = out.sample_mut(s);
        gemm(
            T::ONE,
            &weight.data,
            co,
            krows,
            false,
            &col,
            krows,
            cols,
            false,
            T::ZERO,
            dst,
        );
        for oc in 0..co {
            let b = bias.data[oc];
            for v in dst[oc * cols..(oc + 1) * cols].iter_mut() {
                *v += b;
            }
        }
    }
    Ok(out)
}

/// Gradients of the convolution: returns (d_input, d_weight, d_bias).
pub fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    d_out: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, ci, h, w) = x.shape();
    let (co, _, k, _) = weight.shape();
    let (out_h, out_w) = check_conv_shapes(x, weight, bias, stride, pad)?;
    if d_out.shape() != (n, co, out_h, out_w) {
        return Err(NnError::ShapeMismatch(format!(
            "conv upstream gradient has shape {:?}, expected ({n}, {co}, {out_h}, {out_w})",
            d_out.shape()
        )));
    }
    let cols = out_h * out_w;
    let krows = ci * k * k;

    let mut dx = Tensor::zeros(n, ci, h, w);
    let mut dw = Tensor::zeros(co, ci, k, k);
    let mut db = Tensor::zeros(co, 1, 1, 1);
    let mut dcol = vec![T::ZERO; krows * cols];
    for s in 0..n {
        let col = im2col(x.sample(s), ci, h, w, k, stride, pad);
        let dout_s = d_out.sample(s);

        // dW += dOut * col^T
        gemm(
            T::ONE,
            dout_s,
            co,
            cols,
            false,
            &col,
            krows,
            cols,
            true,
            T::ONE,
            &mut dw.data,
        );

        // dCol = W^T * dOut, scattered back to the input
        gemm(
            T::ONE,
            &weight.data,
            co,
            krows,
            true,
            dout_s,
            co,
            cols,
            false,
            T::ZERO,
            &mut dcol,
        );
        col2im(&dcol, dx.sample_mut(s), ci, h, w, k, stride, pad);

        for oc in 0..co {
            let mut sum = T::ZERO;
            for &v in &dout_s[oc * cols..(oc + 1) * cols] {
                sum += v;
            }
            db.data[oc] += sum;
        }
    }
    Ok((dx, dw, db))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{max_rel_error, numeric_grad, random_tensor, sum_weighted};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &Tensor<f64>,
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let (n, ci, h, ww) = x.shape();
        let (co, _, k, _) = w.shape();
        let oh = conv_out_size(h, k, stride, pad);
        let ow = conv_out_size(ww, k, stride, pad);
        let mut out = Tensor::zeros(n, co, oh, ow);
        for s in 0..n {
            for oc in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data[oc];
                        for ic in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = (oy * stride + ky) as isize - pad as isize;
                                    let sx = (ox * stride + kx) as isize - pad as isize;
                                    if sy < 0 || sy >= h as isize || sx < 0 || sx >= ww as isize {
                                        continue;
                                    }
                                    acc += x.at(s, ic, sy as usize, sx as usize)
                                        * w.at(oc, ic, ky, kx);
                                }
                            }
                        }
                        out.set(s, oc, oy, ox, acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn one_by_one_identity_kernel_passes_input_through() {
        let x = Tensor::from_vec(1, 1, 2, 3, vec![1.0f32, -2.0, 3.0, 4.0, -5.0, 6.0]).unwrap();
        let w = Tensor::from_vec(1, 1, 1, 1, vec![1.0f32]).unwrap();
        let b = Tensor::zeros(1, 1, 1, 1);
        let y = conv_forward(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_kernel_sums_windows() {
        // 3x3 image of ones, 2x2 kernel of ones: every window sums to 4.
        let x = Tensor::filled(1, 1, 3, 3, 1.0f32);
        let w = Tensor::filled(1, 1, 2, 2, 1.0f32);
        let b = Tensor::zeros(1, 1, 1, 1);
        let y = conv_forward(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), (1, 1, 2, 2));
        assert!(y.data.iter().all(|&v| v == 4.0));
    }

    #[test]
    fn centre_delta_kernel_with_pad_one_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Tensor<f64> = random_tensor(&mut rng, 2, 3, 5, 4, 1.0);
        let mut w = Tensor::zeros(3, 3, 3, 3);
        for c in 0..3 {
            w.set(c, c, 1, 1, 1.0);
        }
        let b = Tensor::zeros(3, 1, 1, 1);
        let y = conv_forward(&x, &w, &b, 1, 1).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-14);
    }

    #[test]
    fn matches_naive_convolution_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cases = [
            (1, 1, 4, 4, 1, 3, 1, 0),
            (2, 3, 6, 5, 4, 3, 1, 1),
            (1, 2, 7, 7, 3, 3, 2, 1),
            (2, 4, 8, 6, 2, 1, 1, 0),
            (1, 3, 9, 9, 2, 7, 1, 3),
            (1, 2, 6, 6, 3, 2, 2, 0),
        ];
        for (n, ci, h, w, co, k, stride, pad) in cases {
            let x: Tensor<f64> = random_tensor(&mut rng, n, ci, h, w, 1.0);
            let wt: Tensor<f64> = random_tensor(&mut rng, co, ci, k, k, 0.5);
            let b: Tensor<f64> = random_tensor(&mut rng, co, 1, 1, 1, 0.5);
            let fast = conv_forward(&x, &wt, &b, stride, pad).unwrap();
            let slow = naive_conv(&x, &wt, &b, stride, pad);
            assert!(fast.max_abs_diff(&slow) < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), m> must equal <x, col2im(m)> for random x and m.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Tensor<f64> = random_tensor(&mut rng, 1, 2, 5, 6, 1.0);
        let (k, stride, pad) = (3, 2, 1);
        let cols = im2col(x.sample(0), 2, 5, 6, k, stride, pad);
        let m: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let lhs: f64 = cols.iter().zip(m.iter()).map(|(a, b)| a * b).sum();

        let mut scattered = vec![0.0f64; 2 * 5 * 6];
        col2im(&m, &mut scattered, 2, 5, 6, k, stride, pad);
        let rhs: f64 = x.sample(0).iter().zip(scattered.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cases = [
            (1, 1, 3, 3, 1, 1, 1, 0),
            (2, 2, 5, 4, 3, 3, 1, 1),
            (1, 3, 6, 6, 2, 3, 2, 1),
            (2, 1, 4, 5, 2, 2, 1, 0),
            (1, 2, 7, 3, 3, 3, 2, 1),
        ];
        for (n, ci, h, w, co, k, stride, pad) in cases {
            let x: Tensor<f64> = random_tensor(&mut rng, n, ci, h, w, 1.0);
            let wt: Tensor<f64> = random_tensor(&mut rng, co, ci, k, k, 0.7);
            let b: Tensor<f64> = random_tensor(&mut rng, co, 1, 1, 1, 0.7);
            let probe = random_tensor(
                &mut rng,
                n,
                co,
                conv_out_size(h, k, stride, pad),
                conv_out_size(w, k, stride, pad),
                1.0,
            );

            let (dx, dw, db) = conv_backward(&x, &wt, &b, &probe, stride, pad).unwrap();

            let ndx = numeric_grad(
                |v| sum_weighted(&conv_forward(v, &wt, &b, stride, pad).unwrap(), &probe),
                &x,
            );
            let ndw = numeric_grad(
                |v| sum_weighted(&conv_forward(&x, v, &b, stride, pad).unwrap(), &probe),
                &wt,
            );
            let ndb = numeric_grad(
                |v| sum_weighted(&conv_forward(&x, &wt, v, stride, pad).unwrap(), &probe),
                &b,
            );
            assert!(max_rel_error(&dx, &ndx) < 1e-4, "dx for case {n},{ci},{h},{w}");
            assert!(max_rel_error(&dw, &ndw) < 1e-4, "dw for case {n},{ci},{h},{w}");
            assert!(max_rel_error(&db, &ndb) < 1e-4, "db for case {n},{ci},{h},{w}");
        }
    }

    #[test]
    fn rejects_kernel_larger_than_padded_input() {
        let x = Tensor::<f32>::zeros(1, 1, 4, 4);
        let w = Tensor::<f32>::zeros(1, 1, 7, 7);
        let b = Tensor::<f32>::zeros(1, 1, 1, 1);
        let err = conv_forward(&x, &w, &b, 1, 1).unwrap_err();
        assert!(matches!(err, NnError::ShapeMismatch(_)));
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::<f32>::zeros(1, 3, 4, 4);
        let w = Tensor::<f32>::zeros(2, 4, 3, 3);
        let b = Tensor::<f32>::zeros(2, 1, 1, 1);
        assert!(conv_forward(&x, &w, &b, 1, 1).is_err());
    }
}
