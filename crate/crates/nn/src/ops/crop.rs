//! Spatial cropping with an exact scatter backward.

use crate::error::{NnError, Result};
use crate::tensor::{Scalar, Tensor};

/// Offsets that center a (target_h, target_w) window inside (h, w).
pub fn center_offsets(h: usize, w: usize, target_h: usize, target_w: usize) -> (usize, usize) {
    ((h - target_h) / 2, (w - target_w) / 2)
}

pub fn crop_forward<T: Scalar>(
    x: &Tensor<T>,
    target_h: usize,
    target_w: usize,
    off_y: usize,
    off_x: usize,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.shape();
    if target_h + off_y > h || target_w + off_x > w {
        return Err(NnError::TargetTooLarge(format!(
            "window {target_h}x{target_w} at offset ({off_y}, {off_x}) exceeds input {h}x{w}"
        )));
    }
    let mut out = Tensor::zeros(n, c, target_h, target_w);
    for s in 0..n {
        for ch in 0..c {
            for y in 0..target_h {
                let src = x.index(s, ch, y + off_y, off_x);
                let dst = out.index(s, ch, y, 0);
                out.data[dst..dst + target_w].copy_from_slice(&x.data[src..src + target_w]);
            }
        }
    }
    Ok(out)
}

pub fn crop_backward<T: Scalar>(
    input_dims: [usize; 4],
    off_y: usize,
    off_x: usize,
    d_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_dims;
    let (dn, dc, th, tw) = d_out.shape();
    if dn != n || dc != c || th + off_y > h || tw + off_x > w {
        return Err(NnError::ShapeMismatch(format!(
            "crop gradient {:?} at offset ({off_y}, {off_x}) does not fit input {input_dims:?}",
            d_out.shape()
        )));
    }
    let mut dx = Tensor::zeros(n, c, h, w);
    for s in 0..n {
        for ch in 0..c {
            for y in 0..th {
                let dst = dx.index(s, ch, y + off_y, off_x);
                let src = d_out.index(s, ch, y, 0);
                dx.data[dst..dst + tw].copy_from_slice(&d_out.data[src..src + tw]);
            }
        }
    }
    Ok(dx)
}
