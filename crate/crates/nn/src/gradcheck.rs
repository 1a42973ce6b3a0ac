//! Finite-difference gradient checking.
//!
//! Runs in f64. The numeric side uses central differences with a step
//! scaled to each coordinate, the analytic side is whatever the layer's
//! backward pass produced; agreement is judged by relative error.

use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Central-difference gradient of a scalar function of a tensor.
/// Step per coordinate: 1e-3 * max(1, |x_i|).
pub fn numeric_grad<F: FnMut(&Tensor<f64>) -> f64>(mut f: F, x: &Tensor<f64>) -> Tensor<f64> {
    let mut grad = x.clone();
    let mut probe = x.clone();
    for i in 0..x.data.len() {
        let orig = x.data[i];
        let h = 1e-3 * orig.abs().max(1.0);
        probe.data[i] = orig + h;
        let plus = f(&probe);
        probe.data[i] = orig - h;
        let minus = f(&probe);
        probe.data[i] = orig;
        grad.data[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Largest per-coordinate relative error between two gradients:
/// |a - b| / max(|a| + |b|, 1e-8).
pub fn max_rel_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data
        .iter()
        .zip(numeric.data.iter())
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Scalar probe loss: sum of the elementwise product with fixed weights.
/// Its gradient with respect to the output is exactly `weights`, so a
/// backward pass fed `weights` yields the analytic input gradient.
pub fn sum_weighted(out: &Tensor<f64>, weights: &Tensor<f64>) -> f64 {
    assert_eq!(out.shape(), weights.shape(), "probe weights must match output");
    out.data
        .iter()
        .zip(weights.data.iter())
        .map(|(a, b)| a * b)
        .sum()
}

/// Uniform random tensor in (-scale, scale).
pub fn random_tensor<T: crate::tensor::Scalar>(
    rng: &mut ChaCha8Rng,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    scale: f64,
) -> Tensor<T> {
    let data = (0..n * c * h * w)
        .map(|_| T::from_f64(rng.gen_range(-scale..scale)))
        .collect();
    Tensor::from_vec(n, c, h, w, data).expect("generated buffer matches shape")
}
