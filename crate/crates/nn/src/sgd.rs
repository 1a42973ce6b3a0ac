//! SGD with momentum and a sigmoid learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::graph::{Gradients, Params};
use crate::tensor::Scalar;

/// Steepness of the logistic decay. 16 keeps both endpoints within 0.5%
/// of the nominal start and end rates while the midpoint stays exact.
pub const SIGMOID_STEEPNESS: f64 = 16.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    pub momentum: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr_start: 1e-4,
            lr_end: 1e-5,
            momentum: 0.9,
            minibatch: 2,
            epochs: 20,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr_start.is_finite() || !self.lr_end.is_finite() || self.lr_end <= 0.0 {
            return Err(NnError::InvalidConfig("learning rates must be positive finite".into()));
        }
        if self.lr_end >= self.lr_start {
            return Err(NnError::InvalidConfig(format!(
                "lr_end {} must be below lr_start {}",
                self.lr_end, self.lr_start
            )));
        }
        if self.minibatch == 0 {
            return Err(NnError::InvalidConfig("minibatch must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NnError::InvalidConfig(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        Ok(())
    }

    /// lr(t) = lr_end + (lr_start - lr_end) * sigmoid(-k * (t/T - 1/2)).
    pub fn learning_rate(&self, t: u64, total: u64) -> f64 {
        assert!(total > 0 && t <= total, "iteration {t} outside schedule of {total}");
        let frac = t as f64 / total as f64;
        let sig = 1.0 / (1.0 + (SIGMOID_STEEPNESS * (frac - 0.5)).exp());
        self.lr_end + (self.lr_start - self.lr_end) * sig
    }
}

/// One momentum step: v <- momentum*v - lr*g; p <- p + v.
/// Velocity buffers must mirror the parameter set exactly.
pub fn sgd_step<T: Scalar>(
    params: &mut Params<T>,
    grads: &Gradients<T>,
    velocity: &mut Params<T>,
    momentum: f64,
    lr: f64,
) {
    let m = T::from_f64(momentum);
    let step = T::from_f64(lr);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name).unwrap_or_else(|| panic!("gradient missing for {name}"));
        let v = velocity
            .get_mut(name)
            .unwrap_or_else(|| panic!("velocity missing for {name}"));
        debug_assert_eq!(p.dims(), g.dims());
        for i in 0..p.data.len() {
            let nv = m * v.data[i] - step * g.data[i];
            v.data[i] = nv;
            p.data[i] += nv;
        }
    }
}

pub fn zero_like<T: Scalar>(params: &Params<T>) -> Params<T> {
    params
        .iter()
        .map(|(name, t)| {
            let [n, c, h, w] = t.dims();
            (name.clone(), crate::tensor::Tensor::zeros(n, c, h, w))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn schedule_endpoints_are_within_half_percent() {
        let cfg = SgdConfig::default();
        let total = 1000;
        let start = cfg.learning_rate(0, total);
        let end = cfg.learning_rate(total, total);
        assert!((start - 1e-4).abs() / 1e-4 < 0.005, "lr(0) = {start}");
        assert!((end - 1e-5).abs() / 1e-5 < 0.005, "lr(T) = {end}");
    }

    #[test]
    fn schedule_midpoint_is_exact_average() {
        let cfg = SgdConfig::default();
        let mid = cfg.learning_rate(500, 1000);
        assert_eq!(mid, (1e-4 + 1e-5) / 2.0);
    }

    #[test]
    fn schedule_decreases_monotonically() {
        let cfg = SgdConfig::default();
        let total = 200;
        let mut prev = f64::INFINITY;
        for t in 0..=total {
            let lr = cfg.learning_rate(t, total);
            assert!(lr < prev);
            assert!(lr > 0.0);
            prev = lr;
        }
    }

    fn one_param(v: f32) -> Params<f32> {
        let mut p = Params::new();
        p.insert("w".into(), Tensor::filled(1, 1, 1, 1, v));
        p
    }

    #[test]
    fn zero_gradient_and_momentum_leave_params_unchanged() {
        let mut params = one_param(3.5);
        let grads = one_param(0.0);
        let mut vel = zero_like(&params);
        sgd_step(&mut params, &grads, &mut vel, 0.9, 0.1);
        assert_eq!(params["w"].data[0], 3.5);
    }

    #[test]
    fn momentum_accumulates_velocity_across_steps() {
        // g = 1, lr = 0.1, m = 0.5:
        // step 1: v = -0.1,  p = 1 - 0.1  = 0.9
        // step 2: v = -0.15, p = 0.9 - 0.15 = 0.75
        let mut params = one_param(1.0);
        let grads = one_param(1.0);
        let mut vel = zero_like(&params);
        sgd_step(&mut params, &grads, &mut vel, 0.5, 0.1);
        assert!((params["w"].data[0] - 0.9).abs() < 1e-7);
        sgd_step(&mut params, &grads, &mut vel, 0.5, 0.1);
        assert!((params["w"].data[0] - 0.75).abs() < 1e-7);
        assert!((vel["w"].data[0] + 0.15).abs() < 1e-7);
    }

    #[test]
    fn rejects_inverted_rates_and_zero_batch() {
        let inverted = SgdConfig {
            lr_end: 1e-3,
            ..SgdConfig::default()
        };
        assert!(inverted.validate().is_err());

        let empty_batch = SgdConfig {
            minibatch: 0,
            ..SgdConfig::default()
        };
        assert!(empty_batch.validate().is_err());
    }
}
