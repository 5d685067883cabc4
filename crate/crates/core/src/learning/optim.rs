use ndarray::{Array, Dimension, NdFloat, Zip};
use serde::{Deserialize, Serialize};

use crate::dynamics::cast;
use crate::error::{ensure_shape, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaMaxConfig {
    pub lr: f64,
    #[serde(default)]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta2() -> f64 {
    0.95
}

fn default_eps() -> f64 {
    1e-8
}

impl Default for AdaMaxConfig {
    fn default() -> Self {
        AdaMaxConfig {
            lr: 1e-9,
            beta1: 0.0,
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl AdaMaxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return Err(Error::Config(format!("invalid AdaMax parameters {self:?}")));
        }
        Ok(())
    }
}

/// First moment and infinity norm for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaMaxState<A, D: Dimension> {
    pub m: Array<A, D>,
    pub u: Array<A, D>,
    pub t: u64,
}

impl<A: NdFloat, D: Dimension> AdaMaxState<A, D> {
    pub fn new(shape: D) -> Self {
        AdaMaxState {
            m: Array::zeros(shape.clone()),
            u: Array::zeros(shape),
            t: 0,
        }
    }

    /// `m ← β1 m + (1-β1) g`, `u ← max(β2 u, |g|)`,
    /// `θ ← θ - lr/(1-β1ᵗ) · m/(u+ε)`.
    pub fn step(&mut self, cfg: &AdaMaxConfig, lr: f64, grad: &Array<A, D>, param: &mut Array<A, D>) -> Result<()> {
        ensure_shape("adamax grad", self.m.shape(), grad.shape())?;
        ensure_shape("adamax param", self.m.shape(), param.shape())?;
        self.t += 1;
        let b1 = cast::<A>(cfg.beta1);
        let b2 = cast::<A>(cfg.beta2);
        let eps = cast::<A>(cfg.eps);
        let step = cast::<A>(lr / (1.0 - cfg.beta1.powi(self.t.min(i32::MAX as u64) as i32)));
        let one = A::one();
        Zip::from(&mut self.m)
            .and(&mut self.u)
            .and(grad)
            .and(param)
            .for_each(|m, u, &g, p| {
                *m = b1 * *m + (one - b1) * g;
                *u = (b2 * *u).max(g.abs());
                *p -= step * *m / (*u + eps);
            });
        Ok(())
    }
}

/// Divides the learning rate by `divisor` every `interval` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub divisor: f64,
    pub interval: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            divisor: 5.0,
            interval: 500,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.divisor > 1.0) || self.interval == 0 {
            return Err(Error::Config(format!("invalid learning-rate schedule {self:?}")));
        }
        Ok(())
    }

    pub fn lr_at(&self, base_lr: f64, step: u64) -> f64 {
        base_lr / self.divisor.powf((step / self.interval) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array1, Ix1};

    #[test]
    fn zero_gradient_leaves_parameters() {
        let cfg = AdaMaxConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut st = AdaMaxState::<f64, Ix1>::new(Ix1(3));
        let mut p = arr1(&[1.0, -2.0, 3.0]);
        for _ in 0..50 {
            st.step(&cfg, cfg.lr, &Array1::zeros(3), &mut p).unwrap();
        }
        assert_eq!(p, arr1(&[1.0, -2.0, 3.0]));
        assert_eq!(st.t, 50);
    }

    #[test]
    fn beta1_zero_keeps_raw_gradient() {
        let cfg = AdaMaxConfig {
            lr: 0.01,
            ..Default::default()
        };
        let mut st = AdaMaxState::<f64, Ix1>::new(Ix1(2));
        let mut p = arr1(&[0.0, 0.0]);
        let g = arr1(&[0.5, -2.0]);
        st.step(&cfg, cfg.lr, &g, &mut p).unwrap();
        assert_eq!(st.m, g);
        assert_eq!(st.u, arr1(&[0.5, 2.0]));
        // sign-normalised step of size lr
        assert!((p[0] + 0.01).abs() < 1e-9 && (p[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn adamax_matches_reference_with_momentum() {
        let cfg = AdaMaxConfig {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut st = AdaMaxState::<f64, Ix1>::new(Ix1(1));
        let mut p = arr1(&[1.0]);
        let grads = [0.3, -0.1, 0.2];
        let (mut m, mut u, mut theta) = (0.0f64, 0.0f64, 1.0f64);
        for (t, &g) in grads.iter().enumerate() {
            st.step(&cfg, cfg.lr, &arr1(&[g]), &mut p).unwrap();
            m = 0.9 * m + 0.1 * g;
            u = (0.999 * u).max(g.abs());
            theta -= 0.002 / (1.0 - 0.9f64.powi(t as i32 + 1)) * m / (u + 1e-8);
        }
        assert!((p[0] - theta).abs() < 1e-15);
    }

    #[test]
    fn identical_calls_are_deterministic() {
        let cfg = AdaMaxConfig {
            lr: 0.01,
            ..Default::default()
        };
        let g = arr1(&[0.1f32, 0.2, -0.3]);
        let mut a = (AdaMaxState::<f32, Ix1>::new(Ix1(3)), arr1(&[1.0f32, 2.0, 3.0]));
        let mut b = a.clone();
        a.0.step(&cfg, cfg.lr, &g, &mut a.1).unwrap();
        b.0.step(&cfg, cfg.lr, &g, &mut b.1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn schedule_examples() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at(1.0, 0), 1.0);
        assert_eq!(s.lr_at(1.0, 499), 1.0);
        assert_eq!(s.lr_at(1.0, 500), 0.2);
        assert!((s.lr_at(1.0, 1000) - 1.0 / 25.0).abs() < 1e-15);
        assert!(LrSchedule {
            divisor: 1.0,
            interval: 5
        }
        .validate()
        .is_err());
    }
}
