use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Training default learning rate.
pub const DEFAULT_LR: f64 = 7.5e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: DEFAULT_LR, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for every parameter of one store, in store order.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    /// One bias-corrected Adam update; gradients are zeroed afterwards.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::shape("adam_step", "moment count differs from parameter count"));
        }
        if params.iter().any(|p| p.grad.data().iter().any(|g| !g.is_finite())) {
            return Err(Error::NonFinite { op: "adam_step" });
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let one_b1 = T::from_f64(1.0 - c.beta1);
        let one_b2 = T::from_f64(1.0 - c.beta2);
        let step_size = T::from_f64(c.lr / bc1);
        let inv_sqrt_bc2 = T::from_f64(1.0 / bc2.sqrt());
        let eps = T::from_f64(c.eps);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let w = p.value.data_mut();
            for (((wi, gi), mi), vi) in w
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let g = *gi;
                *mi = b1 * *mi + one_b1 * g;
                *vi = b2 * *vi + one_b2 * g * g;
                *wi -= step_size * *mi / ((*vi).sqrt() * inv_sqrt_bc2 + eps);
            }
            p.grad.fill(T::ZERO);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(vals: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(&[vals.len()], vals.to_vec()).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut s = store(&[0.5, -1.0, 2.0]);
        let before = s.iter().next().unwrap().value.clone();
        let mut adam = AdamState::new(&s, AdamConfig::default());
        for _ in 0..10 {
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.iter().next().unwrap().value, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(&[0.0, 0.0]);
        let id = s.id("w").unwrap();
        s.grad_mut(id).data_mut().copy_from_slice(&[3.0, -0.01]);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        adam.step(&mut s).unwrap();
        let w = s.value(id).data();
        assert!((w[0] + DEFAULT_LR).abs() < 1e-9);
        assert!((w[1] - DEFAULT_LR).abs() < 1e-9);
        assert!(s.grad(id).data().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut s = store(&[1.0]);
        let id = s.id("w").unwrap();
        s.grad_mut(id).data_mut()[0] = f64::NAN;
        let mut adam = AdamState::new(&s, AdamConfig::default());
        assert!(adam.step(&mut s).is_err());
        assert_eq!(s.value(id).data()[0], 1.0);
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut s = store(&[3.0, -2.0]);
        let id = s.id("w").unwrap();
        let mut adam = AdamState::new(&s, AdamConfig { lr: 0.05, ..Default::default() });
        for _ in 0..2000 {
            let w = s.value(id).data().to_vec();
            s.grad_mut(id).data_mut().copy_from_slice(&[2.0 * w[0], 2.0 * w[1]]);
            adam.step(&mut s).unwrap();
        }
        assert!(s.value(id).data().iter().all(|v| v.abs() < 1e-2));
    }
}
