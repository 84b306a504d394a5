use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Moment buffers for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// Adam with bias correction. State is kept per named parameter, and only
/// parameters that receive a gradient in a step are touched by it.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    slots: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            slots: BTreeMap::new(),
        }
    }

    pub fn moments(&self, name: &str) -> Option<&Moments> {
        self.slots.get(name)
    }

    pub fn step(&mut self, name: &str, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::shape(format!(
                "adam `{name}`: parameter {:?} vs gradient {:?}",
                param.shape(),
                grad.shape()
            )));
        }
        let n = param.len();
        let slot = self.slots.entry(name.to_string()).or_insert_with(|| Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        });
        if slot.m.len() != n {
            return Err(Error::shape(format!(
                "adam `{name}`: state holds {} values, parameter {n}",
                slot.m.len()
            )));
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        slot.t += 1;
        let c1 = 1.0 - beta1.powi(slot.t as i32);
        let c2 = 1.0 - beta2.powi(slot.t as i32);
        for (((p, &g), m), v) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(slot.m.iter_mut())
            .zip(slot.v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = AdamState::new(AdamConfig::default());
        let mut p = Tensor::full(&[3], 0.5);
        adam.step("p", &mut p, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(p.data(), &[0.5; 3]);
        assert_eq!(adam.moments("p").unwrap().t, 1);
    }

    #[test]
    fn first_step_is_minus_lr_sign() {
        let mut adam = AdamState::new(AdamConfig::default());
        let mut p = Tensor::zeros(&[1]);
        adam.step("p", &mut p, &Tensor::scalar(2.0)).unwrap();
        assert!((p.item() + 0.001).abs() < 1e-10);
    }

    #[test]
    fn three_steps_match_reference() {
        // Hand-rolled scalar Adam, written out independently.
        let (lr, b1, b2, eps) = (1e-3f64, 0.9f64, 0.999f64, 1e-8f64);
        let g = 0.7;
        let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            theta -= lr * mh / (vh.sqrt() + eps);
        }
        let mut adam = AdamState::new(AdamConfig::default());
        let mut p = Tensor::scalar(1.0);
        for _ in 0..3 {
            adam.step("p", &mut p, &Tensor::scalar(g)).unwrap();
        }
        assert!((p.item() - theta).abs() < 1e-15);
        assert_eq!(adam.moments("p").unwrap().t, 3);
    }

    #[test]
    fn shape_mismatch() {
        let mut adam = AdamState::new(AdamConfig::default());
        let mut p = Tensor::zeros(&[2]);
        assert!(adam.step("p", &mut p, &Tensor::zeros(&[3])).is_err());
    }
}
