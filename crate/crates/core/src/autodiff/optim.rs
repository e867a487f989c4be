use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update from the stored gradients, then clears them.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::invalid("adam_step", "parameter set changed since creation"));
        }
        let ids: Vec<_> = params.ids().collect();
        for &id in &ids {
            if params.get(id).grad().is_none() {
                return Err(Error::invalid(
                    "adam_step",
                    format!("parameter `{}` has no gradient", params.name(id)),
                ));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (k, id) in ids.into_iter().enumerate() {
            let t = params.get_mut(id);
            let grad = t.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for (i, value) in t.values_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *value -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            t.clear_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Tensor};

    fn quadratic_step(store: &mut ParamStore, target: f64) -> f64 {
        let mut g = Graph::new();
        let id = store.ids().next().unwrap();
        let x = g.param(store, id);
        let c = g.constant(vec![1], vec![target]).unwrap();
        let d = g.sub(x, c).unwrap();
        let loss = g.sum_squares(d).unwrap();
        let grads = g.backward(loss).unwrap();
        g.write_param_grads(&grads, store);
        g.scalar(loss)
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap());
        let mut adam = Adam::new(AdamConfig::default(), &store);
        for _ in 0..10 {
            store.get_mut(id).accumulate_grad(&[0.0, 0.0, 0.0]);
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.get(id).values(), &[0.5, -1.0, 2.0]);
        assert_eq!(adam.steps_taken(), 10);
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        let mut adam = Adam::new(AdamConfig::default(), &store);
        for _ in 0..50 {
            store.get_mut(id).accumulate_grad(&[2.5, -0.1]);
            adam.step(&mut store).unwrap();
        }
        let v = store.get(id).values();
        assert!(v[0] < 0.0 && v[1] > 0.0);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(1.0));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        assert!(adam.step(&mut store).is_err());
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::scalar(0.0));
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            &store,
        );
        for _ in 0..500 {
            quadratic_step(&mut store, 3.0);
            adam.step(&mut store).unwrap();
        }
        let x = store.get(store.ids().next().unwrap()).values()[0];
        assert!((x - 3.0).abs() < 1e-2, "x = {x}");
    }
}
