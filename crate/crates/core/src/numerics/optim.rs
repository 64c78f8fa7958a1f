use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

/// Adam moment accumulators for one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || {
            params
                .values()
                .iter()
                .map(|p| Tensor::zeros(p.rows(), p.cols()))
                .collect::<Vec<_>>()
        };
        Adam {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update to `params`.
    ///
    /// Nothing is modified when any gradient holds a non-finite value; the
    /// error names the first offending parameter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for ((name, p), g) in params.names().iter().zip(params.values()).zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient {:?} for parameter `{name}` of shape {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }

        let scale = match self.config.clip_norm {
            Some(max) => {
                let norm = grads
                    .iter()
                    .flat_map(|g| g.data())
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .values_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gv = gv * scale;
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    /// Moment tensors keyed `adam.m/<name>` and `adam.v/<name>` for checkpointing.
    pub fn state_map(&self, params: &ParamStore) -> BTreeMap<String, Tensor> {
        let mut map = BTreeMap::new();
        for ((name, m), v) in params.names().iter().zip(&self.first).zip(&self.second) {
            map.insert(format!("adam.m/{name}"), m.clone());
            map.insert(format!("adam.v/{name}"), v.clone());
        }
        map
    }

    pub fn restore(
        config: AdamConfig,
        params: &ParamStore,
        step: u64,
        state: &BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        let mut adam = Adam::new(config, params);
        adam.step = step;
        for (i, name) in params.names().iter().enumerate() {
            for (key, slot) in [
                (format!("adam.m/{name}"), &mut adam.first[i]),
                (format!("adam.v/{name}"), &mut adam.second[i]),
            ] {
                let t = state
                    .get(&key)
                    .ok_or_else(|| Error::Format(format!("optimizer state lacks `{key}`")))?;
                if t.shape() != slot.shape() {
                    return Err(Error::Format(format!("optimizer state `{key}` has wrong shape")));
                }
                *slot = t.clone();
            }
        }
        Ok(adam)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Tensor::scalar(v));
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the update is lr·g/(|g|+ε) ≈ lr.
        let mut params = scalar_store(0.0);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            clip_norm: None,
            ..Default::default()
        };
        let mut adam = Adam::new(cfg, &params);
        adam.step(&mut params, &[Tensor::scalar(1.0)]).unwrap();
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((params.values()[0].item() - expected).abs() < 1e-15);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut params = scalar_store(1.5);
        let mut adam = Adam::new(AdamConfig::default(), &params);
        adam.step(&mut params, &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(params.values()[0].item(), 1.5);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let mut params = scalar_store(0.0);
        let cfg = AdamConfig {
            clip_norm: None,
            ..Default::default()
        };
        let mut adam = Adam::new(cfg, &params);
        adam.step(&mut params, &[Tensor::scalar(1.0)]).unwrap();
        let m1 = adam.first[0].item();
        adam.step(&mut params, &[Tensor::scalar(0.0)]).unwrap();
        assert!((adam.first[0].item() - 0.9 * m1).abs() < 1e-15);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut params = scalar_store(0.0);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            clip_norm: None,
            ..Default::default()
        };
        let mut adam = Adam::new(cfg, &params);
        for _ in 0..100 {
            let p = params.values()[0].item();
            adam.step(&mut params, &[Tensor::scalar(2.0 * (p - 2.0))]).unwrap();
        }
        let p = params.values()[0].item();
        assert!((p - 2.0).abs() < 0.05, "p = {p}");
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut params = scalar_store(0.5);
        let mut adam = Adam::new(AdamConfig::default(), &params);
        let err = adam.step(&mut params, &[Tensor::scalar(f64::NAN)]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "p"));
        assert_eq!(params.values()[0].item(), 0.5);
        assert_eq!(adam.step_count(), 0);
    }
}
