use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            algorithm: Algorithm::Sgd,
            lr,
            ..Self::default()
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Parameters excluded from optimizer updates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FreezeMask {
    frozen: BTreeSet<String>,
}

impl FreezeMask {
    pub fn none() -> Self {
        Self::default()
    }

    /// Freezes every parameter whose name starts with one of `prefixes`.
    /// A prefix that matches nothing is rejected.
    pub fn new<S: AsRef<str>>(params: &ParamStore, prefixes: &[S]) -> Result<Self> {
        let mut frozen = BTreeSet::new();
        for prefix in prefixes {
            let prefix = prefix.as_ref();
            let mut matched = false;
            for name in params.with_prefix(prefix) {
                matched = true;
                frozen.insert(name.to_string());
            }
            if !matched {
                return Err(Error::NoSuchParameterGroup(prefix.to_string()));
            }
        }
        Ok(Self { frozen })
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn len(&self) -> usize {
        self.frozen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frozen.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    first: Tensor,
    second: Tensor,
}

/// Optimizer hyperparameters plus per-parameter moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    config: OptimizerConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, params: &ParamStore) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", config.lr)));
        }
        let moments = match config.algorithm {
            Algorithm::Sgd => BTreeMap::new(),
            Algorithm::Adam => params
                .iter()
                .map(|(name, v)| {
                    (
                        name.to_string(),
                        Moments {
                            first: Tensor::zeros(v.shape()),
                            second: Tensor::zeros(v.shape()),
                        },
                    )
                })
                .collect(),
        };
        Ok(Self {
            config,
            step: 0,
            moments,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies the accumulated gradients of `params`; parameters in `mask` are left untouched.
    pub fn step(&mut self, params: &mut ParamStore, mask: &FreezeMask) -> Result<()> {
        for (name, value, grad) in params.iter_mut() {
            if value.shape() != grad.shape() {
                return Err(Error::ParamMismatch(format!("{name}: shape drift")));
            }
            if self.config.algorithm == Algorithm::Adam {
                match self.moments.get(name) {
                    Some(m) if m.first.shape() == value.shape() => {}
                    _ => {
                        return Err(Error::ParamMismatch(format!(
                            "{name}: optimizer state does not match parameter"
                        )))
                    }
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let OptimizerConfig {
            algorithm,
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        for (name, value, grad) in params.iter_mut() {
            if mask.is_frozen(name) {
                continue;
            }
            match algorithm {
                Algorithm::Sgd => {
                    for (p, g) in value.data_mut().iter_mut().zip(grad.data()) {
                        *p -= lr * g;
                    }
                }
                Algorithm::Adam => {
                    let m = self.moments.get_mut(name).expect("checked above");
                    let bias1 = 1.0 - beta1.powi(t);
                    let bias2 = 1.0 - beta2.powi(t);
                    for (((p, g), m1), m2) in value
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(m.first.data_mut())
                        .zip(m.second.data_mut())
                    {
                        *m1 = beta1 * *m1 + (1.0 - beta1) * g;
                        *m2 = beta2 * *m2 + (1.0 - beta2) * g * g;
                        let m_hat = *m1 / bias1;
                        let v_hat = *m2 / bias2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64, g: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_vec(vec![v])).unwrap();
        p.accumulate_named("w", &Tensor::from_vec(vec![g])).unwrap();
        p
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = single(1.0, 2.0);
        let mut s = OptimizerState::new(OptimizerConfig::sgd(0.1), &p).unwrap();
        s.step(&mut p, &FreezeMask::none()).unwrap();
        assert!((p.value("w").unwrap().item() - 0.8).abs() < 1e-15);
        assert_eq!(s.steps(), 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        for cfg in [OptimizerConfig::sgd(0.1), OptimizerConfig::adam(1e-3)] {
            let mut p = single(1.25, 0.0);
            let mut s = OptimizerState::new(cfg, &p).unwrap();
            for _ in 0..3 {
                s.step(&mut p, &FreezeMask::none()).unwrap();
            }
            assert_eq!(p.value("w").unwrap().item(), 1.25);
        }
    }

    #[test]
    fn adam_first_step() {
        let mut p = single(0.0, 0.5);
        let mut s = OptimizerState::new(OptimizerConfig::adam(0.001), &p).unwrap();
        s.step(&mut p, &FreezeMask::none()).unwrap();
        // m_hat = 0.5, v_hat = 0.25 after bias correction
        let expected = -0.001 * 0.5 / (0.5 + 1e-8);
        let got = p.value("w").unwrap().item();
        assert!((got - expected).abs() < 1e-18, "{got} vs {expected}");
        assert!((got + 0.001).abs() < 1e-10);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut p = ParamStore::new();
        p.insert("video.w", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        p.insert("motion.w", Tensor::from_vec(vec![3.0])).unwrap();
        p.accumulate_named("video.w", &Tensor::from_vec(vec![1.0, 1.0])).unwrap();
        p.accumulate_named("motion.w", &Tensor::from_vec(vec![1.0])).unwrap();
        let mask = FreezeMask::new(&p, &["video."]).unwrap();
        let mut s = OptimizerState::new(OptimizerConfig::adam(0.01), &p).unwrap();
        for _ in 0..10 {
            s.step(&mut p, &mask).unwrap();
        }
        assert_eq!(p.value("video.w").unwrap().data(), &[1.0, 2.0]);
        assert!(p.value("motion.w").unwrap().item() < 3.0);
    }

    #[test]
    fn unknown_prefix_is_rejected() {
        let p = single(0.0, 0.0);
        let err = FreezeMask::new(&p, &["audio."]).unwrap_err();
        assert!(err.to_string().starts_with("no such parameter group"));
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let p = single(0.0, 1.0);
        let mut s = OptimizerState::new(OptimizerConfig::adam(0.01), &p).unwrap();
        let mut other = ParamStore::new();
        other.insert("w", Tensor::from_vec(vec![0.0, 0.0])).unwrap();
        let err = s.step(&mut other, &FreezeMask::none()).unwrap_err();
        assert!(err.to_string().starts_with("parameter/gradient mismatch"));
    }

    #[test]
    fn steps_are_deterministic() {
        let run = || {
            let mut p = single(0.3, -0.7);
            let mut s = OptimizerState::new(OptimizerConfig::adam(0.01), &p).unwrap();
            for _ in 0..5 {
                s.step(&mut p, &FreezeMask::none()).unwrap();
            }
            p.value("w").unwrap().item().to_bits()
        };
        assert_eq!(run(), run());
    }
}
