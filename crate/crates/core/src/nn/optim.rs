use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::Param;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::config(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Training hyper-parameters. The seed drives initialization, the
/// train/validation split and batch order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 30,
            optimizer: OptimizerKind::Adam,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        Ok(())
    }
}

/// Share of distinct ids held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.2;

/// Shuffles the sorted distinct ids with `seed` and holds out
/// `round(fraction·n)` of them (at most `n − 1`). Returns (train, val).
pub fn split_ids(ids: &[&str], fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut unique: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
    unique.sort();
    unique.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    unique.shuffle(&mut rng);
    let n_val = ((unique.len() as f64 * fraction).round() as usize).min(unique.len().saturating_sub(1));
    let val = unique.split_off(unique.len() - n_val);
    let (mut train, mut val) = (unique, val);
    train.sort();
    val.sort();
    (train, val)
}

fn check_shapes(params: &[&mut Param], expected: &[usize]) -> Result<()> {
    if params.len() != expected.len()
        || params.iter().zip(expected).any(|(p, &n)| p.len() != n || p.grad.len() != n)
    {
        return Err(Error::shape("optimizer state does not match parameters"));
    }
    Ok(())
}

/// `θ ← θ − lr·g`.
pub fn sgd_step(params: &mut [&mut Param], lr: f64) -> Result<()> {
    for p in params.iter_mut() {
        if p.grad.len() != p.value.len() {
            return Err(Error::shape("gradient and parameter lengths differ"));
        }
        for (v, g) in p.value.iter_mut().zip(&p.grad) {
            *v -= lr * g;
        }
    }
    Ok(())
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(sizes: &[usize]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) -> Result<()> {
        let sizes: Vec<usize> = self.m.iter().map(Vec::len).collect();
        check_shapes(params, &sizes)?;
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.value[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Optimizer selected by [`TrainConfig::optimizer`].
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, sizes: &[usize]) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(sizes)),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) -> Result<()> {
        match self {
            Optimizer::Sgd => sgd_step(params, lr),
            Optimizer::Adam(adam) => adam.step(params, lr),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(value: f64, grad: f64) -> Param {
        Param {
            shape: vec![1],
            value: vec![value],
            grad: vec![grad],
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = param(1.5, 0.0);
        sgd_step(&mut [&mut p], 0.1).unwrap();
        assert_eq!(p.value, vec![1.5]);
        let mut adam = Adam::new(&[1]);
        adam.step(&mut [&mut p], 0.1).unwrap();
        assert_eq!(p.value, vec![1.5]);
    }

    #[test]
    fn sgd_example() {
        let mut p = param(1.0, 2.0);
        sgd_step(&mut [&mut p], 0.1).unwrap();
        assert!((p.value[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_matches_hand_formula() {
        for g in [0.3, -2.0, 1e-3] {
            let mut p = param(1.0, g);
            let lr = 0.01;
            let mut adam = Adam::new(&[1]);
            adam.step(&mut [&mut p], lr).unwrap();
            // m̂ = g, v̂ = g², so the first update is lr·g/(|g| + ε).
            let want = 1.0 - lr * g / (g.abs() + 1e-8);
            assert!((p.value[0] - want).abs() < 1e-6);
            assert!(((1.0 - p.value[0]).abs() - lr).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_rejects_mismatched_state() {
        let mut p = param(1.0, 1.0);
        let mut adam = Adam::new(&[2]);
        assert!(adam.step(&mut [&mut p], 0.1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(TrainConfig::default().batch_size, 64);
    }
}
