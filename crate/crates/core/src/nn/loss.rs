use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mae,
    Mse,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mae => "mae",
            LossKind::Mse => "mse",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mae" => Ok(LossKind::Mae),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::config(format!("unknown loss `{other}`"))),
        }
    }
}

fn check(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::shape(format!(
            "prediction has {} values, target has {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::shape("loss over empty vectors"));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    check(pred, target)?;
    let s: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
    Ok(s / pred.len() as f64)
}

/// Mean squared error.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    check(pred, target)?;
    let s: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(s / pred.len() as f64)
}

impl LossKind {
    pub fn value(self, pred: &[f64], target: &[f64]) -> Result<f64> {
        match self {
            LossKind::Mae => mae_loss(pred, target),
            LossKind::Mse => mse_loss(pred, target),
        }
    }

    /// Gradient of [`LossKind::value`] with respect to `pred`. The MAE
    /// subgradient at a zero residual is 0.
    pub fn grad(self, pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
        check(pred, target)?;
        let n = pred.len() as f64;
        Ok(pred
            .iter()
            .zip(target)
            .map(|(p, t)| match self {
                LossKind::Mae => {
                    let r = p - t;
                    if r > 0.0 {
                        1.0 / n
                    } else if r < 0.0 {
                        -1.0 / n
                    } else {
                        0.0
                    }
                }
                LossKind::Mse => 2.0 * (p - t) / n,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn examples() {
        assert_eq!(mae_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae_loss(&[3.0], &[1.0]).unwrap(), 2.0);
        assert_eq!(mse_loss(&[3.0], &[1.0]).unwrap(), 4.0);
        assert!(mae_loss(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse_loss(&[], &[]).is_err());
        assert_eq!(LossKind::Mae.grad(&[1.0], &[1.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn random_vectors_against_direct_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<f64> = (0..17).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let t: Vec<f64> = (0..17).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut abs = 0.0;
        let mut sq = 0.0;
        for i in 0..17 {
            let d = p[i] - t[i];
            abs += if d < 0.0 { -d } else { d };
            sq += d * d;
        }
        assert!((mae_loss(&p, &t).unwrap() - abs / 17.0).abs() < 1e-12);
        assert!((mse_loss(&p, &t).unwrap() - sq / 17.0).abs() < 1e-12);
    }
}
