//! Reverse-mode differentiation over fixed layer stacks, with losses,
//! optimizers and a central-difference gradient oracle.

pub mod gradcheck;
mod layer;
mod loss;
mod model;
mod optim;

pub use layer::{
    swish, swish_grad, Cache, Conv1d, Dense, DepthwiseSeparable2d, Layer, LayerSpec, Param,
};
pub use loss::{mae_loss, mse_loss, LossKind};
pub use model::{count_params, Sequential};
pub use optim::{sgd_step, split_ids, Adam, Optimizer, OptimizerKind, TrainConfig, VALIDATION_FRACTION};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A model whose scalar batch loss can be evaluated and differentiated with
/// respect to all of its parameters.
pub trait Differentiable {
    type Batch: ?Sized;

    fn params(&self) -> Vec<&Param>;

    fn params_mut(&mut self) -> Vec<&mut Param>;

    /// Mean loss over the batch.
    fn loss(&self, batch: &Self::Batch) -> Result<f64>;

    /// Same value as [`Differentiable::loss`]; adds its gradient into every
    /// `Param::grad`.
    fn loss_and_accumulate(&mut self, batch: &Self::Batch) -> Result<f64>;

    fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn param_sizes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }
}

/// Inputs with regression targets, scored by `loss`.
#[derive(Debug, Clone)]
pub struct Supervised {
    pub samples: Vec<(Tensor, Vec<f64>)>,
    pub loss: LossKind,
}

impl Differentiable for Sequential {
    type Batch = Supervised;

    fn params(&self) -> Vec<&Param> {
        Sequential::params(self)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Sequential::params_mut(self)
    }

    fn loss(&self, batch: &Supervised) -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in &batch.samples {
            let pred = self.forward(x)?;
            total += batch.loss.value(pred.data(), y)?;
        }
        Ok(total / batch.samples.len() as f64)
    }

    fn loss_and_accumulate(&mut self, batch: &Supervised) -> Result<f64> {
        let n = batch.samples.len() as f64;
        let mut total = 0.0;
        for (x, y) in &batch.samples {
            let (pred, caches) = self.forward_train(x)?;
            total += batch.loss.value(pred.data(), y)?;
            let g: Vec<f64> = batch
                .loss
                .grad(pred.data(), y)?
                .into_iter()
                .map(|v| v / n)
                .collect();
            self.backward(&caches, Tensor::from_parts(pred.shape().to_vec(), g))?;
        }
        Ok(total / n)
    }
}

/// Runs `per_sample` on a gradient-cleared clone of `model` for every sample
/// in parallel, then adds the clones' gradients into `model` in sample order,
/// so the sums do not depend on the thread count. Returns each call's output.
pub fn accumulate_per_sample<M, S, T, F>(model: &mut M, samples: &[S], per_sample: F) -> Result<Vec<T>>
where
    M: Differentiable + Clone + Sync,
    S: Sync,
    T: Send,
    F: Fn(&mut M, &S) -> Result<T> + Sync,
{
    let base: &M = model;
    let results: Vec<(T, Vec<Vec<f64>>)> = samples
        .par_iter()
        .map(|s| {
            let mut m = base.clone();
            m.zero_grad();
            let out = per_sample(&mut m, s)?;
            let grads = m.params_mut().into_iter().map(|p| std::mem::take(&mut p.grad)).collect();
            Ok((out, grads))
        })
        .collect::<Result<_>>()?;
    let mut outs = Vec::with_capacity(results.len());
    for (out, grads) in results {
        let mut params = model.params_mut();
        if params.len() != grads.len() {
            return Err(Error::shape("per-sample gradient count changed"));
        }
        for (p, g) in params.iter_mut().zip(grads) {
            p.grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        outs.push(out);
    }
    Ok(outs)
}

/// Loss value and exact gradients, one vector per parameter tensor in model
/// order. Existing gradient buffers are cleared first.
pub fn value_and_grad<M: Differentiable>(model: &mut M, batch: &M::Batch) -> Result<(f64, Vec<Vec<f64>>)> {
    model.zero_grad();
    let value = model.loss_and_accumulate(batch)?;
    let grads = model.params().iter().map(|p| p.grad.clone()).collect();
    Ok((value, grads))
}

/// Central difference `(L(θ+ε) − L(θ−ε)) / 2ε` for every parameter element.
pub fn finite_diff_grad<M: Differentiable>(model: &mut M, batch: &M::Batch, epsilon: f64) -> Result<Vec<Vec<f64>>> {
    let sizes = model.param_sizes();
    let mut out = Vec::with_capacity(sizes.len());
    for (pi, &n) in sizes.iter().enumerate() {
        let coords: Vec<(usize, usize)> = (0..n).map(|i| (pi, i)).collect();
        out.push(finite_diff_at(model, batch, epsilon, &coords)?);
    }
    Ok(out)
}

/// Central differences at selected `(param index, element index)` pairs.
pub fn finite_diff_at<M: Differentiable>(
    model: &mut M,
    batch: &M::Batch,
    epsilon: f64,
    coords: &[(usize, usize)],
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(coords.len());
    for &(pi, i) in coords {
        let orig = model.params()[pi].value[i];
        model.params_mut()[pi].value[i] = orig + epsilon;
        let plus = model.loss(batch);
        model.params_mut()[pi].value[i] = orig - epsilon;
        let minus = model.loss(batch);
        model.params_mut()[pi].value[i] = orig;
        out.push((plus? - minus?) / (2.0 * epsilon));
    }
    Ok(out)
}

/// `max|a − b| / max(max|a|, max|b|)`; 0 when both are identically zero.
pub fn grad_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_model(inputs: usize, outputs: usize, seed: u64) -> Sequential {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Sequential::from_specs(&[LayerSpec::Dense { inputs, outputs }], &mut rng).unwrap()
    }

    #[test]
    fn pooling_only_model_has_no_gradients() {
        let mut m = Sequential::new(vec![Layer::GlobalMaxPool]);
        let batch = Supervised {
            samples: vec![(Tensor::new(vec![2, 1], vec![1.0, 3.0]).unwrap(), vec![0.0])],
            loss: LossKind::Mse,
        };
        let (v, g) = value_and_grad(&mut m, &batch).unwrap();
        assert_eq!(v, 9.0);
        assert!(g.is_empty());
        assert_eq!(count_params(&m), 0);
    }

    #[test]
    fn single_dense_mse_closed_form() {
        let mut m = dense_model(3, 1, 1);
        let x = vec![0.5, -1.0, 2.0];
        let y = 0.7;
        let batch = Supervised {
            samples: vec![(Tensor::from_vec(x.clone()), vec![y])],
            loss: LossKind::Mse,
        };
        let yhat = m.forward(&Tensor::from_vec(x.clone())).unwrap().data()[0];
        let (_, g) = value_and_grad(&mut m, &batch).unwrap();
        for i in 0..3 {
            assert!((g[0][i] - 2.0 * (yhat - y) * x[i]).abs() < 1e-12);
        }
        assert!((g[1][0] - 2.0 * (yhat - y)).abs() < 1e-12);
    }

    #[test]
    fn linear_model_finite_differences_are_exact() {
        // A dense layer scored by a linear functional (MAE away from zero
        // residual is linear in θ), so central differences carry only rounding.
        let mut m = dense_model(4, 1, 2);
        let batch = Supervised {
            samples: vec![(Tensor::from_vec(vec![0.5, 0.25, -1.0, 2.0]), vec![100.0])],
            loss: LossKind::Mae,
        };
        let (_, exact) = value_and_grad(&mut m, &batch).unwrap();
        for eps in [1e-1, 1e-3, 1e-5] {
            let fd = finite_diff_grad(&mut m, &batch, eps).unwrap();
            for (a, b) in exact.iter().flatten().zip(fd.iter().flatten()) {
                assert!((a - b).abs() < 1e-9, "eps {eps}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn quadratic_loss_error_is_second_order() {
        // Cubic dependence through swish makes the O(ε²) term visible.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = Sequential::from_specs(
            &[
                LayerSpec::Dense { inputs: 2, outputs: 3 },
                LayerSpec::Swish,
                LayerSpec::Dense { inputs: 3, outputs: 1 },
            ],
            &mut rng,
        )
        .unwrap();
        let batch = Supervised {
            samples: vec![(Tensor::from_vec(vec![1.2, -0.7]), vec![0.3])],
            loss: LossKind::Mse,
        };
        let (_, exact) = value_and_grad(&mut m, &batch).unwrap();
        let err = |eps: f64, m: &mut Sequential| {
            let fd = finite_diff_grad(m, &batch, eps).unwrap();
            exact
                .iter()
                .flatten()
                .zip(fd.iter().flatten())
                .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()))
        };
        let e1 = err(1e-2, &mut m);
        let e2 = err(5e-3, &mut m);
        let ratio = e1 / e2;
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn sgd_step_decreases_smooth_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = Sequential::from_specs(
            &[
                LayerSpec::Dense { inputs: 3, outputs: 4 },
                LayerSpec::Swish,
                LayerSpec::Dense { inputs: 4, outputs: 2 },
            ],
            &mut rng,
        )
        .unwrap();
        let samples = (0..5)
            .map(|_| {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (Tensor::from_vec(x), vec![rng.gen_range(-1.0..1.0), 0.5])
            })
            .collect();
        let batch = Supervised { samples, loss: LossKind::Mse };
        let (before, _) = value_and_grad(&mut m, &batch).unwrap();
        sgd_step(&mut m.params_mut(), 1e-3).unwrap();
        let after = m.loss(&batch).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn rel_error_metric() {
        assert_eq!(grad_rel_error(&[0.0], &[0.0]), 0.0);
        assert!((grad_rel_error(&[1.0, 2.0], &[1.0, 2.2]) - 0.2 / 2.2).abs() < 1e-15);
    }
}
