//! Central-difference checks of every layer kind and of whole models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{finite_diff_at, grad_rel_error, value_and_grad, Differentiable, Layer, LayerSpec, Param};
use crate::conv::Padding;
use crate::error::Result;
use crate::ef::{EfModel, EfModelConfig, EfSample, TargetScaling};
use crate::lvd::{Calibration, CoordScaling, KeypointSet, LossWeights, LvdModel, LvdModelConfig, LvdSample};
use crate::tensor::{Tensor, Volume};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub name: String,
    pub instances: usize,
    /// Gradient entries compared across all instances.
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheck {
    fn new(name: &str, errors: &[f64], coordinates: usize, tolerance: f64) -> Self {
        let max_rel_error = errors.iter().copied().fold(0.0, f64::max);
        GradCheck {
            name: name.to_string(),
            instances: errors.len(),
            coordinates,
            max_rel_error,
            tolerance,
            passed: errors.iter().all(|e| *e <= tolerance),
        }
    }
}

/// One layer scored by a fixed random linear functional `Σ r_i·y_i` of its
/// output. The input is held as an extra parameter so its gradient is
/// checked alongside the weights.
#[derive(Debug, Clone)]
pub struct LayerProbe {
    pub layer: Layer,
    pub input: Param,
    pub readout: Vec<f64>,
}

impl LayerProbe {
    pub fn new(spec: &LayerSpec, input_shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut layer = Layer::from_spec(spec, rng)?;
        // Glorot init leaves biases at zero; perturb them so their gradients
        // are exercised at a generic point.
        for p in layer.params_mut() {
            p.value.iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
        }
        let n: usize = input_shape.iter().product();
        let out: usize = layer.output_shape(&input_shape)?.iter().product();
        let mut input = Param::zeros(input_shape);
        input.value = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let readout = (0..out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Ok(LayerProbe { layer, input, readout })
    }

    fn input_tensor(&self) -> Result<Tensor> {
        Tensor::new(self.input.shape.clone(), self.input.value.clone())
    }
}

impl Differentiable for LayerProbe {
    type Batch = ();

    fn params(&self) -> Vec<&Param> {
        let mut p = self.layer.params();
        p.push(&self.input);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.layer.params_mut();
        p.push(&mut self.input);
        p
    }

    fn loss(&self, _: &()) -> Result<f64> {
        let (y, _) = self.layer.forward(&self.input_tensor()?)?;
        Ok(y.data().iter().zip(&self.readout).map(|(a, b)| a * b).sum())
    }

    fn loss_and_accumulate(&mut self, batch: &()) -> Result<f64> {
        let x = self.input_tensor()?;
        let (y, cache) = self.layer.forward(&x)?;
        let g = Tensor::new(y.shape().to_vec(), self.readout.clone())?;
        let gx = self.layer.backward(&cache, &g)?;
        self.input.grad.iter_mut().zip(gx.data()).for_each(|(a, b)| *a += b);
        self.loss(batch)
    }
}

/// Layer kinds covered by [`check_layer_kind`].
pub const LAYER_KINDS: [&str; 8] = [
    "conv1d",
    "dense",
    "swish",
    "global_max_pool",
    "depthwise_separable2d",
    "max_pool2d",
    "global_avg_pool2d",
    "flatten",
];

/// A random small instance of `kind`: its spec and an input shape.
pub fn random_instance(kind: &str, i: usize, rng: &mut ChaCha8Rng) -> Option<(LayerSpec, Vec<usize>)> {
    let mut r = |lo: usize, hi: usize| rng.gen_range(lo..=hi);
    Some(match kind {
        "conv1d" => {
            let kernel = [1, 3, 5][r(0, 2)];
            let padding = if i.is_multiple_of(2) { Padding::Same } else { Padding::Valid };
            let t = match padding {
                Padding::Same => r(1, 8),
                Padding::Valid => kernel + r(0, 5),
            };
            let (d, f) = (r(1, 4), r(1, 4));
            (LayerSpec::Conv1d { in_channels: d, out_channels: f, kernel, padding }, vec![t, d])
        }
        "dense" => {
            let (d, h) = (r(1, 6), r(1, 5));
            (LayerSpec::Dense { inputs: d, outputs: h }, vec![d])
        }
        "swish" => (LayerSpec::Swish, vec![r(1, 10)]),
        "global_max_pool" => (LayerSpec::GlobalMaxPool, vec![r(1, 8), r(1, 4)]),
        "depthwise_separable2d" => {
            let (ci, co) = (r(1, 3), r(1, 3));
            let kernel = [1, 3, 5][r(0, 2)];
            (
                LayerSpec::DepthwiseSeparable2d { in_channels: ci, out_channels: co, kernel },
                vec![r(1, 5), r(1, 5), ci],
            )
        }
        "max_pool2d" => (LayerSpec::MaxPool2d, vec![r(2, 6), r(2, 6), r(1, 3)]),
        "global_avg_pool2d" => (LayerSpec::GlobalAvgPool2d, vec![r(1, 5), r(1, 5), r(1, 3)]),
        "flatten" => (LayerSpec::Flatten, vec![r(1, 4), r(1, 4), r(1, 3)]),
        _ => return None,
    })
}

/// Relative error between the analytic and full finite-difference gradient
/// of `model`, over all parameters concatenated. Returns (error, entries).
pub fn full_check<M: Differentiable>(model: &mut M, batch: &M::Batch, epsilon: f64) -> Result<(f64, usize)> {
    let (_, analytic) = value_and_grad(model, batch)?;
    let numeric = super::finite_diff_grad(model, batch, epsilon)?;
    let a: Vec<f64> = analytic.concat();
    let n: Vec<f64> = numeric.concat();
    Ok((grad_rel_error(&a, &n), a.len()))
}

/// Like [`full_check`] but only at `per_tensor` random entries of every
/// parameter tensor (all entries of tensors smaller than that).
pub fn sampled_check<M: Differentiable>(
    model: &mut M,
    batch: &M::Batch,
    epsilon: f64,
    per_tensor: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize)> {
    let (_, analytic) = value_and_grad(model, batch)?;
    let mut coords = Vec::new();
    for (pi, g) in analytic.iter().enumerate() {
        if g.len() <= per_tensor {
            coords.extend((0..g.len()).map(|i| (pi, i)));
        } else {
            coords.extend((0..per_tensor).map(|_| (pi, rng.gen_range(0..g.len()))));
        }
    }
    let numeric = finite_diff_at(model, batch, epsilon, &coords)?;
    let a: Vec<f64> = coords.iter().map(|&(pi, i)| analytic[pi][i]).collect();
    Ok((grad_rel_error(&a, &numeric), coords.len()))
}

/// `instances` random probes of one layer kind, each checked in full.
pub fn check_layer_kind(kind: &str, instances: usize, seed: u64, tolerance: f64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(instances);
    let mut coords = 0;
    for i in 0..instances {
        let (spec, shape) = random_instance(kind, i, &mut rng)
            .ok_or_else(|| crate::error::Error::config(format!("unknown layer kind `{kind}`")))?;
        let mut probe = LayerProbe::new(&spec, shape, &mut rng)?;
        let (e, n) = full_check(&mut probe, &(), DEFAULT_EPSILON)?;
        errors.push(e);
        coords += n;
    }
    Ok(GradCheck::new(kind, &errors, coords, tolerance))
}

/// Every layer kind, seeds derived from `seed` in [`LAYER_KINDS`] order.
pub fn check_all_layers(instances: usize, seed: u64, tolerance: f64) -> Result<Vec<GradCheck>> {
    LAYER_KINDS
        .iter()
        .enumerate()
        .map(|(k, kind)| check_layer_kind(kind, instances, seed.wrapping_add(k as u64), tolerance))
        .collect()
}

/// Wraps model-level results as a [`GradCheck`].
pub fn model_check(name: &str, results: &[(f64, usize)], tolerance: f64) -> GradCheck {
    let errors: Vec<f64> = results.iter().map(|r| r.0).collect();
    GradCheck::new(name, &errors, results.iter().map(|r| r.1).sum(), tolerance)
}

/// End-to-end check of a small EF model (8×8 frames) on two random clips,
/// at `per_tensor` sampled entries of each parameter tensor.
pub fn check_ef_model(seed: u64, per_tensor: usize, tolerance: f64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = EfModelConfig {
        frame_dims: [8, 8],
        encoder_dim: 8,
        encoder_channels: [4, 4],
        ..EfModelConfig::default()
    };
    let mut model = EfModel::new(config, seed)?;
    model.scaling = Some(TargetScaling { offset: 3.0, scale: 2.0 });
    // Targets far from the initial outputs keep the absolute loss off its kink.
    let batch = [("a", 12, 55.0), ("b", 9, 70.0)]
        .iter()
        .map(|&(id, nt, ef)| {
            let clip = Volume::from_fn([8, 8, nt], |_, _, _| rng.gen_range(0.0..1.0));
            EfSample::new(id, clip, ef)
        })
        .collect::<Result<Vec<_>>>()?;
    let r = sampled_check(&mut model, &batch, DEFAULT_EPSILON, per_tensor, &mut rng)?;
    Ok(model_check("ef_model", &[r], tolerance))
}

/// End-to-end check of a small LVD model (16×16 frames) on two random
/// frames, over every parameter.
pub fn check_lvd_model(seed: u64, tolerance: f64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = LvdModelConfig {
        frame_dims: [16, 16],
        channels: vec![2, 3],
        hidden: 6,
        ..LvdModelConfig::default()
    };
    let mut model = LvdModel::new(config, seed)?;
    model.scaling = Some(CoordScaling {
        offset: std::array::from_fn(|_| rng.gen_range(4.0..12.0)),
        scale: std::array::from_fn(|_| rng.gen_range(1.0..3.0)),
    });
    model.loss_weights = Some(LossWeights { ivs: 0.5, lvid: 0.2, lvpw: 0.7 });
    let batch = (0..2)
        .map(|i| {
            let frame = Volume::from_fn([16, 16, 1], |_, _, _| rng.gen_range(0.0..1.0));
            let flat: Vec<f64> = (0..8).map(|_| rng.gen_range(1.0..15.0)).collect();
            LvdSample::new(format!("f{i}"), frame, KeypointSet::from_flat(&flat)?, Calibration::new(0.5)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let r = full_check(&mut model, &batch, DEFAULT_EPSILON)?;
    Ok(model_check("lvd_model", &[r], tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_kind_passes() {
        for c in check_all_layers(20, 42, DEFAULT_TOLERANCE).unwrap() {
            assert!(c.passed, "{c:?}");
            assert_eq!(c.instances, 20);
        }
    }

    #[test]
    fn whole_models_pass() {
        let ef = check_ef_model(7, 20, DEFAULT_TOLERANCE).unwrap();
        assert!(ef.passed, "{ef:?}");
        let lvd = check_lvd_model(7, DEFAULT_TOLERANCE).unwrap();
        assert!(lvd.passed, "{lvd:?}");
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = LayerSpec::Dense { inputs: 3, outputs: 2 };
        let mut probe = LayerProbe::new(&spec, vec![3], &mut rng).unwrap();
        let (_, mut analytic) = value_and_grad(&mut probe, &()).unwrap();
        analytic[0][1] += 0.1;
        let numeric = crate::nn::finite_diff_grad(&mut probe, &(), DEFAULT_EPSILON).unwrap();
        assert!(grad_rel_error(&analytic.concat(), &numeric.concat()) > 1e-3);
        assert!(check_layer_kind("nope", 1, 0, 1e-4).is_err());
    }
}
