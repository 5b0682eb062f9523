use rand::Rng;

use super::layer::{Cache, Layer, LayerSpec, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered stack of layers applied to one sample at a time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequential {
    layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn from_specs(specs: &[LayerSpec], rng: &mut impl Rng) -> Result<Self> {
        let layers = specs
            .iter()
            .map(|s| Layer::from_spec(s, rng))
            .collect::<Result<_>>()?;
        Ok(Sequential { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Output shape for a given input shape; fails on the first incompatible
    /// pair of adjacent layers.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.layers
            .iter()
            .enumerate()
            .try_fold(input.to_vec(), |shape, (i, layer)| {
                layer.output_shape(&shape).map_err(|e| match e {
                    Error::Shape(msg) => Error::Shape(format!("layer {i} ({}): {msg}", layer.kind())),
                    other => other,
                })
            })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur)?.0;
        }
        Ok(cur)
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, Vec<Cache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (out, cache) = layer.forward(&cur)?;
            caches.push(cache);
            cur = out;
        }
        Ok((cur, caches))
    }

    /// Backpropagates `grad` through all layers, accumulating parameter
    /// gradients, and returns the gradient with respect to the input.
    pub fn backward(&mut self, caches: &[Cache], grad: Tensor) -> Result<Tensor> {
        if caches.len() != self.layers.len() {
            return Err(Error::shape(format!(
                "{} caches for {} layers",
                caches.len(),
                self.layers.len()
            )));
        }
        let mut g = grad;
        for (layer, cache) in self.layers.iter_mut().zip(caches).rev() {
            g = layer.backward(cache, &g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Sum of the per-layer closed-form counts.
    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }
}

/// Total parameter element count of a model.
pub fn count_params(model: &Sequential) -> usize {
    model.num_params()
}
