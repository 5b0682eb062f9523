//! Differentiable layers.
//!
//! Layers run on one sample at a time. Sequence layers take `[T, D]` inputs
//! (time major), image layers take `[nx, ny, C]` inputs (channel fastest).
//! `forward` returns the output plus a [`Cache`] that `backward` consumes;
//! `backward` adds parameter gradients into each [`Param::grad`] and returns
//! the gradient with respect to the input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conv::Padding;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameter values with a same-shaped gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Param {
            shape,
            value: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut p = Param::zeros(shape);
        p.value.iter_mut().for_each(|v| *v = rng.gen_range(-limit..=limit));
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Serializable description of a layer, used by checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: Padding,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Swish,
    GlobalMaxPool,
    DepthwiseSeparable2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    MaxPool2d,
    GlobalAvgPool2d,
    Flatten,
}

/// What `backward` needs from the matching `forward`.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Tensor),
    Argmax { shape: Vec<usize>, index: Vec<usize> },
    DepthwiseSeparable { input: Tensor, depthwise: Vec<f64> },
    Shape(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: Padding,
    /// `[out, kernel, in]`
    pub weight: Param,
    pub bias: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[inputs, outputs]`
    pub weight: Param,
    pub bias: Param,
}

/// Per-channel `k × k` spatial filter, then a `C_in → C_out` pointwise map
/// with bias. Always `same`-padded.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseSeparable2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `[in, k, k]`
    pub depthwise: Param,
    /// `[in, out]`
    pub pointwise: Param,
    pub bias: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv1d(Conv1d),
    Dense(Dense),
    Swish,
    GlobalMaxPool,
    DepthwiseSeparable2d(DepthwiseSeparable2d),
    /// 2×2 window, stride 2, odd trailing row/column dropped.
    MaxPool2d,
    GlobalAvgPool2d,
    Flatten,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn swish_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

fn expect_rank(shape: &[usize], rank: usize, layer: &str) -> Result<()> {
    if shape.len() != rank {
        return Err(Error::shape(format!(
            "{layer} expects a rank-{rank} input, got shape {shape:?}"
        )));
    }
    Ok(())
}

/// `(output length, leading pad)` of a 1D window of width `k`.
fn conv1d_plan(t: usize, k: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            if k.is_multiple_of(2) {
                return Err(Error::config(format!(
                    "`same` conv1d needs an odd kernel, got {k}"
                )));
            }
            Ok((t, (k - 1) / 2))
        }
        Padding::Valid => {
            if t < k {
                return Err(Error::shape(format!(
                    "sequence of length {t} is shorter than kernel {k}"
                )));
            }
            Ok((t - k + 1, 0))
        }
    }
}

impl Layer {
    pub fn from_spec(spec: &LayerSpec, rng: &mut impl Rng) -> Result<Layer> {
        Ok(match *spec {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 {
                    return Err(Error::config("conv1d dims must be positive"));
                }
                if padding == Padding::Same && kernel % 2 == 0 {
                    return Err(Error::config("`same` conv1d needs an odd kernel"));
                }
                Layer::Conv1d(Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    padding,
                    weight: Param::glorot(
                        vec![out_channels, kernel, in_channels],
                        kernel * in_channels,
                        kernel * out_channels,
                        rng,
                    ),
                    bias: Param::zeros(vec![out_channels]),
                })
            }
            LayerSpec::Dense { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err(Error::config("dense dims must be positive"));
                }
                Layer::Dense(Dense {
                    inputs,
                    outputs,
                    weight: Param::glorot(vec![inputs, outputs], inputs, outputs, rng),
                    bias: Param::zeros(vec![outputs]),
                })
            }
            LayerSpec::Swish => Layer::Swish,
            LayerSpec::GlobalMaxPool => Layer::GlobalMaxPool,
            LayerSpec::DepthwiseSeparable2d {
                in_channels,
                out_channels,
                kernel,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel % 2 == 0 {
                    return Err(Error::config(
                        "depthwise-separable layer needs positive channels and an odd kernel",
                    ));
                }
                Layer::DepthwiseSeparable2d(DepthwiseSeparable2d {
                    in_channels,
                    out_channels,
                    kernel,
                    depthwise: Param::glorot(
                        vec![in_channels, kernel, kernel],
                        kernel * kernel,
                        kernel * kernel,
                        rng,
                    ),
                    pointwise: Param::glorot(
                        vec![in_channels, out_channels],
                        in_channels,
                        out_channels,
                        rng,
                    ),
                    bias: Param::zeros(vec![out_channels]),
                })
            }
            LayerSpec::MaxPool2d => Layer::MaxPool2d,
            LayerSpec::GlobalAvgPool2d => Layer::GlobalAvgPool2d,
            LayerSpec::Flatten => Layer::Flatten,
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv1d(c) => LayerSpec::Conv1d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                padding: c.padding,
            },
            Layer::Dense(d) => LayerSpec::Dense {
                inputs: d.inputs,
                outputs: d.outputs,
            },
            Layer::Swish => LayerSpec::Swish,
            Layer::GlobalMaxPool => LayerSpec::GlobalMaxPool,
            Layer::DepthwiseSeparable2d(d) => LayerSpec::DepthwiseSeparable2d {
                in_channels: d.in_channels,
                out_channels: d.out_channels,
                kernel: d.kernel,
            },
            Layer::MaxPool2d => LayerSpec::MaxPool2d,
            Layer::GlobalAvgPool2d => LayerSpec::GlobalAvgPool2d,
            Layer::Flatten => LayerSpec::Flatten,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv1d(_) => "conv1d",
            Layer::Dense(_) => "dense",
            Layer::Swish => "swish",
            Layer::GlobalMaxPool => "global_max_pool",
            Layer::DepthwiseSeparable2d(_) => "depthwise_separable2d",
            Layer::MaxPool2d => "max_pool2d",
            Layer::GlobalAvgPool2d => "global_avg_pool2d",
            Layer::Flatten => "flatten",
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv1d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::DepthwiseSeparable2d(d) => vec![&d.depthwise, &d.pointwise, &d.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv1d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::DepthwiseSeparable2d(d) => {
                vec![&mut d.depthwise, &mut d.pointwise, &mut d.bias]
            }
            _ => Vec::new(),
        }
    }

    /// Closed-form parameter count.
    pub fn num_params(&self) -> usize {
        match self {
            Layer::Conv1d(c) => c.out_channels * c.kernel * c.in_channels + c.out_channels,
            Layer::Dense(d) => d.inputs * d.outputs + d.outputs,
            Layer::DepthwiseSeparable2d(d) => {
                d.in_channels * d.kernel * d.kernel
                    + d.in_channels * d.out_channels
                    + d.out_channels
            }
            _ => 0,
        }
    }

    /// Shape inference without touching data.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv1d(c) => {
                expect_rank(input, 2, "conv1d")?;
                if input[1] != c.in_channels {
                    return Err(Error::shape(format!(
                        "conv1d expects {} channels, got {}",
                        c.in_channels, input[1]
                    )));
                }
                let (t, _) = conv1d_plan(input[0], c.kernel, c.padding)?;
                Ok(vec![t, c.out_channels])
            }
            Layer::Dense(d) => {
                let n: usize = input.iter().product();
                if n != d.inputs {
                    return Err(Error::shape(format!(
                        "dense expects {} inputs, got shape {input:?}",
                        d.inputs
                    )));
                }
                Ok(vec![d.outputs])
            }
            Layer::Swish => Ok(input.to_vec()),
            Layer::GlobalMaxPool => {
                expect_rank(input, 2, "global max pool")?;
                if input[0] == 0 {
                    return Err(Error::shape("global max pool over an empty sequence"));
                }
                Ok(vec![input[1]])
            }
            Layer::DepthwiseSeparable2d(d) => {
                expect_rank(input, 3, "depthwise-separable conv")?;
                if input[2] != d.in_channels {
                    return Err(Error::shape(format!(
                        "depthwise-separable conv expects {} channels, got {}",
                        d.in_channels, input[2]
                    )));
                }
                Ok(vec![input[0], input[1], d.out_channels])
            }
            Layer::MaxPool2d => {
                expect_rank(input, 3, "max pool")?;
                if input[0] < 2 || input[1] < 2 {
                    return Err(Error::shape(format!(
                        "2x2 max pool needs at least 2x2 input, got {input:?}"
                    )));
                }
                Ok(vec![input[0] / 2, input[1] / 2, input[2]])
            }
            Layer::GlobalAvgPool2d => {
                expect_rank(input, 3, "global average pool")?;
                Ok(vec![input[2]])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Cache)> {
        let out_shape = self.output_shape(x.shape())?;
        match self {
            Layer::Conv1d(c) => {
                let out = conv1d_forward(c, x, &out_shape);
                Ok((out, Cache::Input(x.clone())))
            }
            Layer::Dense(d) => {
                let w = &d.weight.value;
                let mut out = d.bias.value.clone();
                for (i, &xi) in x.data().iter().enumerate() {
                    let row = &w[i * d.outputs..(i + 1) * d.outputs];
                    for (o, &wv) in out.iter_mut().zip(row) {
                        *o += xi * wv;
                    }
                }
                Ok((Tensor::from_parts(out_shape, out), Cache::Input(x.clone())))
            }
            Layer::Swish => {
                let out = x.data().iter().map(|&v| swish(v)).collect();
                Ok((Tensor::from_parts(out_shape, out), Cache::Input(x.clone())))
            }
            Layer::GlobalMaxPool => {
                let (t, f) = (x.shape()[0], x.shape()[1]);
                let data = x.data();
                let mut index: Vec<usize> = (0..f).collect();
                let mut out = data[..f].to_vec();
                for row in 1..t {
                    for c in 0..f {
                        let v = data[row * f + c];
                        // strict comparison keeps the first maximum on ties
                        if v > out[c] {
                            out[c] = v;
                            index[c] = row * f + c;
                        }
                    }
                }
                Ok((
                    Tensor::from_parts(out_shape, out),
                    Cache::Argmax {
                        shape: x.shape().to_vec(),
                        index,
                    },
                ))
            }
            Layer::DepthwiseSeparable2d(d) => {
                let depthwise = depthwise_forward(d, x);
                let (nx, ny) = (x.shape()[0], x.shape()[1]);
                let (ci, co) = (d.in_channels, d.out_channels);
                let pw = &d.pointwise.value;
                let mut out = vec![0.0; nx * ny * co];
                for p in 0..nx * ny {
                    let dst = &mut out[p * co..(p + 1) * co];
                    dst.copy_from_slice(&d.bias.value);
                    for c in 0..ci {
                        let v = depthwise[p * ci + c];
                        for (o, &w) in dst.iter_mut().zip(&pw[c * co..(c + 1) * co]) {
                            *o += v * w;
                        }
                    }
                }
                Ok((
                    Tensor::from_parts(out_shape, out),
                    Cache::DepthwiseSeparable {
                        input: x.clone(),
                        depthwise,
                    },
                ))
            }
            Layer::MaxPool2d => {
                let [nx, ny, c] = [x.shape()[0], x.shape()[1], x.shape()[2]];
                let (ox, oy) = (out_shape[0], out_shape[1]);
                let data = x.data();
                let mut out = vec![0.0; ox * oy * c];
                let mut index = vec![0usize; ox * oy * c];
                for px in 0..ox {
                    for py in 0..oy {
                        for ch in 0..c {
                            let mut best = (2 * px * ny + 2 * py) * c + ch;
                            for (dx, dy) in [(0, 1), (1, 0), (1, 1)] {
                                let i = ((2 * px + dx) * ny + 2 * py + dy) * c + ch;
                                if data[i] > data[best] {
                                    best = i;
                                }
                            }
                            let o = (px * oy + py) * c + ch;
                            out[o] = data[best];
                            index[o] = best;
                        }
                    }
                }
                debug_assert!(nx >= 2);
                Ok((
                    Tensor::from_parts(out_shape, out),
                    Cache::Argmax {
                        shape: x.shape().to_vec(),
                        index,
                    },
                ))
            }
            Layer::GlobalAvgPool2d => {
                let c = x.shape()[2];
                let pixels = x.shape()[0] * x.shape()[1];
                let mut out = vec![0.0; c];
                for px in x.data().chunks_exact(c) {
                    for (o, v) in out.iter_mut().zip(px) {
                        *o += v;
                    }
                }
                out.iter_mut().for_each(|o| *o /= pixels as f64);
                Ok((
                    Tensor::from_parts(out_shape, out),
                    Cache::Shape(x.shape().to_vec()),
                ))
            }
            Layer::Flatten => Ok((
                Tensor::from_parts(out_shape, x.data().to_vec()),
                Cache::Shape(x.shape().to_vec()),
            )),
        }
    }

    pub fn backward(&mut self, cache: &Cache, grad: &Tensor) -> Result<Tensor> {
        match (self, cache) {
            (Layer::Conv1d(c), Cache::Input(x)) => Ok(conv1d_backward(c, x, grad)),
            (Layer::Dense(d), Cache::Input(x)) => {
                let g = grad.data();
                let w = &d.weight.value;
                let mut gx = vec![0.0; d.inputs];
                for (i, &xi) in x.data().iter().enumerate() {
                    let gw = &mut d.weight.grad[i * d.outputs..(i + 1) * d.outputs];
                    let row = &w[i * d.outputs..(i + 1) * d.outputs];
                    let mut acc = 0.0;
                    for ((gwv, &wv), &gv) in gw.iter_mut().zip(row).zip(g) {
                        *gwv += xi * gv;
                        acc += wv * gv;
                    }
                    gx[i] = acc;
                }
                for (gb, gv) in d.bias.grad.iter_mut().zip(g) {
                    *gb += gv;
                }
                Ok(Tensor::from_parts(x.shape().to_vec(), gx))
            }
            (Layer::Swish, Cache::Input(x)) => {
                let gx = x
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&v, &g)| g * swish_grad(v))
                    .collect();
                Ok(Tensor::from_parts(x.shape().to_vec(), gx))
            }
            (Layer::GlobalMaxPool | Layer::MaxPool2d, Cache::Argmax { shape, index }) => {
                let mut gx = vec![0.0; shape.iter().product()];
                for (&i, &g) in index.iter().zip(grad.data()) {
                    gx[i] += g;
                }
                Ok(Tensor::from_parts(shape.clone(), gx))
            }
            (Layer::DepthwiseSeparable2d(d), Cache::DepthwiseSeparable { input, depthwise }) => {
                Ok(depthwise_separable_backward(d, input, depthwise, grad))
            }
            (Layer::GlobalAvgPool2d, Cache::Shape(shape)) => {
                let pixels = (shape[0] * shape[1]) as f64;
                let c = shape[2];
                let g: Vec<f64> = grad.data().iter().map(|v| v / pixels).collect();
                let mut gx = Vec::with_capacity(shape.iter().product());
                for _ in 0..shape[0] * shape[1] {
                    gx.extend_from_slice(&g[..c]);
                }
                Ok(Tensor::from_parts(shape.clone(), gx))
            }
            (Layer::Flatten, Cache::Shape(shape)) => {
                Ok(Tensor::from_parts(shape.clone(), grad.data().to_vec()))
            }
            (layer, _) => Err(Error::shape(format!(
                "cache does not belong to a {} layer",
                layer.kind()
            ))),
        }
    }
}

fn conv1d_forward(c: &Conv1d, x: &Tensor, out_shape: &[usize]) -> Tensor {
    let (t_in, d) = (x.shape()[0], x.shape()[1]);
    let (t_out, f, k) = (out_shape[0], c.out_channels, c.kernel);
    let pad = match c.padding {
        Padding::Same => (k - 1) / 2,
        Padding::Valid => 0,
    };
    let xd = x.data();
    let w = &c.weight.value;
    let mut out = vec![0.0; t_out * f];
    for t in 0..t_out {
        for fo in 0..f {
            let mut acc = c.bias.value[fo];
            for j in 0..k {
                let src = t + j;
                if src < pad || src - pad >= t_in {
                    continue;
                }
                let row = &xd[(src - pad) * d..(src - pad + 1) * d];
                let wrow = &w[(fo * k + j) * d..(fo * k + j + 1) * d];
                acc += row.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
            }
            out[t * f + fo] = acc;
        }
    }
    Tensor::from_parts(out_shape.to_vec(), out)
}

fn conv1d_backward(c: &mut Conv1d, x: &Tensor, grad: &Tensor) -> Tensor {
    let (t_in, d) = (x.shape()[0], x.shape()[1]);
    let (f, k) = (c.out_channels, c.kernel);
    let t_out = grad.shape()[0];
    let pad = match c.padding {
        Padding::Same => (k - 1) / 2,
        Padding::Valid => 0,
    };
    let xd = x.data();
    let g = grad.data();
    let mut gx = vec![0.0; t_in * d];
    for t in 0..t_out {
        for fo in 0..f {
            let gv = g[t * f + fo];
            if gv == 0.0 {
                continue;
            }
            c.bias.grad[fo] += gv;
            for j in 0..k {
                let src = t + j;
                if src < pad || src - pad >= t_in {
                    continue;
                }
                let s = src - pad;
                let off = (fo * k + j) * d;
                let row = &xd[s * d..(s + 1) * d];
                for (gw, &xv) in c.weight.grad[off..off + d].iter_mut().zip(row) {
                    *gw += gv * xv;
                }
                let wrow = &c.weight.value[off..off + d];
                for (gxv, &wv) in gx[s * d..(s + 1) * d].iter_mut().zip(wrow) {
                    *gxv += gv * wv;
                }
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), gx)
}

fn depthwise_forward(d: &DepthwiseSeparable2d, x: &Tensor) -> Vec<f64> {
    let (nx, ny, c, k) = (x.shape()[0], x.shape()[1], d.in_channels, d.kernel);
    let r = (k / 2) as isize;
    let xd = x.data();
    let kw = &d.depthwise.value;
    let mut out = vec![0.0; nx * ny * c];
    for px in 0..nx {
        for py in 0..ny {
            let dst = &mut out[(px * ny + py) * c..(px * ny + py + 1) * c];
            for i in 0..k {
                let sx = px as isize + i as isize - r;
                if sx < 0 || sx >= nx as isize {
                    continue;
                }
                for j in 0..k {
                    let sy = py as isize + j as isize - r;
                    if sy < 0 || sy >= ny as isize {
                        continue;
                    }
                    let base = (sx as usize * ny + sy as usize) * c;
                    for (ch, o) in dst.iter_mut().enumerate() {
                        *o += xd[base + ch] * kw[(ch * k + i) * k + j];
                    }
                }
            }
        }
    }
    out
}

fn depthwise_separable_backward(
    d: &mut DepthwiseSeparable2d,
    input: &Tensor,
    depthwise: &[f64],
    grad: &Tensor,
) -> Tensor {
    let (nx, ny) = (input.shape()[0], input.shape()[1]);
    let (ci, co, k) = (d.in_channels, d.out_channels, d.kernel);
    let g = grad.data();

    // pointwise stage
    let mut g_dw = vec![0.0; nx * ny * ci];
    for p in 0..nx * ny {
        let gp = &g[p * co..(p + 1) * co];
        for (gb, gv) in d.bias.grad.iter_mut().zip(gp) {
            *gb += gv;
        }
        for c in 0..ci {
            let v = depthwise[p * ci + c];
            let wrow = &d.pointwise.value[c * co..(c + 1) * co];
            let gwrow = &mut d.pointwise.grad[c * co..(c + 1) * co];
            let mut acc = 0.0;
            for ((gw, &w), &gv) in gwrow.iter_mut().zip(wrow).zip(gp) {
                *gw += v * gv;
                acc += w * gv;
            }
            g_dw[p * ci + c] = acc;
        }
    }

    // depthwise stage
    let r = (k / 2) as isize;
    let xd = input.data();
    let mut gx = vec![0.0; nx * ny * ci];
    for px in 0..nx {
        for py in 0..ny {
            let gsrc = &g_dw[(px * ny + py) * ci..(px * ny + py + 1) * ci];
            for i in 0..k {
                let sx = px as isize + i as isize - r;
                if sx < 0 || sx >= nx as isize {
                    continue;
                }
                for j in 0..k {
                    let sy = py as isize + j as isize - r;
                    if sy < 0 || sy >= ny as isize {
                        continue;
                    }
                    let base = (sx as usize * ny + sy as usize) * ci;
                    for (ch, &gv) in gsrc.iter().enumerate() {
                        let wi = (ch * k + i) * k + j;
                        d.depthwise.grad[wi] += gv * xd[base + ch];
                        gx[base + ch] += gv * d.depthwise.value[wi];
                    }
                }
            }
        }
    }
    Tensor::from_parts(input.shape().to_vec(), gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv1d_scaling_example() {
        let mut layer = Layer::from_spec(
            &LayerSpec::Conv1d {
                in_channels: 1,
                out_channels: 1,
                kernel: 1,
                padding: Padding::Valid,
            },
            &mut rng(),
        )
        .unwrap();
        if let Layer::Conv1d(c) = &mut layer {
            c.weight.value = vec![2.0];
        }
        let x = Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn conv1d_full_window_gives_single_output() {
        let layer = Layer::from_spec(
            &LayerSpec::Conv1d {
                in_channels: 2,
                out_channels: 3,
                kernel: 5,
                padding: Padding::Valid,
            },
            &mut rng(),
        )
        .unwrap();
        let x = random(&mut rng(), vec![5, 2]);
        assert_eq!(layer.forward(&x).unwrap().0.shape(), &[1, 3]);
        let short = random(&mut rng(), vec![4, 2]);
        assert!(matches!(layer.forward(&short), Err(Error::Shape(_))));
    }

    #[test]
    fn conv1d_matches_loop_oracle() {
        let mut r = rng();
        for padding in [Padding::Same, Padding::Valid] {
            let layer = Layer::from_spec(
                &LayerSpec::Conv1d {
                    in_channels: 3,
                    out_channels: 4,
                    kernel: 3,
                    padding,
                },
                &mut r,
            )
            .unwrap();
            let Layer::Conv1d(c) = &layer else { unreachable!() };
            let mut c = c.clone();
            c.bias.value = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
            let layer = Layer::Conv1d(c.clone());
            let x = random(&mut r, vec![7, 3]);
            let (y, _) = layer.forward(&x).unwrap();
            let off: isize = if padding == Padding::Same { 1 } else { 0 };
            for t in 0..y.shape()[0] {
                for f in 0..4 {
                    let mut s = c.bias.value[f];
                    for j in 0..3 {
                        let src = t as isize + j as isize - off;
                        if !(0..7).contains(&src) {
                            continue;
                        }
                        for d in 0..3 {
                            s += x.data()[src as usize * 3 + d] * c.weight.value[(f * 3 + j) * 3 + d];
                        }
                    }
                    assert!((y.data()[t * 4 + f] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn swish_values() {
        assert_eq!(swish(0.0), 0.0);
        assert!((swish(20.0) - 20.0).abs() < 1e-7);
        assert!((swish(20.0) - (20.0 - 20.0 * sigmoid(-20.0))).abs() < 1e-12);
        assert_eq!(swish_grad(0.0), 0.5);
    }

    #[test]
    fn global_max_pool_examples() {
        let (y, _) = Layer::GlobalMaxPool
            .forward(&Tensor::new(vec![3, 2], vec![1.0, 5.0, 3.0, 2.0, 2.0, 9.0]).unwrap())
            .unwrap();
        assert_eq!(y.data(), &[3.0, 9.0]);
        let row = Tensor::new(vec![1, 3], vec![4.0, -1.0, 0.5]).unwrap();
        assert_eq!(Layer::GlobalMaxPool.forward(&row).unwrap().0.data(), row.data());
        let permuted = Tensor::new(vec![3, 2], vec![2.0, 9.0, 1.0, 5.0, 3.0, 2.0]).unwrap();
        assert_eq!(Layer::GlobalMaxPool.forward(&permuted).unwrap().0.data(), &[3.0, 9.0]);
        assert!(Layer::GlobalMaxPool.forward(&Tensor::zeros(vec![0, 2])).is_err());
    }

    #[test]
    fn max_pool_backward_uses_first_argmax_and_conserves_mass() {
        let x = Tensor::new(vec![3, 2], vec![7.0, 1.0, 7.0, 4.0, 2.0, 4.0]).unwrap();
        let mut layer = Layer::GlobalMaxPool;
        let (_, cache) = layer.forward(&x).unwrap();
        let g = Tensor::from_vec(vec![0.25, -2.0]);
        let gx = layer.backward(&cache, &g).unwrap();
        assert_eq!(gx.data(), &[0.25, 0.0, 0.0, -2.0, 0.0, 0.0]);
        assert_eq!(gx.data().iter().sum::<f64>(), g.data().iter().sum::<f64>());
    }

    #[test]
    fn dense_identity_and_bias() {
        let mut layer = Layer::from_spec(&LayerSpec::Dense { inputs: 3, outputs: 3 }, &mut rng()).unwrap();
        let x = Tensor::from_vec(vec![1.0, -2.0, 0.5]);
        if let Layer::Dense(d) = &mut layer {
            d.weight.value = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        }
        assert_eq!(layer.forward(&x).unwrap().0.data(), x.data());
        if let Layer::Dense(d) = &mut layer {
            d.weight.value = vec![0.0; 9];
            d.bias.value = vec![3.0, 4.0, 5.0];
        }
        assert_eq!(layer.forward(&x).unwrap().0.data(), &[3.0, 4.0, 5.0]);
        assert!(layer.forward(&Tensor::from_vec(vec![1.0; 4])).is_err());
    }

    #[test]
    fn dense_matches_loop_oracle() {
        let mut r = rng();
        let mut layer = Layer::from_spec(&LayerSpec::Dense { inputs: 5, outputs: 4 }, &mut r).unwrap();
        if let Layer::Dense(d) = &mut layer {
            d.bias.value = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
        }
        let Layer::Dense(d) = &layer else { unreachable!() };
        let x = random(&mut r, vec![5]);
        let y = layer.forward(&x).unwrap().0;
        for h in 0..4 {
            let mut s = d.bias.value[h];
            for i in 0..5 {
                s += x.data()[i] * d.weight.value[i * 4 + h];
            }
            assert!((y.data()[h] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn param_counts() {
        let dense = Layer::from_spec(&LayerSpec::Dense { inputs: 4, outputs: 3 }, &mut rng()).unwrap();
        assert_eq!(dense.num_params(), 15);
        assert_eq!(
            dense.num_params(),
            dense.params().iter().map(|p| p.len()).sum::<usize>()
        );
        assert_eq!(Layer::GlobalMaxPool.num_params(), 0);
    }

    #[test]
    fn depthwise_layer_matches_tensor_core_op() {
        use crate::conv::{depthwise_separable_conv2d, Pointwise};
        use crate::tensor::{ChannelFrame, Kernel2D};

        let mut r = rng();
        let layer = Layer::from_spec(
            &LayerSpec::DepthwiseSeparable2d {
                in_channels: 3,
                out_channels: 2,
                kernel: 3,
            },
            &mut r,
        )
        .unwrap();
        let Layer::DepthwiseSeparable2d(d) = &layer else { unreachable!() };
        let x = random(&mut r, vec![5, 4, 3]);
        let y = layer.forward(&x).unwrap().0;

        let frame = ChannelFrame::new(5, 4, 3, x.data().to_vec()).unwrap();
        let kernels: Vec<_> = d
            .depthwise
            .value
            .chunks_exact(9)
            .map(|k| Kernel2D::new(3, 3, k.to_vec()).unwrap())
            .collect();
        let pw = Pointwise::new(3, 2, d.pointwise.value.clone()).unwrap();
        let want = depthwise_separable_conv2d(&frame, &kernels, &pw, Padding::Same).unwrap();
        for (a, b) in y.data().iter().zip(&want.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
