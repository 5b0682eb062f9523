//! Ejection-fraction regression: the EF formula, a per-frame depthwise-
//! separable encoder feeding a temporal conv head, training and MAE
//! evaluation with per-video averaging.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::conv::Padding;
use crate::error::{Error, Result};
use crate::nn::{
    accumulate_per_sample, split_ids, Cache, Differentiable, Layer, LayerSpec, LossKind, Optimizer,
    Param, Sequential, TrainConfig, VALIDATION_FRACTION,
};
use crate::tensor::{Tensor, VideoTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumePair {
    pub edv: f64,
    pub esv: f64,
}

/// `100·(EDV − ESV)/EDV`, in percent.
pub fn compute_ef(v: &VolumePair) -> Result<f64> {
    if !(v.edv > 0.0 && v.edv.is_finite()) {
        return Err(Error::Domain(format!("EDV must be positive, got {}", v.edv)));
    }
    if !(0.0..=v.edv).contains(&v.esv) {
        return Err(Error::validation(format!(
            "ESV {} outside [0, EDV = {}]",
            v.esv, v.edv
        )));
    }
    Ok(100.0 * (v.edv - v.esv) / v.edv)
}

/// One beat clip labelled with its video's ejection fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct EfSample {
    pub video_id: String,
    pub clip: VideoTensor,
    pub ef_true: f64,
}

impl EfSample {
    pub fn new(video_id: impl Into<String>, clip: VideoTensor, ef_true: f64) -> Result<Self> {
        if !(0.0..100.0).contains(&ef_true) {
            return Err(Error::validation(format!("EF {ef_true} outside [0, 100)")));
        }
        Ok(EfSample { video_id: video_id.into(), clip, ef_true })
    }
}

pub trait EfPredictor: Sync {
    fn predict_ef(&self, clip: &VideoTensor) -> Result<f64>;
}

/// Predicts the same value for every clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPredictor(pub f64);

impl EfPredictor for ConstantPredictor {
    fn predict_ef(&self, _clip: &VideoTensor) -> Result<f64> {
        Ok(self.0)
    }
}

/// Mean of the per-video targets in `train`.
pub fn mean_predictor(train: &[EfSample]) -> Result<ConstantPredictor> {
    let targets = video_targets(train)?;
    if targets.is_empty() {
        return Err(Error::validation("mean predictor needs at least one sample"));
    }
    Ok(ConstantPredictor(
        targets.values().sum::<f64>() / targets.len() as f64,
    ))
}

fn video_targets(samples: &[EfSample]) -> Result<BTreeMap<&str, f64>> {
    let mut out = BTreeMap::new();
    for s in samples {
        let prev = *out.entry(s.video_id.as_str()).or_insert(s.ef_true);
        if prev != s.ef_true {
            return Err(Error::validation(format!(
                "clips of video {} disagree on EF ({prev} vs {})",
                s.video_id, s.ef_true
            )));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfEvaluation {
    pub mae: f64,
    pub videos: usize,
    pub clips: usize,
}

/// Mean absolute error in EF points. Clip predictions of one video are
/// averaged before taking the error.
pub fn evaluate_mae<P: EfPredictor + ?Sized>(predictor: &P, samples: &[EfSample]) -> Result<EfEvaluation> {
    if samples.is_empty() {
        return Err(Error::validation("cannot evaluate on an empty dataset"));
    }
    let targets = video_targets(samples)?;
    let preds: Vec<f64> = samples
        .par_iter()
        .map(|s| predictor.predict_ef(&s.clip))
        .collect::<Result<_>>()?;
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (s, p) in samples.iter().zip(preds) {
        let e = sums.entry(s.video_id.as_str()).or_default();
        e.0 += p;
        e.1 += 1;
    }
    let total: f64 = sums
        .iter()
        .map(|(id, (sum, n))| (sum / *n as f64 - targets[id]).abs())
        .sum();
    Ok(EfEvaluation {
        mae: total / sums.len() as f64,
        videos: sums.len(),
        clips: samples.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfModelConfig {
    /// `[nx, ny]` of every input frame.
    pub frame_dims: [usize; 2],
    /// Per-frame feature size D.
    pub encoder_dim: usize,
    /// Channels of the first two encoder blocks.
    pub encoder_channels: [usize; 2],
    /// Temporal padding of the head convolutions.
    pub padding: Padding,
    pub loss: LossKind,
}

impl Default for EfModelConfig {
    fn default() -> Self {
        EfModelConfig {
            frame_dims: [16, 16],
            encoder_dim: 64,
            encoder_channels: [16, 32],
            padding: Padding::Same,
            loss: LossKind::Mae,
        }
    }
}

pub const HEAD_CONV1_FILTERS: usize = 128;
pub const HEAD_CONV1_KERNEL: usize = 7;
pub const HEAD_CONV2_FILTERS: usize = 256;
pub const HEAD_CONV2_KERNEL: usize = 5;
pub const HEAD_DENSE_UNITS: usize = 256;

impl EfModelConfig {
    fn validate(&self) -> Result<()> {
        let [nx, ny] = self.frame_dims;
        if nx < 8 || ny < 8 {
            return Err(Error::config(format!(
                "frames must be at least 8×8 for three 2×2 pools, got {nx}×{ny}"
            )));
        }
        if self.encoder_dim == 0 || self.encoder_channels.contains(&0) {
            return Err(Error::config("encoder widths must be positive"));
        }
        Ok(())
    }

    fn encoder_specs(&self) -> Vec<LayerSpec> {
        let [c1, c2] = self.encoder_channels;
        let mut specs = Vec::new();
        for (cin, cout) in [(1, c1), (c1, c2), (c2, self.encoder_dim)] {
            specs.push(LayerSpec::DepthwiseSeparable2d { in_channels: cin, out_channels: cout, kernel: 3 });
            specs.push(LayerSpec::Swish);
            specs.push(LayerSpec::MaxPool2d);
        }
        specs.push(LayerSpec::GlobalAvgPool2d);
        specs
    }

    fn head_specs(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv1d {
                in_channels: self.encoder_dim,
                out_channels: HEAD_CONV1_FILTERS,
                kernel: HEAD_CONV1_KERNEL,
                padding: self.padding,
            },
            LayerSpec::Swish,
            LayerSpec::Conv1d {
                in_channels: HEAD_CONV1_FILTERS,
                out_channels: HEAD_CONV2_FILTERS,
                kernel: HEAD_CONV2_KERNEL,
                padding: self.padding,
            },
            LayerSpec::Swish,
            LayerSpec::GlobalMaxPool,
            LayerSpec::Dense { inputs: HEAD_CONV2_FILTERS, outputs: HEAD_DENSE_UNITS },
            LayerSpec::Swish,
            LayerSpec::Dense { inputs: HEAD_DENSE_UNITS, outputs: HEAD_DENSE_UNITS },
            LayerSpec::Swish,
            LayerSpec::Dense { inputs: HEAD_DENSE_UNITS, outputs: 1 },
        ]
    }

    /// Shortest clip the head accepts.
    pub fn min_clip_len(&self) -> usize {
        match self.padding {
            Padding::Same => 1,
            Padding::Valid => HEAD_CONV1_KERNEL + HEAD_CONV2_KERNEL - 1,
        }
    }
}

/// Prediction is `offset + scale·head(encoder(frames))`. Offset and scale are
/// 0 and 1 until training fixes them to the training targets' mean and
/// standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScaling {
    pub offset: f64,
    pub scale: f64,
}

impl Default for TargetScaling {
    fn default() -> Self {
        TargetScaling { offset: 0.0, scale: 1.0 }
    }
}

impl TargetScaling {
    /// Mean and population standard deviation (1 when the targets are constant).
    pub fn fit(targets: &[f64]) -> Self {
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let sd = (targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
        TargetScaling { offset: mean, scale: if sd > 0.0 { sd } else { 1.0 } }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfModel {
    config: EfModelConfig,
    pub encoder: Sequential,
    pub head: Sequential,
    /// `None` until the first training run.
    pub scaling: Option<TargetScaling>,
}

#[derive(Serialize, Deserialize)]
struct EfManifest {
    model: String,
    config: EfModelConfig,
    scaling: Option<TargetScaling>,
    encoder: Vec<LayerSpec>,
    head: Vec<LayerSpec>,
    num_params: usize,
}

const EF_MODEL_TAG: &str = "ef";

impl EfModel {
    pub fn new(config: EfModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Sequential::from_specs(&config.encoder_specs(), &mut rng)?;
        let head = Sequential::from_specs(&config.head_specs(), &mut rng)?;
        Ok(EfModel { config, encoder, head, scaling: None })
    }

    pub fn config(&self) -> &EfModelConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.head.num_params()
    }

    /// Sets the final regression neuron's weights and bias to zero.
    pub fn zero_output_layer(&mut self) {
        if let Some(Layer::Dense(d)) = self.head.layers_mut().last_mut() {
            d.weight.value.iter_mut().for_each(|v| *v = 0.0);
            d.bias.value.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn scaling(&self) -> TargetScaling {
        self.scaling.clone().unwrap_or_default()
    }

    fn check_clip(&self, clip: &VideoTensor) -> Result<()> {
        let [nx, ny] = self.config.frame_dims;
        if clip.nx() != nx || clip.ny() != ny {
            return Err(Error::shape(format!(
                "model expects {nx}×{ny} frames, clip has {}×{}",
                clip.nx(),
                clip.ny()
            )));
        }
        let min = self.config.min_clip_len();
        if clip.nt() < min {
            return Err(Error::shape(format!(
                "{} padding needs clips of at least {min} frames, got {}",
                self.config.padding,
                clip.nt()
            )));
        }
        Ok(())
    }

    fn frame_tensor(clip: &VideoTensor, t: usize) -> Tensor {
        Tensor::from_parts(vec![clip.nx(), clip.ny(), 1], clip.frame(t))
    }

    /// `T × D` features, each frame encoded independently.
    pub fn encode_frames(&self, clip: &VideoTensor) -> Result<Tensor> {
        self.check_clip(clip)?;
        let d = self.config.encoder_dim;
        let mut rows = Vec::with_capacity(clip.nt() * d);
        for t in 0..clip.nt() {
            rows.extend_from_slice(self.encoder.forward(&Self::frame_tensor(clip, t))?.data());
        }
        Tensor::new(vec![clip.nt(), d], rows)
    }

    pub fn predict(&self, clip: &VideoTensor) -> Result<f64> {
        let features = self.encode_frames(clip)?;
        let raw = self.head.forward(&features)?.data()[0];
        let s = self.scaling();
        Ok(s.offset + s.scale * raw)
    }

    /// Forward and backward for one sample; `weight` multiplies the loss
    /// gradient (1/batch for a batch mean). Returns (loss, |error|).
    fn accumulate_sample(&mut self, sample: &EfSample, weight: f64) -> Result<(f64, f64)> {
        let clip = &sample.clip;
        self.check_clip(clip)?;
        let d = self.config.encoder_dim;
        let mut enc_caches: Vec<Vec<Cache>> = Vec::with_capacity(clip.nt());
        let mut rows = Vec::with_capacity(clip.nt() * d);
        for t in 0..clip.nt() {
            let (f, c) = self.encoder.forward_train(&Self::frame_tensor(clip, t))?;
            rows.extend_from_slice(f.data());
            enc_caches.push(c);
        }
        let features = Tensor::new(vec![clip.nt(), d], rows)?;
        let (out, head_caches) = self.head.forward_train(&features)?;
        let s = self.scaling();
        let pred = [s.offset + s.scale * out.data()[0]];
        let target = [sample.ef_true];
        let loss = self.config.loss.value(&pred, &target)?;
        let g = self.config.loss.grad(&pred, &target)?[0] * s.scale * weight;
        let g_seq = self.head.backward(&head_caches, Tensor::from_vec(vec![g]))?;
        for (t, caches) in enc_caches.iter().enumerate() {
            let row = g_seq.data()[t * d..(t + 1) * d].to_vec();
            self.encoder.backward(caches, Tensor::from_vec(row))?;
        }
        Ok((loss, (pred[0] - target[0]).abs()))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let manifest = EfManifest {
            model: EF_MODEL_TAG.into(),
            config: self.config.clone(),
            scaling: self.scaling.clone(),
            encoder: self.encoder.specs(),
            head: self.head.specs(),
            num_params: self.num_params(),
        };
        checkpoint::save(dir, &manifest, &Differentiable::params(self))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m: EfManifest = checkpoint::load_manifest(dir)?;
        if m.model != EF_MODEL_TAG {
            return Err(Error::format(dir, format!("checkpoint holds a `{}` model", m.model)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = EfModel {
            encoder: Sequential::from_specs(&m.encoder, &mut rng)?,
            head: Sequential::from_specs(&m.head, &mut rng)?,
            config: m.config,
            scaling: m.scaling,
        };
        checkpoint::load_params(dir, Differentiable::params_mut(&mut model))?;
        Ok(model)
    }
}

impl EfPredictor for EfModel {
    fn predict_ef(&self, clip: &VideoTensor) -> Result<f64> {
        self.predict(clip)
    }
}

impl Differentiable for EfModel {
    type Batch = [EfSample];

    fn params(&self) -> Vec<&Param> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.encoder.params_mut();
        p.extend(self.head.params_mut());
        p
    }

    fn loss(&self, batch: &[EfSample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::validation("empty batch"));
        }
        let mut total = 0.0;
        for s in batch {
            total += self.config.loss.value(&[self.predict(&s.clip)?], &[s.ef_true])?;
        }
        Ok(total / batch.len() as f64)
    }

    fn loss_and_accumulate(&mut self, batch: &[EfSample]) -> Result<f64> {
        Ok(self.accumulate_batch(batch)?.0)
    }
}

impl EfModel {
    /// Batch-mean loss and summed absolute error; gradients are accumulated.
    fn accumulate_batch(&mut self, batch: &[EfSample]) -> Result<(f64, f64)> {
        if batch.is_empty() {
            return Err(Error::validation("empty batch"));
        }
        let w = 1.0 / batch.len() as f64;
        let outs = accumulate_per_sample(self, batch, |m, s| m.accumulate_sample(s, w))?;
        let loss = outs.iter().map(|o| o.0).sum::<f64>() * w;
        Ok((loss, outs.iter().map(|o| o.1).sum()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches, weighted by batch size.
    pub train_loss: f64,
    /// Mean |prediction − target| seen on training clips during the epoch.
    pub train_mae: f64,
    /// Per-video MAE on the validation split after the epoch.
    pub val_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (lowest validation MAE).
    pub best_epoch: Option<usize>,
    pub train_videos: Vec<String>,
    pub val_videos: Vec<String>,
}

/// Samples whose video id is in `ids`, in dataset order.
pub fn select_videos(dataset: &[EfSample], ids: &[String]) -> Vec<EfSample> {
    dataset
        .iter()
        .filter(|s| ids.binary_search(&s.video_id).is_ok())
        .cloned()
        .collect()
}

/// Trains on an 80/20 video-level split drawn from `config.seed`. The
/// returned model holds the parameters of the epoch with the lowest
/// validation MAE (the last epoch when there is no validation split).
pub fn train_ef(model: &mut EfModel, dataset: &[EfSample], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::validation("cannot train on an empty dataset"));
    }
    video_targets(dataset)?;
    let ids: Vec<&str> = dataset.iter().map(|s| s.video_id.as_str()).collect();
    let (train_videos, val_videos) = split_ids(&ids, VALIDATION_FRACTION, config.seed);
    let mut report = TrainReport {
        history: Vec::new(),
        best_epoch: None,
        train_videos,
        val_videos,
    };
    if config.epochs == 0 {
        return Ok(report);
    }
    let train = select_videos(dataset, &report.train_videos);
    let val = select_videos(dataset, &report.val_videos);
    if model.scaling.is_none() {
        let targets: Vec<f64> = train.iter().map(|s| s.ef_true).collect();
        model.scaling = Some(TargetScaling::fit(&targets));
    }
    let mut optimizer = Optimizer::new(config.optimizer, &model.param_sizes());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, EfModel)> = None;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut err_sum) = (0.0, 0.0);
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<EfSample> = idx.iter().map(|&i| train[i].clone()).collect();
            model.zero_grad();
            let (loss, err) = model.accumulate_batch(&batch)?;
            loss_sum += loss * batch.len() as f64;
            err_sum += err;
            optimizer.step(&mut model.params_mut(), config.learning_rate)?;
        }
        let n = train.len() as f64;
        let val_mae = if val.is_empty() {
            None
        } else {
            Some(evaluate_mae(model, &val)?.mae)
        };
        if let Some(v) = val_mae {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.clone()));
                report.best_epoch = Some(epoch);
            }
        }
        report.history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_mae: err_sum / n,
            val_mae,
        });
    }
    match best {
        Some((_, m)) => *model = m,
        None => report.best_epoch = Some(config.epochs - 1),
    }
    Ok(report)
}
