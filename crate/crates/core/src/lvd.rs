//! Left-ventricle dimensions from four keypoints on a parasternal long-axis
//! frame: keypoint geometry, the inverse-σ weighted length loss, and a small
//! keypoint regressor.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::nn::{
    accumulate_per_sample, split_ids, Differentiable, Layer, LayerSpec, Optimizer, Param, Sequential,
    TrainConfig, VALIDATION_FRACTION,
};
use crate::tensor::{Tensor, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Anterior septum, posterior septum, posterior-wall endocardium and
/// epicardium, in pixel coordinates along the measurement line.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KeypointSet {
    pub points: [Point; 4],
}

impl KeypointSet {
    pub fn new(points: [Point; 4]) -> Self {
        KeypointSet { points }
    }

    /// `[x1, y1, ..., x4, y4]`
    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != 8 {
            return Err(Error::shape(format!("expected 8 coordinates, got {}", v.len())));
        }
        Ok(KeypointSet {
            points: std::array::from_fn(|i| Point::new(v[2 * i], v[2 * i + 1])),
        })
    }

    pub fn to_flat(&self) -> [f64; 8] {
        std::array::from_fn(|i| {
            let p = self.points[i / 2];
            if i % 2 == 0 {
                p.x
            } else {
                p.y
            }
        })
    }

    pub fn in_bounds(&self, nx: usize, ny: usize) -> bool {
        self.points.iter().all(|p| {
            (0.0..=(nx - 1) as f64).contains(&p.x) && (0.0..=(ny - 1) as f64).contains(&p.y)
        })
    }
}

/// Lengths in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LvDimensions {
    pub ivs: f64,
    pub lvid: f64,
    pub lvpw: f64,
}

impl LvDimensions {
    pub fn new(ivs: f64, lvid: f64, lvpw: f64) -> Self {
        LvDimensions { ivs, lvid, lvpw }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.ivs, self.lvid, self.lvpw]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        LvDimensions::new(a[0], a[1], a[2])
    }

    /// Any length is zero, i.e. two adjacent keypoints coincide.
    pub fn is_degenerate(&self) -> bool {
        self.to_array().contains(&0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub mm_per_pixel: f64,
}

impl Calibration {
    pub fn new(mm_per_pixel: f64) -> Result<Self> {
        if !(mm_per_pixel > 0.0 && mm_per_pixel.is_finite()) {
            return Err(Error::config(format!(
                "mm per pixel must be positive, got {mm_per_pixel}"
            )));
        }
        Ok(Calibration { mm_per_pixel })
    }
}

/// IVS = |p1 − p2|, LVID = |p2 − p3|, LVPW = |p3 − p4|, scaled to mm.
/// Coincident neighbours give a zero length; see [`LvDimensions::is_degenerate`].
pub fn dimensions_from_keypoints(kp: &KeypointSet, cal: &Calibration) -> Result<LvDimensions> {
    let cal = Calibration::new(cal.mm_per_pixel)?;
    if kp.to_flat().iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite keypoint coordinate"));
    }
    let [p1, p2, p3, p4] = kp.points;
    let s = cal.mm_per_pixel;
    Ok(LvDimensions::new(
        p1.distance(p2) * s,
        p2.distance(p3) * s,
        p3.distance(p4) * s,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub ivs: f64,
    pub lvid: f64,
    pub lvpw: f64,
}

impl LossWeights {
    pub fn unit() -> Self {
        LossWeights { ivs: 1.0, lvid: 1.0, lvpw: 1.0 }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.ivs, self.lvid, self.lvpw]
    }

    fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::config(format!("loss weights must be positive, got {self:?}")));
        }
        Ok(())
    }
}

/// `1/σ` per dimension, population standard deviation, no normalisation.
pub fn loss_weights(labels: &[LvDimensions]) -> Result<LossWeights> {
    if labels.len() < 2 {
        return Err(Error::config(format!(
            "loss weights need at least 2 labels, got {}",
            labels.len()
        )));
    }
    let n = labels.len() as f64;
    let mut w = [0.0; 3];
    let names = ["ivs", "lvid", "lvpw"];
    for (m, wm) in w.iter_mut().enumerate() {
        let mean = labels.iter().map(|l| l.to_array()[m]).sum::<f64>() / n;
        let var = labels
            .iter()
            .map(|l| (l.to_array()[m] - mean).powi(2))
            .sum::<f64>()
            / n;
        if var <= 0.0 {
            return Err(Error::config(format!(
                "{} has zero variance in the training labels; set loss weights manually",
                names[m]
            )));
        }
        *wm = 1.0 / var.sqrt();
    }
    Ok(LossWeights { ivs: w[0], lvid: w[1], lvpw: w[2] })
}

fn check_pair(pred: &[LvDimensions], target: &[LvDimensions], w: &LossWeights) -> Result<()> {
    w.validate()?;
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

/// Batch mean of `Σ_m w_m·(pred_m − target_m)²`.
pub fn lvd_loss(pred: &[LvDimensions], target: &[LvDimensions], w: &LossWeights) -> Result<f64> {
    check_pair(pred, target, w)?;
    let w = w.to_array();
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let (p, t) = (p.to_array(), t.to_array());
            (0..3).map(|m| w[m] * (p[m] - t[m]).powi(2)).sum::<f64>()
        })
        .sum();
    Ok(total / pred.len() as f64)
}

/// Gradient of [`lvd_loss`] with respect to each predicted dimension.
pub fn lvd_loss_grad(
    pred: &[LvDimensions],
    target: &[LvDimensions],
    w: &LossWeights,
) -> Result<Vec<LvDimensions>> {
    check_pair(pred, target, w)?;
    let w = w.to_array();
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let (p, t) = (p.to_array(), t.to_array());
            LvDimensions::from_array(std::array::from_fn(|m| 2.0 * w[m] * (p[m] - t[m]) / n))
        })
        .collect())
}

/// Keypoint-annotated frame; `frame` is `[nx, ny, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LvdSample {
    pub id: String,
    pub frame: Volume,
    pub keypoints: KeypointSet,
    pub calibration: Calibration,
}

impl LvdSample {
    pub fn new(id: impl Into<String>, frame: Volume, keypoints: KeypointSet, calibration: Calibration) -> Result<Self> {
        if frame.nt() != 1 {
            return Err(Error::shape(format!("expected a single frame, got {} frames", frame.nt())));
        }
        Calibration::new(calibration.mm_per_pixel)?;
        Ok(LvdSample { id: id.into(), frame, keypoints, calibration })
    }

    pub fn dims(&self) -> Result<LvDimensions> {
        dimensions_from_keypoints(&self.keypoints, &self.calibration)
    }
}

pub trait KeypointPredictor: Sync {
    fn predict_keypoints(&self, frame: &Volume) -> Result<KeypointSet>;
}

/// The same keypoints for every frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantKeypoints(pub KeypointSet);

impl KeypointPredictor for ConstantKeypoints {
    fn predict_keypoints(&self, _frame: &Volume) -> Result<KeypointSet> {
        Ok(self.0)
    }
}

/// All four points at the frame centre, so every predicted length is zero.
pub fn center_keypoints(nx: usize, ny: usize) -> ConstantKeypoints {
    let c = Point::new((nx - 1) as f64 / 2.0, (ny - 1) as f64 / 2.0);
    ConstantKeypoints(KeypointSet::new([c; 4]))
}

/// Coordinate-wise mean of the samples' keypoints.
pub fn mean_keypoints(samples: &[LvdSample]) -> Result<ConstantKeypoints> {
    if samples.is_empty() {
        return Err(Error::validation("mean keypoints need at least one sample"));
    }
    let mut sum = [0.0; 8];
    for s in samples {
        sum.iter_mut().zip(s.keypoints.to_flat()).for_each(|(a, b)| *a += b);
    }
    let n = samples.len() as f64;
    Ok(ConstantKeypoints(KeypointSet::from_flat(&sum.map(|v| v / n))?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvdEvaluation {
    /// Per-dimension mean absolute error, mm.
    pub mae: LvDimensions,
    pub mean_mae: f64,
    pub frames: usize,
    /// Frames whose predicted or labelled dimensions contain a zero length.
    pub warnings: Vec<String>,
}

/// Per-dimension MAE of the dimensions implied by predicted keypoints.
/// Degenerate predictions are scored normally and listed in `warnings`.
pub fn evaluate_lvd<P: KeypointPredictor + ?Sized>(predictor: &P, samples: &[LvdSample]) -> Result<LvdEvaluation> {
    if samples.is_empty() {
        return Err(Error::validation("cannot evaluate on an empty dataset"));
    }
    let preds: Vec<KeypointSet> = samples
        .par_iter()
        .map(|s| predictor.predict_keypoints(&s.frame))
        .collect::<Result<_>>()?;
    let mut sum = [0.0; 3];
    let mut warnings = Vec::new();
    for (s, kp) in samples.iter().zip(&preds) {
        let truth = s.dims()?;
        let pred = dimensions_from_keypoints(kp, &s.calibration)?;
        if truth.is_degenerate() {
            warnings.push(format!("{}: labelled keypoints give a zero-length dimension", s.id));
        }
        if pred.is_degenerate() {
            warnings.push(format!("{}: predicted keypoints give a zero-length dimension", s.id));
        }
        let (p, t) = (pred.to_array(), truth.to_array());
        (0..3).for_each(|m| sum[m] += (p[m] - t[m]).abs());
    }
    let n = samples.len() as f64;
    let mae = LvDimensions::from_array(sum.map(|v| v / n));
    Ok(LvdEvaluation {
        mean_mae: mae.to_array().iter().sum::<f64>() / 3.0,
        mae,
        frames: samples.len(),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvdModelConfig {
    /// `[nx, ny]`
    pub frame_dims: [usize; 2],
    /// Output channels of each depthwise-separable block; each block halves
    /// the resolution.
    pub channels: Vec<usize>,
    pub hidden: usize,
    /// Coefficient of the coordinate MSE term added to the length loss.
    pub coord_weight: f64,
}

impl Default for LvdModelConfig {
    fn default() -> Self {
        LvdModelConfig {
            frame_dims: [64, 64],
            channels: vec![8, 16, 32, 32],
            hidden: 64,
            coord_weight: 1.0,
        }
    }
}

impl LvdModelConfig {
    fn validate(&self) -> Result<()> {
        let [nx, ny] = self.frame_dims;
        let shrink = 1usize << self.channels.len();
        if self.channels.is_empty() || nx < shrink || ny < shrink {
            return Err(Error::config(format!(
                "{} pooling blocks need frames of at least {shrink}×{shrink}, got {nx}×{ny}",
                self.channels.len()
            )));
        }
        if self.hidden == 0 || self.channels.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        if !(self.coord_weight >= 0.0 && self.coord_weight.is_finite()) {
            return Err(Error::config(format!("coordinate weight must be ≥ 0, got {}", self.coord_weight)));
        }
        Ok(())
    }

    fn specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let (mut cin, mut nx, mut ny) = (1, self.frame_dims[0], self.frame_dims[1]);
        for &cout in &self.channels {
            specs.push(LayerSpec::DepthwiseSeparable2d { in_channels: cin, out_channels: cout, kernel: 3 });
            specs.push(LayerSpec::Swish);
            specs.push(LayerSpec::MaxPool2d);
            (cin, nx, ny) = (cout, nx / 2, ny / 2);
        }
        specs.push(LayerSpec::Flatten);
        specs.push(LayerSpec::Dense { inputs: nx * ny * cin, outputs: self.hidden });
        specs.push(LayerSpec::Swish);
        specs.push(LayerSpec::Dense { inputs: self.hidden, outputs: 8 });
        specs
    }
}

/// Raw outputs map to coordinates as `offset + scale·raw`, per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordScaling {
    pub offset: [f64; 8],
    pub scale: [f64; 8],
}

impl Default for CoordScaling {
    fn default() -> Self {
        CoordScaling { offset: [0.0; 8], scale: [1.0; 8] }
    }
}

impl CoordScaling {
    /// Mean and population standard deviation per coordinate, scale at least 1 px.
    pub fn fit(samples: &[LvdSample]) -> Self {
        let n = samples.len() as f64;
        let flat: Vec<[f64; 8]> = samples.iter().map(|s| s.keypoints.to_flat()).collect();
        let offset: [f64; 8] = std::array::from_fn(|j| flat.iter().map(|f| f[j]).sum::<f64>() / n);
        let scale = std::array::from_fn(|j| {
            let var = flat.iter().map(|f| (f[j] - offset[j]).powi(2)).sum::<f64>() / n;
            var.sqrt().max(1.0)
        });
        CoordScaling { offset, scale }
    }
}

/// Direct coordinate regressor: depthwise-separable conv blocks, a hidden
/// dense layer and 8 outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LvdModel {
    config: LvdModelConfig,
    pub net: Sequential,
    /// `None` until the first training run.
    pub scaling: Option<CoordScaling>,
    /// Length-loss weights from the training split.
    pub loss_weights: Option<LossWeights>,
}

#[derive(Serialize, Deserialize)]
struct LvdManifest {
    model: String,
    config: LvdModelConfig,
    scaling: Option<CoordScaling>,
    loss_weights: Option<LossWeights>,
    layers: Vec<LayerSpec>,
    num_params: usize,
}

const LVD_MODEL_TAG: &str = "lvd";

impl LvdModel {
    pub fn new(config: LvdModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Sequential::from_specs(&config.specs(), &mut rng)?;
        Ok(LvdModel { config, net, scaling: None, loss_weights: None })
    }

    pub fn config(&self) -> &LvdModelConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    pub fn zero_output_layer(&mut self) {
        if let Some(Layer::Dense(d)) = self.net.layers_mut().last_mut() {
            d.weight.value.iter_mut().for_each(|v| *v = 0.0);
            d.bias.value.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn input(&self, frame: &Volume) -> Result<Tensor> {
        let [nx, ny] = self.config.frame_dims;
        if frame.dims() != [nx, ny, 1] {
            return Err(Error::shape(format!(
                "model expects one {nx}×{ny} frame, got {:?}",
                frame.dims()
            )));
        }
        Tensor::new(vec![nx, ny, 1], frame.data().to_vec())
    }

    fn to_coords(&self, raw: &[f64]) -> [f64; 8] {
        let s = self.scaling.clone().unwrap_or_default();
        std::array::from_fn(|j| s.offset[j] + s.scale[j] * raw[j])
    }

    /// Unclamped coordinates `[x1, y1, ..., x4, y4]`.
    pub fn predict_coords(&self, frame: &Volume) -> Result<[f64; 8]> {
        let raw = self.net.forward(&self.input(frame)?)?;
        Ok(self.to_coords(raw.data()))
    }

    /// Predicted keypoints clamped to the frame.
    pub fn predict(&self, frame: &Volume) -> Result<KeypointSet> {
        let [nx, ny] = self.config.frame_dims;
        let c = self.predict_coords(frame)?;
        let kp = KeypointSet::from_flat(&c)?;
        Ok(KeypointSet::new(kp.points.map(|p| {
            Point::new(p.x.clamp(0.0, (nx - 1) as f64), p.y.clamp(0.0, (ny - 1) as f64))
        })))
    }

    /// Per-sample loss `λ·mean_j (c_j − c*_j)² + Σ_m w_m (d_m − d*_m)²` and its
    /// gradient with respect to the 8 predicted coordinates.
    fn sample_loss(&self, coords: &[f64; 8], sample: &LvdSample) -> Result<(f64, [f64; 8])> {
        let target = sample.keypoints.to_flat();
        let lambda = self.config.coord_weight;
        let mut grad = [0.0; 8];
        let mut loss = 0.0;
        for j in 0..8 {
            let d = coords[j] - target[j];
            loss += lambda * d * d / 8.0;
            grad[j] += lambda * 2.0 * d / 8.0;
        }
        let w = self.loss_weights.unwrap_or(LossWeights::unit()).to_array();
        let truth = sample.dims()?.to_array();
        let mm = sample.calibration.mm_per_pixel;
        for m in 0..3 {
            let (a, b) = (m, m + 1);
            let (dx, dy) = (coords[2 * a] - coords[2 * b], coords[2 * a + 1] - coords[2 * b + 1]);
            let len = dx.hypot(dy);
            let diff = len * mm - truth[m];
            loss += w[m] * diff * diff;
            if len > 0.0 {
                let g = 2.0 * w[m] * diff * mm / len;
                grad[2 * a] += g * dx;
                grad[2 * a + 1] += g * dy;
                grad[2 * b] -= g * dx;
                grad[2 * b + 1] -= g * dy;
            }
        }
        Ok((loss, grad))
    }

    fn accumulate_sample(&mut self, sample: &LvdSample, weight: f64) -> Result<f64> {
        let (raw, caches) = self.net.forward_train(&self.input(&sample.frame)?)?;
        let coords = self.to_coords(raw.data());
        let (loss, g) = self.sample_loss(&coords, sample)?;
        let s = self.scaling.clone().unwrap_or_default();
        let g_raw: Vec<f64> = (0..8).map(|j| g[j] * s.scale[j] * weight).collect();
        self.net.backward(&caches, Tensor::from_vec(g_raw))?;
        Ok(loss)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let manifest = LvdManifest {
            model: LVD_MODEL_TAG.into(),
            config: self.config.clone(),
            scaling: self.scaling.clone(),
            loss_weights: self.loss_weights,
            layers: self.net.specs(),
            num_params: self.num_params(),
        };
        checkpoint::save(dir, &manifest, &self.net.params())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m: LvdManifest = checkpoint::load_manifest(dir)?;
        if m.model != LVD_MODEL_TAG {
            return Err(Error::format(dir, format!("checkpoint holds a `{}` model", m.model)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = LvdModel {
            net: Sequential::from_specs(&m.layers, &mut rng)?,
            config: m.config,
            scaling: m.scaling,
            loss_weights: m.loss_weights,
        };
        checkpoint::load_params(dir, model.net.params_mut())?;
        Ok(model)
    }
}

impl KeypointPredictor for LvdModel {
    fn predict_keypoints(&self, frame: &Volume) -> Result<KeypointSet> {
        self.predict(frame)
    }
}

impl Differentiable for LvdModel {
    type Batch = [LvdSample];

    fn params(&self) -> Vec<&Param> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }

    fn loss(&self, batch: &[LvdSample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::validation("empty batch"));
        }
        let mut total = 0.0;
        for s in batch {
            total += self.sample_loss(&self.predict_coords(&s.frame)?, s)?.0;
        }
        Ok(total / batch.len() as f64)
    }

    fn loss_and_accumulate(&mut self, batch: &[LvdSample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::validation("empty batch"));
        }
        let w = 1.0 / batch.len() as f64;
        let losses = accumulate_per_sample(self, batch, |m, s| m.accumulate_sample(s, w))?;
        Ok(losses.iter().sum::<f64>() * w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvdEpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean of the three per-dimension MAEs on the validation split.
    pub val_mean_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvdTrainReport {
    pub history: Vec<LvdEpochRecord>,
    pub best_epoch: Option<usize>,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub loss_weights: Option<LossWeights>,
}

/// Samples whose id is in the sorted `ids`, in dataset order.
pub fn select_samples(dataset: &[LvdSample], ids: &[String]) -> Vec<LvdSample> {
    dataset
        .iter()
        .filter(|s| ids.binary_search(&s.id).is_ok())
        .cloned()
        .collect()
}

/// Trains on an 80/20 split drawn from `config.seed`. Loss weights and
/// coordinate scaling come from the training split only. The returned model
/// holds the parameters of the epoch with the lowest validation mean MAE.
pub fn train_lvd(model: &mut LvdModel, dataset: &[LvdSample], config: &TrainConfig) -> Result<LvdTrainReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::validation("cannot train on an empty dataset"));
    }
    let ids: Vec<&str> = dataset.iter().map(|s| s.id.as_str()).collect();
    let (train_ids, val_ids) = split_ids(&ids, VALIDATION_FRACTION, config.seed);
    let mut report = LvdTrainReport {
        history: Vec::new(),
        best_epoch: None,
        train_ids,
        val_ids,
        loss_weights: model.loss_weights,
    };
    if config.epochs == 0 {
        return Ok(report);
    }
    let train = select_samples(dataset, &report.train_ids);
    let val = select_samples(dataset, &report.val_ids);
    if model.loss_weights.is_none() {
        let dims: Vec<LvDimensions> = train.iter().map(LvdSample::dims).collect::<Result<_>>()?;
        model.loss_weights = Some(loss_weights(&dims)?);
    }
    if model.scaling.is_none() {
        model.scaling = Some(CoordScaling::fit(&train));
    }
    report.loss_weights = model.loss_weights;
    let mut optimizer = Optimizer::new(config.optimizer, &model.param_sizes());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, LvdModel)> = None;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<LvdSample> = idx.iter().map(|&i| train[i].clone()).collect();
            model.zero_grad();
            loss_sum += model.loss_and_accumulate(&batch)? * batch.len() as f64;
            optimizer.step(&mut model.params_mut(), config.learning_rate)?;
        }
        let val_mean_mae = if val.is_empty() {
            None
        } else {
            Some(evaluate_lvd(model, &val)?.mean_mae)
        };
        if let Some(v) = val_mean_mae {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.clone()));
                report.best_epoch = Some(epoch);
            }
        }
        report.history.push(LvdEpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_mean_mae,
        });
    }
    match best {
        Some((_, m)) => *model = m,
        None => report.best_epoch = Some(config.epochs - 1),
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vertical(ys: [f64; 4]) -> KeypointSet {
        KeypointSet::new(ys.map(|y| Point::new(5.0, y)))
    }

    fn cal(s: f64) -> Calibration {
        Calibration::new(s).unwrap()
    }

    #[test]
    fn axis_aligned_dimensions() {
        let kp = vertical([0.0, 10.0, 40.0, 50.0]);
        assert_eq!(
            dimensions_from_keypoints(&kp, &cal(1.0)).unwrap(),
            LvDimensions::new(10.0, 30.0, 10.0)
        );
        assert_eq!(
            dimensions_from_keypoints(&kp, &cal(0.5)).unwrap(),
            LvDimensions::new(5.0, 15.0, 5.0)
        );
    }

    #[test]
    fn rotation_and_translation_invariance() {
        let kp = vertical([0.0, 10.0, 40.0, 50.0]);
        let base = dimensions_from_keypoints(&kp, &cal(1.0)).unwrap();
        let (cx, cy) = (31.5, 31.5);
        for deg in [30.0f64, 45.0, -72.0] {
            let (s, c) = deg.to_radians().sin_cos();
            let moved = KeypointSet::new(kp.points.map(|p| {
                let (dx, dy) = (p.x - cx, p.y - cy);
                Point::new(cx + c * dx - s * dy + 2.5, cy + s * dx + c * dy - 7.0)
            }));
            let d = dimensions_from_keypoints(&moved, &cal(1.0)).unwrap();
            for (a, b) in d.to_array().iter().zip(base.to_array()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let d = dimensions_from_keypoints(&vertical([0.0, 0.0, 40.0, 50.0]), &cal(1.0)).unwrap();
        assert!(d.is_degenerate());
        assert!(Calibration::new(0.0).is_err());
        assert!(dimensions_from_keypoints(&vertical([0.0; 4]), &Calibration { mm_per_pixel: -1.0 }).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let kp = KeypointSet::from_flat(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(kp.points[2], Point::new(5.0, 6.0));
        assert_eq!(kp.to_flat(), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert!(KeypointSet::from_flat(&[1.0]).is_err());
    }

    #[test]
    fn weight_examples() {
        let two = [LvDimensions::new(4.0, 10.0, 1.0), LvDimensions::new(8.0, 18.0, 5.0)];
        let w = loss_weights(&two).unwrap();
        assert_eq!((w.ivs, w.lvid, w.lvpw), (0.5, 0.25, 0.5));
        let flat = [LvDimensions::new(4.0, 10.0, 1.0), LvDimensions::new(4.0, 18.0, 5.0)];
        assert!(matches!(loss_weights(&flat), Err(Error::Config(_))));
        assert!(loss_weights(&two[..1]).is_err());
    }

    #[test]
    fn weights_scale_covariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let labels: Vec<LvDimensions> = (0..50)
            .map(|_| LvDimensions::new(rng.gen_range(6.0..12.0), rng.gen_range(35.0..60.0), rng.gen_range(6.0..12.0)))
            .collect();
        let w = loss_weights(&labels).unwrap();
        let scaled: Vec<LvDimensions> = labels
            .iter()
            .map(|l| LvDimensions::from_array(l.to_array().map(|v| 2.5 * v)))
            .collect();
        let ws = loss_weights(&scaled).unwrap();
        for (a, b) in w.to_array().iter().zip(ws.to_array()) {
            assert!((a / 2.5 - b).abs() <= 1e-12 * a);
        }
    }

    #[test]
    fn loss_examples() {
        let t = [LvDimensions::new(10.0, 40.0, 9.0)];
        assert_eq!(lvd_loss(&t, &t, &LossWeights::unit()).unwrap(), 0.0);
        let p = [LvDimensions::new(11.0, 42.0, 12.0)];
        assert_eq!(lvd_loss(&p, &t, &LossWeights::unit()).unwrap(), 14.0);
        let w = LossWeights { ivs: 0.5, lvid: 0.25, lvpw: 0.5 };
        let p = [LvDimensions::new(12.0, 42.0, 11.0)];
        assert_eq!(lvd_loss(&p, &t, &w).unwrap(), 5.0);
        let bad = LossWeights { ivs: 0.0, ..w };
        assert!(lvd_loss(&p, &t, &bad).is_err());
        assert!(lvd_loss(&[], &[], &w).is_err());
    }

    #[test]
    fn loss_is_symmetric_under_channel_permutation() {
        let w = LossWeights { ivs: 0.3, lvid: 0.9, lvpw: 0.2 };
        let p = [LvDimensions::new(1.0, 2.0, 3.0), LvDimensions::new(4.0, 4.5, 6.0)];
        let t = [LvDimensions::new(1.5, 2.2, 2.0), LvDimensions::new(3.0, 5.0, 7.5)];
        let perm = |d: &LvDimensions| LvDimensions::new(d.lvpw, d.ivs, d.lvid);
        let wp = LossWeights { ivs: w.lvpw, lvid: w.ivs, lvpw: w.lvid };
        let a = lvd_loss(&p, &t, &w).unwrap();
        let b = lvd_loss(&p.map(|d| perm(&d)), &t.map(|d| perm(&d)), &wp).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    fn tiny_model() -> LvdModel {
        let cfg = LvdModelConfig { frame_dims: [16, 16], channels: vec![2, 3], hidden: 6, coord_weight: 1.0 };
        LvdModel::new(cfg, 11).unwrap()
    }

    fn sample(seed: u64) -> LvdSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frame = Volume::from_fn([16, 16, 1], |_, _, _| rng.gen_range(0.0..1.0));
        let kp = KeypointSet::new([
            Point::new(7.0, 2.0 + seed as f64 * 0.1),
            Point::new(7.5, 5.0 - seed as f64 * 0.2),
            Point::new(8.0, 10.0 + seed as f64 * 0.15),
            Point::new(8.2, 13.0 + seed as f64 * 0.1),
        ]);
        LvdSample::new(format!("s{seed}"), frame, kp, cal(0.5)).unwrap()
    }

    #[test]
    fn zero_output_layer_gives_origin() {
        let mut m = tiny_model();
        m.zero_output_layer();
        let kp = m.predict(&sample(0).frame).unwrap();
        assert!(kp.points.iter().all(|p| *p == Point::new(0.0, 0.0)));
        assert!(m.predict(&Volume::zeros([8, 16, 1])).is_err());
    }

    #[test]
    fn predictions_are_clamped() {
        let mut m = tiny_model();
        m.scaling = Some(CoordScaling { offset: [-50.0, 90.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0], scale: [1.0; 8] });
        let kp = m.predict(&sample(1).frame).unwrap();
        assert!(kp.in_bounds(16, 16));
    }

    #[test]
    fn center_baseline_scores_mean_true_dims() {
        let data: Vec<LvdSample> = (0..5).map(sample).collect();
        let e = evaluate_lvd(&center_keypoints(16, 16), &data).unwrap();
        let mut want = [0.0; 3];
        for s in &data {
            let d = s.dims().unwrap().to_array();
            (0..3).for_each(|m| want[m] += d[m] / 5.0);
        }
        for (a, b) in e.mae.to_array().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(e.warnings.len(), 5);
        let perfect = ConstantKeypoints(data[0].keypoints);
        let e = evaluate_lvd(&perfect, &data[..1]).unwrap();
        assert_eq!(e.mae, LvDimensions::default());
        assert!(evaluate_lvd(&perfect, &[]).is_err());
    }

    #[test]
    fn coordinate_loss_gradient_matches_differences() {
        let mut m = tiny_model();
        m.loss_weights = Some(LossWeights { ivs: 0.7, lvid: 0.2, lvpw: 1.3 });
        let s = sample(3);
        let coords = [6.0, 1.0, 7.0, 6.0, 9.0, 9.5, 8.0, 14.0];
        let (_, g) = m.sample_loss(&coords, &s).unwrap();
        for j in 0..8 {
            let mut plus = coords;
            plus[j] += 1e-6;
            let mut minus = coords;
            minus[j] -= 1e-6;
            let fd = (m.sample_loss(&plus, &s).unwrap().0 - m.sample_loss(&minus, &s).unwrap().0) / 2e-6;
            assert!((fd - g[j]).abs() < 1e-6 * (1.0 + g[j].abs()), "coord {j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn lvd_checkpoint_round_trip() {
        let mut m = tiny_model();
        m.scaling = Some(CoordScaling { offset: [1.0; 8], scale: [2.0; 8] });
        m.loss_weights = Some(LossWeights { ivs: 0.5, lvid: 0.1, lvpw: 0.4 });
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = LvdModel::load(dir.path()).unwrap();
        assert_eq!(back, m);
        assert!(crate::ef::EfModel::load(dir.path()).is_err());
    }

    #[test]
    fn training_reduces_loss_and_keeps_split_weights() {
        let mut m = tiny_model();
        let data: Vec<LvdSample> = (0..10).map(sample).collect();
        let cfg = TrainConfig { epochs: 15, batch_size: 4, learning_rate: 3e-3, ..Default::default() };
        let r = train_lvd(&mut m, &data, &cfg).unwrap();
        assert_eq!(r.history.len(), 15);
        assert_eq!((r.train_ids.len(), r.val_ids.len()), (8, 2));
        assert!(r.history.last().unwrap().train_loss < r.history[0].train_loss);
        let train = select_samples(&data, &r.train_ids);
        let dims: Vec<LvDimensions> = train.iter().map(|s| s.dims().unwrap()).collect();
        assert_eq!(r.loss_weights, Some(loss_weights(&dims).unwrap()));
    }
}
