//! One function per subcommand. Each is a thin layer over the core crate
//! that returns a [`Report`]; failed checks become verdicts, not errors.

use std::path::{Path, PathBuf};
use std::time::Instant;

use cardio_core::beats::{area_signal, detect_area_extrema, extract_beats, DetectorConfig, MaskSequence};
use cardio_core::conv::{conv3d_full, conv_factored, flop_model, kron_kernel, nearest_separable, ConvMode, Padding};
use cardio_core::counter::OpCounter;
use cardio_core::ctr1::DType;
use cardio_core::ef::{evaluate_mae, mean_predictor, select_videos, train_ef, EfModel, EfModelConfig, EfPredictor, EfSample};
use cardio_core::lvd::{
    center_keypoints, evaluate_lvd, select_samples, train_lvd, KeypointPredictor, LvdEvaluation, LvdModel,
    LvdModelConfig, LvdSample,
};
use cardio_core::nn::gradcheck::{self, DEFAULT_EPSILON, DEFAULT_TOLERANCE};
use cardio_core::nn::TrainConfig;
use cardio_core::synth::{
    ef_beat_samples, gen_ef_dataset, gen_lvd_dataset, EfDatasetParams, LvdSceneParams, SYNTH_FRAME_RATE,
};
use cardio_core::tensor::{Kernel2D, Kernel3D, SeparableKernel, Volume};
use cardio_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{self, EfLabelRow, LvdLabelRow, EF_LABELS, LVD_LABELS};
use crate::report::Report;

/// Relative error allowed between the factored and full convolution.
pub const ORACLE_TOLERANCE: f64 = 1e-10;
/// A non-separable kernel must differ from its separable approximation by
/// more than this for the control case to count as detected.
pub const CONTROL_MIN_ERROR: f64 = 1e-6;
/// Width of the epoch windows whose mean training MAE must keep falling.
pub const CURVE_WINDOW: usize = 5;

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn random_volume(dims: [usize; 3], rng: &mut ChaCha8Rng) -> Result<Volume> {
    let n = dims.iter().product();
    Volume::new(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn random_separable(dims: [usize; 3], rng: &mut ChaCha8Rng) -> Result<SeparableKernel> {
    let [mx, my, mt] = dims;
    let spatial = Kernel2D::new(mx, my, (0..mx * my).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    SeparableKernel::new(spatial, (0..mt).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleArgs {
    pub trials: usize,
    /// Largest video extent along each axis.
    pub max_dim: usize,
    /// Largest kernel extent along each axis.
    pub max_kernel: usize,
    pub seed: u64,
}

impl Default for OracleArgs {
    fn default() -> Self {
        OracleArgs { trials: 200, max_dim: 16, max_kernel: 7, seed: 42 }
    }
}

/// Factored against full convolution on random separable kernels,
/// alternating paddings, plus a non-separable control kernel.
pub fn cmd_oracle_check(args: &OracleArgs) -> Result<Report> {
    if args.trials == 0 || args.max_kernel == 0 || args.max_dim < args.max_kernel {
        return Err(Error::config(format!(
            "need trials ≥ 1 and max_dim ≥ max_kernel ≥ 1, got {args:?}"
        )));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (mut max_err, mut counts_ok) = (0.0f64, true);
    for trial in 0..args.trials {
        let padding = if trial % 2 == 0 { Padding::Same } else { Padding::Valid };
        let kdims: [usize; 3] = std::array::from_fn(|_| match padding {
            Padding::Same => 2 * rng.gen_range(0..=(args.max_kernel - 1) / 2) + 1,
            Padding::Valid => rng.gen_range(1..=args.max_kernel),
        });
        let vdims: [usize; 3] = std::array::from_fn(|d| match padding {
            Padding::Same => rng.gen_range(1..=args.max_dim),
            Padding::Valid => rng.gen_range(kdims[d]..=args.max_dim),
        });
        let video = random_volume(vdims, &mut rng)?;
        let sep = random_separable(kdims, &mut rng)?;
        let (cf, cs) = (OpCounter::new(), OpCounter::new());
        let full = conv3d_full(&video, &kron_kernel(&sep), padding, &cf)?;
        let fact = conv_factored(&video, &sep, padding, &cs)?;
        max_err = max_err.max(fact.rel_diff(&full)?);
        counts_ok &= cf.multiplies() == flop_model(vdims, kdims, ConvMode::Full, padding)?;
        counts_ok &= cs.multiplies() == flop_model(vdims, kdims, ConvMode::Factored, padding)?;
    }
    // A generic 3×3×3 kernel is not an outer product, so even its best
    // separable approximation must give a visibly different output.
    let video = random_volume([8, 8, 8], &mut rng)?;
    let kernel = Kernel3D::new([3, 3, 3], (0..27).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let c = OpCounter::new();
    let full = conv3d_full(&video, &kernel, Padding::Same, &c)?;
    let approx = conv_factored(&video, &nearest_separable(&kernel), Padding::Same, &c)?;
    let control_err = approx.rel_diff(&full)?;

    let mut r = Report::new("oracle-check");
    r.config("trials", args.trials)
        .config("max_dim", args.max_dim)
        .config("max_kernel", args.max_kernel)
        .config("seed", args.seed)
        .config("tolerance", ORACLE_TOLERANCE)
        .metric("max_rel_error", max_err)
        .metric("control_rel_error", control_err)
        .metric("trials", args.trials as f64)
        .verdict("factored_matches_full", max_err <= ORACLE_TOLERANCE)
        .verdict("counts_match_flop_model", counts_ok)
        .verdict("control_mismatch_detected", control_err > CONTROL_MIN_ERROR)
        .timing("total_ms", ms_since(started));
    Ok(r)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchArgs {
    pub video_dims: [usize; 3],
    pub kernel_dims: [usize; 3],
    pub padding: Padding,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchArgs {
    fn default() -> Self {
        BenchArgs { video_dims: [64; 3], kernel_dims: [7; 3], padding: Padding::Same, repeats: 3, seed: 42 }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Multiply counts (exact, compared with the closed form) and wall-clock
/// medians of the full and factored routes. Timings go to the report's
/// timing section only.
pub fn cmd_bench(args: &BenchArgs) -> Result<Report> {
    if args.repeats == 0 {
        return Err(Error::config("repeats must be at least 1"));
    }
    let started = Instant::now();
    let model_full = flop_model(args.video_dims, args.kernel_dims, ConvMode::Full, args.padding)?;
    let model_fact = flop_model(args.video_dims, args.kernel_dims, ConvMode::Factored, args.padding)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let video = random_volume(args.video_dims, &mut rng)?;
    let sep = random_separable(args.kernel_dims, &mut rng)?;
    let kernel = kron_kernel(&sep);
    let (cf, cs) = (OpCounter::new(), OpCounter::new());
    let (mut t_full, mut t_fact) = (Vec::new(), Vec::new());
    for _ in 0..args.repeats {
        let t = Instant::now();
        conv3d_full(&video, &kernel, args.padding, &cf)?;
        t_full.push(ms_since(t));
        let t = Instant::now();
        conv_factored(&video, &sep, args.padding, &cs)?;
        t_fact.push(ms_since(t));
    }
    // Every repeat costs the same, so the totals divide evenly.
    let reps = args.repeats as u64;
    let (count_full, count_fact) = (cf.multiplies() / reps, cs.multiplies() / reps);
    let (med_full, med_fact) = (median(t_full), median(t_fact));
    let mut r = Report::new("bench");
    r.config("video_dims", args.video_dims)
        .config("kernel_dims", args.kernel_dims)
        .config("padding", args.padding)
        .config("repeats", args.repeats)
        .config("seed", args.seed)
        .metric("count_full", count_full as f64)
        .metric("count_factored", count_fact as f64)
        .metric("flop_model_full", model_full as f64)
        .metric("flop_model_factored", model_fact as f64)
        .metric("count_ratio", count_full as f64 / count_fact as f64)
        .verdict(
            "counts_match_flop_model",
            cf.multiplies() == reps * model_full && cs.multiplies() == reps * model_fact,
        )
        .timing("full_median_ms", med_full)
        .timing("factored_median_ms", med_fact)
        .timing("wall_clock_ratio", med_full / med_fact)
        .timing("total_ms", ms_since(started));
    Ok(r)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckArgs {
    /// Random instances per layer kind.
    pub instances: usize,
    /// Sampled entries per parameter tensor in the end-to-end EF check.
    pub per_tensor: usize,
    pub seed: u64,
}

impl Default for GradcheckArgs {
    fn default() -> Self {
        GradcheckArgs { instances: 20, per_tensor: 20, seed: 42 }
    }
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<Report> {
    let started = Instant::now();
    let mut checks = gradcheck::check_all_layers(args.instances, args.seed, DEFAULT_TOLERANCE)?;
    checks.push(gradcheck::check_ef_model(args.seed, args.per_tensor, DEFAULT_TOLERANCE)?);
    checks.push(gradcheck::check_lvd_model(args.seed, DEFAULT_TOLERANCE)?);
    let mut r = Report::new("gradcheck");
    r.config("instances", args.instances)
        .config("per_tensor", args.per_tensor)
        .config("seed", args.seed)
        .config("epsilon", DEFAULT_EPSILON)
        .config("tolerance", DEFAULT_TOLERANCE);
    for c in &checks {
        r.metric(&format!("{}.max_rel_error", c.name), c.max_rel_error)
            .metric(&format!("{}.instances", c.name), c.instances as f64)
            .metric(&format!("{}.coordinates", c.name), c.coordinates as f64)
            .verdict(&c.name, c.passed);
    }
    r.timing("total_ms", ms_since(started));
    Ok(r)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtractArgs {
    pub video: PathBuf,
    pub masks: PathBuf,
    pub out_dir: PathBuf,
    pub frame_rate: f64,
    /// Overrides of the frame-rate defaults.
    pub min_separation: Option<usize>,
    pub min_prominence: Option<f64>,
    pub smooth: bool,
}

#[derive(Serialize)]
struct ClipIndexEntry {
    clip_path: String,
    start_frame: usize,
    end_frame: usize,
    start_area: u64,
    end_area: u64,
}

#[derive(Serialize)]
struct ClipIndex {
    video: String,
    masks: String,
    detector: DetectorConfig,
    maxima: Vec<usize>,
    minima: Vec<usize>,
    clips: Vec<ClipIndexEntry>,
}

/// Writes `clip_NNN.ctr` per detected beat and `index.json` to `out_dir`.
pub fn cmd_extract_beats(args: &ExtractArgs) -> Result<Report> {
    let started = Instant::now();
    let (video, dtype) = data::load_volume(&args.video)?;
    let (mask_vol, _) = data::load_volume(&args.masks)?;
    if mask_vol.dims() != video.dims() {
        return Err(Error::validation(format!(
            "mask dims {:?} differ from video dims {:?}",
            mask_vol.dims(),
            video.dims()
        )));
    }
    let masks = MaskSequence::from_volume(&mask_vol)?;
    let mut detector = DetectorConfig::for_frame_rate(args.frame_rate);
    if let Some(s) = args.min_separation {
        detector.min_separation = s;
    }
    if let Some(p) = args.min_prominence {
        detector.min_prominence = p;
    }
    detector.smooth = args.smooth;
    let signal = area_signal(&masks, args.frame_rate)?;
    let extrema = detect_area_extrema(&signal, &detector)?;
    let clips = extract_beats(&video, &extrema)?;
    data::create_dir(&args.out_dir)?;
    let mut entries = Vec::new();
    for (i, clip) in clips.iter().enumerate() {
        let name = format!("clip_{i:03}.ctr");
        data::save_volume(&args.out_dir.join(&name), &clip.video, dtype)?;
        entries.push(ClipIndexEntry {
            clip_path: name,
            start_frame: clip.start_frame,
            end_frame: clip.end_frame,
            start_area: signal.values[clip.start_frame],
            end_area: signal.values[clip.end_frame],
        });
    }
    let index = ClipIndex {
        video: path_str(&args.video),
        masks: path_str(&args.masks),
        detector: detector.clone(),
        maxima: extrema.maxima.clone(),
        minima: extrema.minima.clone(),
        clips: entries,
    };
    data::write_json(&args.out_dir.join("index.json"), &index)?;

    let mut r = Report::new("extract-beats");
    r.config("video", path_str(&args.video))
        .config("masks", path_str(&args.masks))
        .config("out_dir", path_str(&args.out_dir))
        .config("frame_rate", args.frame_rate)
        .config("detector", &detector)
        .metric("frames", video.nt() as f64)
        .metric("maxima", extrema.maxima.len() as f64)
        .metric("minima", extrema.minima.len() as f64)
        .metric("clips", clips.len() as f64)
        .verdict("clips_found", !clips.is_empty())
        .timing("total_ms", ms_since(started));
    Ok(r)
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthArgs {
    pub out_dir: PathBuf,
    pub ef_videos: usize,
    pub lvd_frames: usize,
    pub mm_per_pixel: f64,
    pub seed: u64,
}

impl Default for SynthArgs {
    fn default() -> Self {
        SynthArgs { out_dir: PathBuf::from("synth"), ef_videos: 200, lvd_frames: 500, mm_per_pixel: 1.0, seed: 42 }
    }
}

#[derive(Serialize)]
struct SynthVideoEntry {
    id: String,
    ef_true: f64,
    period_frames: f64,
    clips: usize,
    true_maxima: Vec<usize>,
    true_minima: Vec<usize>,
}

#[derive(Serialize)]
struct SynthManifest {
    seed: u64,
    ef_params: EfDatasetParams,
    ef_detector: DetectorConfig,
    lvd_params: LvdSceneParams,
    lvd_frames: usize,
    videos: Vec<SynthVideoEntry>,
}

/// Emits `ef/` (videos, masks, beat clips), `lvd/` (frames), both label CSVs
/// and `manifest.json`. Tensors are stored as f32.
pub fn cmd_synth(args: &SynthArgs) -> Result<Report> {
    let started = Instant::now();
    let root = &args.out_dir;
    let ef_params = EfDatasetParams { n_videos: args.ef_videos, seed: args.seed, ..EfDatasetParams::default() };
    let lvd_params = LvdSceneParams { mm_per_pixel: args.mm_per_pixel, seed: args.seed, ..LvdSceneParams::default() };
    let detector = DetectorConfig::for_frame_rate(SYNTH_FRAME_RATE);

    let videos = gen_ef_dataset(&ef_params)?;
    data::create_dir(&root.join("ef/clips"))?;
    let mut ef_rows = Vec::new();
    let mut entries = Vec::new();
    let mut clips_match_beats = true;
    for (i, v) in videos.iter().enumerate() {
        let id = format!("video_{i:03}");
        data::save_volume(&root.join(format!("ef/{id}.ctr")), &v.video, DType::F32)?;
        data::save_volume(&root.join(format!("ef/{id}_masks.ctr")), &v.masks.to_volume(), DType::F32)?;
        let samples = ef_beat_samples(std::slice::from_ref(v), &detector)?;
        for (k, s) in samples.iter().enumerate() {
            let rel = format!("ef/clips/{id}_clip_{k}.ctr");
            data::save_volume(&root.join(&rel), &s.clip, DType::F32)?;
            ef_rows.push(EfLabelRow { clip_path: rel, ef_percent: v.ef_true });
        }
        clips_match_beats &= samples.len() == v.params.n_beats;
        entries.push(SynthVideoEntry {
            id,
            ef_true: v.ef_true,
            period_frames: v.params.period_frames,
            clips: samples.len(),
            true_maxima: v.true_extrema.maxima.clone(),
            true_minima: v.true_extrema.minima.clone(),
        });
    }
    data::write_csv(&root.join(EF_LABELS), &ef_rows)?;

    let frames = gen_lvd_dataset(&lvd_params, args.lvd_frames)?;
    data::create_dir(&root.join("lvd"))?;
    let mut lvd_rows = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        let rel = format!("lvd/frame_{i:03}.ctr");
        data::save_volume(&root.join(&rel), &f.frame, DType::F32)?;
        lvd_rows.push(LvdLabelRow::new(rel, &f.keypoints, args.mm_per_pixel));
    }
    data::write_csv(&root.join(LVD_LABELS), &lvd_rows)?;

    let manifest = SynthManifest {
        seed: args.seed,
        ef_params: ef_params.clone(),
        ef_detector: detector,
        lvd_params: lvd_params.clone(),
        lvd_frames: args.lvd_frames,
        videos: entries,
    };
    data::write_json(&root.join("manifest.json"), &manifest)?;

    let mut r = Report::new("synth");
    r.config("out_dir", path_str(root))
        .config("ef_params", &ef_params)
        .config("lvd_params", &lvd_params)
        .config("lvd_frames", args.lvd_frames)
        .config("seed", args.seed)
        .metric("ef_videos", videos.len() as f64)
        .metric("ef_clips", ef_rows.len() as f64)
        .metric("lvd_frames", frames.len() as f64)
        .verdict("clips_per_video_match_beats", clips_match_beats)
        .timing("total_ms", ms_since(started));
    Ok(r)
}

/// Means of consecutive non-overlapping windows of `width`; a trailing
/// partial window is dropped.
pub fn window_means(values: &[f64], width: usize) -> Vec<f64> {
    values
        .chunks_exact(width.max(1))
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect()
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn echo_train(r: &mut Report, cfg: &TrainConfig) {
    r.config("learning_rate", cfg.learning_rate)
        .config("batch_size", cfg.batch_size)
        .config("epochs", cfg.epochs)
        .config("optimizer", cfg.optimizer)
        .config("seed", cfg.seed);
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainEfArgs {
    pub labels: PathBuf,
    pub checkpoint: PathBuf,
    pub train: TrainConfig,
    /// Frame dims are taken from the data.
    pub model: EfModelConfig,
    /// Held-out MAE must not exceed this multiple of the predict-mean baseline.
    pub max_baseline_ratio: f64,
}

pub fn cmd_train_ef(args: &TrainEfArgs) -> Result<Report> {
    let started = Instant::now();
    let dataset = data::load_ef_samples(&args.labels)?;
    let [nx, ny, _] = dataset[0].clip.dims();
    let config = EfModelConfig { frame_dims: [nx, ny], ..args.model.clone() };
    let mut model = EfModel::new(config.clone(), args.train.seed)?;
    let report = train_ef(&mut model, &dataset, &args.train)?;
    model.save(&args.checkpoint)?;

    let mut r = Report::new("train-ef");
    echo_train(&mut r, &args.train);
    r.config("labels", path_str(&args.labels))
        .config("checkpoint", path_str(&args.checkpoint))
        .config("model", &config)
        .config("max_baseline_ratio", args.max_baseline_ratio)
        .metric("clips", dataset.len() as f64)
        .metric("params", model.num_params() as f64)
        .metric("train_videos", report.train_videos.len() as f64)
        .metric("val_videos", report.val_videos.len() as f64);
    if let Some(best) = report.best_epoch {
        r.metric("best_epoch", best as f64);
    }
    let train_mae: Vec<f64> = report.history.iter().map(|h| h.train_mae).collect();
    let windows = window_means(&train_mae, CURVE_WINDOW);
    r.series("train_loss", report.history.iter().map(|h| h.train_loss).collect())
        .series("train_mae", train_mae)
        .series("train_mae_window_means", windows.clone())
        .series("val_mae", report.history.iter().filter_map(|h| h.val_mae).collect())
        .verdict("train_mae_windows_decrease", strictly_decreasing(&windows));

    let val = select_videos(&dataset, &report.val_videos);
    if !val.is_empty() {
        let train = select_videos(&dataset, &report.train_videos);
        let model_eval = evaluate_mae(&model, &val)?;
        let baseline = mean_predictor(&train)?;
        let base_eval = evaluate_mae(&baseline, &val)?;
        let ratio = model_eval.mae / base_eval.mae;
        r.metric("val_mae", model_eval.mae)
            .metric("baseline_value", baseline.0)
            .metric("baseline_val_mae", base_eval.mae)
            .metric("baseline_ratio", ratio)
            .verdict("beats_baseline", ratio <= args.max_baseline_ratio);
    }
    r.timing("total_ms", ms_since(started));
    Ok(r)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalEfArgs {
    pub checkpoint: PathBuf,
    pub labels: PathBuf,
    pub max_mae: Option<f64>,
}

/// Per-video MAE of any predictor over labelled samples.
pub fn ef_eval_report<P: EfPredictor + ?Sized>(predictor: &P, samples: &[EfSample], max_mae: Option<f64>) -> Result<Report> {
    let e = evaluate_mae(predictor, samples)?;
    let mut r = Report::new("eval-ef");
    r.metric("mae", e.mae).metric("videos", e.videos as f64).metric("clips", e.clips as f64);
    if let Some(m) = max_mae {
        r.config("max_mae", m).verdict("mae_within_limit", e.mae <= m);
    }
    Ok(r)
}

pub fn cmd_eval_ef(args: &EvalEfArgs) -> Result<Report> {
    let started = Instant::now();
    let model = EfModel::load(&args.checkpoint)?;
    let samples = data::load_ef_samples(&args.labels)?;
    let mut r = ef_eval_report(&model, &samples, args.max_mae)?;
    r.config("checkpoint", path_str(&args.checkpoint))
        .config("labels", path_str(&args.labels))
        .timing("total_ms", ms_since(started));
    Ok(r)
}

fn lvd_metrics(r: &mut Report, prefix: &str, e: &LvdEvaluation) {
    r.metric(&format!("{prefix}mae_ivs"), e.mae.ivs)
        .metric(&format!("{prefix}mae_lvid"), e.mae.lvid)
        .metric(&format!("{prefix}mae_lvpw"), e.mae.lvpw)
        .metric(&format!("{prefix}mean_mae"), e.mean_mae);
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainLvdArgs {
    pub labels: PathBuf,
    pub checkpoint: PathBuf,
    pub train: TrainConfig,
    /// Frame dims are taken from the data.
    pub model: LvdModelConfig,
    /// Held-out mean MAE must not exceed this multiple of the centre baseline.
    pub max_baseline_ratio: f64,
}

pub fn cmd_train_lvd(args: &TrainLvdArgs) -> Result<Report> {
    let started = Instant::now();
    let dataset = data::load_lvd_samples(&args.labels)?;
    let [nx, ny, _] = dataset[0].frame.dims();
    let config = LvdModelConfig { frame_dims: [nx, ny], ..args.model.clone() };
    let mut model = LvdModel::new(config.clone(), args.train.seed)?;
    let report = train_lvd(&mut model, &dataset, &args.train)?;
    model.save(&args.checkpoint)?;

    let mut r = Report::new("train-lvd");
    echo_train(&mut r, &args.train);
    r.config("labels", path_str(&args.labels))
        .config("checkpoint", path_str(&args.checkpoint))
        .config("model", &config)
        .config("max_baseline_ratio", args.max_baseline_ratio)
        .metric("frames", dataset.len() as f64)
        .metric("params", model.num_params() as f64)
        .metric("train_frames", report.train_ids.len() as f64)
        .metric("val_frames", report.val_ids.len() as f64)
        .series("train_loss", report.history.iter().map(|h| h.train_loss).collect())
        .series("val_mean_mae", report.history.iter().filter_map(|h| h.val_mean_mae).collect());
    if let Some(best) = report.best_epoch {
        r.metric("best_epoch", best as f64);
    }
    if let Some(w) = report.loss_weights {
        r.metric("weight_ivs", w.ivs).metric("weight_lvid", w.lvid).metric("weight_lvpw", w.lvpw);
    }
    let val = select_samples(&dataset, &report.val_ids);
    if !val.is_empty() {
        let ratio = lvd_compare(&mut r, &model, &val)?;
        r.verdict("beats_baseline", ratio <= args.max_baseline_ratio);
    }
    r.timing("total_ms", ms_since(started));
    Ok(r)
}

/// Adds model and centre-baseline metrics; returns model / baseline mean MAE.
fn lvd_compare<P: KeypointPredictor + ?Sized>(r: &mut Report, model: &P, samples: &[LvdSample]) -> Result<f64> {
    let [nx, ny, _] = samples[0].frame.dims();
    let e = evaluate_lvd(model, samples)?;
    let b = evaluate_lvd(&center_keypoints(nx, ny), samples)?;
    lvd_metrics(r, "", &e);
    lvd_metrics(r, "baseline_", &b);
    let ratio = e.mean_mae / b.mean_mae;
    r.metric("baseline_ratio", ratio).metric("degenerate_frames", e.warnings.len() as f64);
    Ok(ratio)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalLvdArgs {
    pub checkpoint: PathBuf,
    pub labels: PathBuf,
    pub max_mean_mae: Option<f64>,
}

pub fn cmd_eval_lvd(args: &EvalLvdArgs) -> Result<Report> {
    let started = Instant::now();
    let model = LvdModel::load(&args.checkpoint)?;
    let samples = data::load_lvd_samples(&args.labels)?;
    let mut r = Report::new("eval-lvd");
    r.config("checkpoint", path_str(&args.checkpoint))
        .config("labels", path_str(&args.labels))
        .metric("frames", samples.len() as f64);
    lvd_compare(&mut r, &model, &samples)?;
    if let Some(w) = model.loss_weights {
        r.metric("weight_ivs", w.ivs).metric("weight_lvid", w.lvid).metric("weight_lvpw", w.lvpw);
    }
    if let Some(m) = args.max_mean_mae {
        let mean = r.metrics["mean_mae"];
        r.config("max_mean_mae", m).verdict("mean_mae_within_limit", mean <= m);
    }
    r.timing("total_ms", ms_since(started));
    Ok(r)
}
