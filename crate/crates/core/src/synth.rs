//! Seeded synthetic echo data with exact labels: a pulsating elliptical
//! ventricle for ejection fraction and beat extraction, and banded
//! long-axis frames with keypoints for wall and cavity dimensions.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beats::{area_signal, detect_area_extrema, extract_beats, DetectorConfig, ExtremaList, MaskSequence};
use crate::ef::EfSample;
use crate::error::{Error, Result};
use crate::lvd::{dimensions_from_keypoints, Calibration, KeypointSet, LvDimensions, LvdSample, Point};
use crate::tensor::{Volume, VideoTensor};

/// Frame rate assumed for generated videos: a 41-frame beat lasts 0.8 s.
pub const SYNTH_FRAME_RATE: f64 = 41.0 / 0.8;

pub const INTERIOR_INTENSITY: f64 = 0.8;
pub const EXTERIOR_INTENSITY: f64 = 0.2;

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn noise(rng: &mut ChaCha8Rng, amplitude: f64) -> f64 {
    if amplitude > 0.0 {
        rng.gen_range(-amplitude..=amplitude)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfSceneParams {
    /// `[nx, ny]`
    pub frame_dims: [usize; 2],
    pub period_frames: f64,
    pub n_beats: usize,
    /// End-systolic area as a fraction of the frame area.
    pub base_area: f64,
    /// End-diastolic minus end-systolic area, as a fraction of the frame area.
    pub pulsatility: f64,
    /// Half-width of the uniform intensity noise.
    pub noise_amplitude: f64,
    /// y semi-axis over x semi-axis.
    pub elongation: f64,
    pub seed: u64,
}

impl Default for EfSceneParams {
    fn default() -> Self {
        EfSceneParams {
            frame_dims: [32, 32],
            period_frames: 41.0,
            n_beats: 2,
            base_area: 0.15,
            pulsatility: 0.15,
            noise_amplitude: 0.05,
            elongation: 1.5,
            seed: 42,
        }
    }
}

impl EfSceneParams {
    fn validate(&self) -> Result<()> {
        let [nx, ny] = self.frame_dims;
        if nx == 0 || ny == 0 || self.n_beats == 0 {
            return Err(Error::config("frame dims and beat count must be positive"));
        }
        if !(self.period_frames >= 6.0 && self.period_frames.is_finite()) {
            return Err(Error::config(format!(
                "period must be at least 6 frames, got {}",
                self.period_frames
            )));
        }
        let total = self.base_area + self.pulsatility;
        if !(self.base_area > 0.0 && self.pulsatility >= 0.0 && total < 1.0) {
            return Err(Error::config(format!(
                "need base area > 0, pulsatility ≥ 0 and their sum < 1, got {} + {}",
                self.base_area, self.pulsatility
            )));
        }
        if !(self.noise_amplitude >= 0.0 && self.elongation > 0.0) {
            return Err(Error::config("noise must be ≥ 0 and elongation > 0"));
        }
        Ok(())
    }

    fn frame_area(&self) -> f64 {
        (self.frame_dims[0] * self.frame_dims[1]) as f64
    }

    pub fn max_area(&self) -> f64 {
        (self.base_area + self.pulsatility) * self.frame_area()
    }

    pub fn min_area(&self) -> f64 {
        self.base_area * self.frame_area()
    }

    /// Ellipse area in pixels at frame `t`; crests at multiples of the period.
    pub fn area_at(&self, t: f64) -> f64 {
        let (a_max, a_min) = (self.max_area(), self.min_area());
        a_max - (a_max - a_min) * (1.0 - (2.0 * PI * t / self.period_frames).cos()) / 2.0
    }

    /// Frames in the video: `n_beats` periods plus the closing crest.
    pub fn n_frames(&self) -> usize {
        (self.n_beats as f64 * self.period_frames).round() as usize + 1
    }
}

/// Ejection fraction of a shape scaled isotropically between two areas:
/// volume ∝ area^{3/2}.
pub fn ef_from_areas(a_max: f64, a_min: f64) -> f64 {
    100.0 * (1.0 - (a_min / a_max).powf(1.5))
}

/// Area ratio `A_min / A_max` giving ejection fraction `ef`.
pub fn area_ratio_for_ef(ef: f64) -> f64 {
    (1.0 - ef / 100.0).powf(2.0 / 3.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfVideo {
    pub video: VideoTensor,
    pub masks: MaskSequence,
    pub ef_true: f64,
    pub true_extrema: ExtremaList,
    /// Mask pixel count per frame.
    pub pixel_counts: Vec<u64>,
    pub params: EfSceneParams,
}

/// Renders the pulsating ellipse. Pixel `(x, y)` is inside when its centre
/// `(x + ½, y + ½)` lies in the ellipse centred on the frame.
pub fn gen_ef_video(params: &EfSceneParams) -> Result<EfVideo> {
    params.validate()?;
    let [nx, ny] = params.frame_dims;
    let semi_axes = |area: f64| {
        let ax = (area / (PI * params.elongation)).sqrt();
        (ax, ax * params.elongation)
    };
    let (ax, ay) = semi_axes(params.max_area());
    if ax > nx as f64 / 2.0 || ay > ny as f64 / 2.0 {
        return Err(Error::config(format!(
            "ellipse with semi-axes ({ax:.2}, {ay:.2}) exceeds the {nx}×{ny} frame"
        )));
    }
    let nt = params.n_frames();
    let (cx, cy) = (nx as f64 / 2.0, ny as f64 / 2.0);
    let mut rng = seeded(params.seed);
    let mut masks = vec![0u8; nx * ny * nt];
    let mut video = vec![0.0; nx * ny * nt];
    let mut pixel_counts = vec![0u64; nt];
    for (t, count) in pixel_counts.iter_mut().enumerate() {
        let (ax, ay) = semi_axes(params.area_at(t as f64));
        for x in 0..nx {
            for y in 0..ny {
                let (dx, dy) = ((x as f64 + 0.5 - cx) / ax, (y as f64 + 0.5 - cy) / ay);
                let i = (x * ny + y) * nt + t;
                let inside = dx * dx + dy * dy <= 1.0;
                masks[i] = inside as u8;
                *count += inside as u64;
                let base = if inside { INTERIOR_INTENSITY } else { EXTERIOR_INTENSITY };
                video[i] = base + noise(&mut rng, params.noise_amplitude);
            }
        }
    }
    let true_extrema = if params.pulsatility == 0.0 {
        ExtremaList::default()
    } else {
        let p = params.period_frames;
        ExtremaList {
            maxima: (0..=params.n_beats).map(|k| (k as f64 * p).round() as usize).collect(),
            minima: (0..params.n_beats)
                .map(|k| (k as f64 * p + p / 2.0).floor() as usize)
                .collect(),
        }
    };
    Ok(EfVideo {
        video: Volume::new([nx, ny, nt], video)?,
        masks: MaskSequence::new([nx, ny, nt], masks)?,
        ef_true: ef_from_areas(params.max_area(), params.min_area()),
        true_extrema,
        pixel_counts,
        params: params.clone(),
    })
}

/// Ranges for a population of EF videos; each range is sampled uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfDatasetParams {
    pub n_videos: usize,
    pub frame_dims: [usize; 2],
    pub n_beats: usize,
    /// Integer periods drawn from `[lo, hi]`.
    pub period_range: [usize; 2],
    pub ef_range: [f64; 2],
    /// End-diastolic area as a fraction of the frame area.
    pub max_area_range: [f64; 2],
    pub noise_amplitude: f64,
    pub elongation: f64,
    pub seed: u64,
}

impl Default for EfDatasetParams {
    fn default() -> Self {
        EfDatasetParams {
            n_videos: 200,
            frame_dims: [16, 16],
            n_beats: 2,
            period_range: [30, 50],
            ef_range: [20.0, 75.0],
            max_area_range: [0.3, 0.45],
            noise_amplitude: 0.05,
            elongation: 1.5,
            seed: 42,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0] <= r[1] && r[0].is_finite() && r[1].is_finite()) {
        return Err(Error::config(format!("{name} range {r:?} is not ordered")));
    }
    Ok(())
}

fn sample(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

impl EfDatasetParams {
    /// Per-video scene parameters, drawn in order from one seeded stream.
    pub fn scenes(&self) -> Result<Vec<EfSceneParams>> {
        check_range("ef", self.ef_range)?;
        check_range("max area", self.max_area_range)?;
        if self.period_range[0] > self.period_range[1] {
            return Err(Error::config(format!("period range {:?} is not ordered", self.period_range)));
        }
        if !(0.0..100.0).contains(&self.ef_range[0]) || !(0.0..100.0).contains(&self.ef_range[1]) {
            return Err(Error::config(format!("ef range {:?} outside [0, 100)", self.ef_range)));
        }
        let mut rng = seeded(self.seed);
        Ok((0..self.n_videos)
            .map(|_| {
                let period = rng.gen_range(self.period_range[0]..=self.period_range[1]);
                let ef = sample(&mut rng, self.ef_range);
                let a_max = sample(&mut rng, self.max_area_range);
                let ratio = area_ratio_for_ef(ef);
                EfSceneParams {
                    frame_dims: self.frame_dims,
                    period_frames: period as f64,
                    n_beats: self.n_beats,
                    base_area: a_max * ratio,
                    pulsatility: a_max * (1.0 - ratio),
                    noise_amplitude: self.noise_amplitude,
                    elongation: self.elongation,
                    seed: rng.gen(),
                }
            })
            .collect())
    }
}

pub fn gen_ef_dataset(params: &EfDatasetParams) -> Result<Vec<EfVideo>> {
    params.scenes()?.par_iter().map(gen_ef_video).collect()
}

/// Runs beat extraction on each video's masks and labels every clip with the
/// video's ejection fraction. Video ids are `video_NNN` in input order.
pub fn ef_beat_samples(videos: &[EfVideo], detector: &DetectorConfig) -> Result<Vec<EfSample>> {
    let mut out = Vec::new();
    for (i, v) in videos.iter().enumerate() {
        let signal = area_signal(&v.masks, SYNTH_FRAME_RATE)?;
        let extrema = detect_area_extrema(&signal, detector)?;
        for clip in extract_beats(&v.video, &extrema)? {
            out.push(EfSample::new(format!("video_{i:03}"), clip.video, v.ef_true)?);
        }
    }
    Ok(out)
}

/// Band intensities across the measurement line, from the right ventricle to
/// the pericardium, and outside the band segment.
const RV_INTENSITY: f64 = 0.2;
const SEPTUM_INTENSITY: f64 = 0.75;
const CAVITY_INTENSITY: f64 = 0.1;
const WALL_INTENSITY: f64 = 0.7;
const PERICARDIUM_INTENSITY: f64 = 0.45;
const BACKGROUND_INTENSITY: f64 = 0.3;
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvdSceneParams {
    /// `[nx, ny]`
    pub frame_dims: [usize; 2],
    /// Pixel ranges `[lo, hi]`.
    pub ivs_range: [f64; 2],
    pub lvid_range: [f64; 2],
    pub lvpw_range: [f64; 2],
    /// Rotation drawn from `[-max, max]`, radians.
    pub max_rotation: f64,
    /// Cavity centre offset from the frame centre drawn from `[-max, max]` per axis, pixels.
    pub max_offset: f64,
    /// Half length of the bands along their own direction, pixels.
    pub band_half_length: f64,
    pub mm_per_pixel: f64,
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl Default for LvdSceneParams {
    fn default() -> Self {
        LvdSceneParams {
            frame_dims: [64, 64],
            ivs_range: [6.0, 12.0],
            lvid_range: [16.0, 28.0],
            lvpw_range: [6.0, 12.0],
            max_rotation: 30f64.to_radians(),
            max_offset: 4.0,
            band_half_length: 20.0,
            mm_per_pixel: 1.0,
            noise_amplitude: 0.05,
            seed: 42,
        }
    }
}

impl LvdSceneParams {
    fn validate(&self) -> Result<()> {
        for (name, r) in [("ivs", self.ivs_range), ("lvid", self.lvid_range), ("lvpw", self.lvpw_range)] {
            check_range(name, r)?;
            if r[0] <= 0.0 {
                return Err(Error::config(format!("{name} range {r:?} must be positive")));
            }
        }
        if self.frame_dims.contains(&0) {
            return Err(Error::config("frame dims must be positive"));
        }
        if !(self.max_rotation >= 0.0 && self.max_offset >= 0.0 && self.band_half_length > 0.0) {
            return Err(Error::config("rotation and offset bounds must be ≥ 0, band length > 0"));
        }
        if self.noise_amplitude < 0.0 {
            return Err(Error::config("noise must be ≥ 0"));
        }
        Calibration::new(self.mm_per_pixel).map(|_| ())
    }
}

/// One concrete banded scene, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LvdScene {
    /// Cavity centre.
    pub center: Point,
    /// Rotation of the measurement line from the +y axis, radians.
    pub angle: f64,
    pub ivs: f64,
    pub lvid: f64,
    pub lvpw: f64,
}

impl LvdScene {
    pub fn sample(params: &LvdSceneParams, rng: &mut ChaCha8Rng) -> Self {
        let [nx, ny] = params.frame_dims;
        let off = [-params.max_offset, params.max_offset];
        let rot = [-params.max_rotation, params.max_rotation];
        LvdScene {
            ivs: sample(rng, params.ivs_range),
            lvid: sample(rng, params.lvid_range),
            lvpw: sample(rng, params.lvpw_range),
            angle: sample(rng, rot),
            center: Point::new(
                (nx - 1) as f64 / 2.0 + sample(rng, off),
                (ny - 1) as f64 / 2.0 + sample(rng, off),
            ),
        }
    }

    /// Unit vector along the measurement line (septum → posterior wall).
    fn normal(&self) -> (f64, f64) {
        (-self.angle.sin(), self.angle.cos())
    }

    /// Band boundaries as offsets along the measurement line from the centre.
    fn boundaries(&self) -> [f64; 4] {
        let half = self.lvid / 2.0;
        [-half - self.ivs, -half, half, half + self.lvpw]
    }

    pub fn keypoints(&self) -> KeypointSet {
        let (nx, ny) = self.normal();
        KeypointSet::new(
            self.boundaries()
                .map(|u| Point::new(self.center.x + u * nx, self.center.y + u * ny)),
        )
    }

    fn intensity(&self, x: f64, y: f64, half_length: f64) -> f64 {
        let (nx, ny) = self.normal();
        let (dx, dy) = (x - self.center.x, y - self.center.y);
        let u = dx * nx + dy * ny;
        let s = dx * ny - dy * nx;
        if s.abs() > half_length {
            return BACKGROUND_INTENSITY;
        }
        let [u1, u2, u3, u4] = self.boundaries();
        if u < u1 {
            RV_INTENSITY
        } else if u < u2 {
            SEPTUM_INTENSITY
        } else if u < u3 {
            CAVITY_INTENSITY
        } else if u < u4 {
            WALL_INTENSITY
        } else {
            PERICARDIUM_INTENSITY
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LvdFrame {
    /// `[nx, ny, 1]`
    pub frame: Volume,
    pub keypoints: KeypointSet,
    pub dims: LvDimensions,
    pub scene: LvdScene,
}

/// Renders `scene` with 4×4 supersampling per pixel; pixel `(x, y)` covers
/// the unit square centred on `(x, y)`. Noise is drawn from `noise_seed`.
pub fn render_lvd_scene(scene: &LvdScene, params: &LvdSceneParams, noise_seed: u64) -> Result<LvdFrame> {
    params.validate()?;
    let [nx, ny] = params.frame_dims;
    let keypoints = scene.keypoints();
    if !keypoints.in_bounds(nx, ny) {
        return Err(Error::config(format!(
            "bands of scene {scene:?} extend past the {nx}×{ny} frame"
        )));
    }
    let mut rng = seeded(noise_seed);
    let step = 1.0 / SUPERSAMPLE as f64;
    let mut data = Vec::with_capacity(nx * ny);
    for x in 0..nx {
        for y in 0..ny {
            let mut acc = 0.0;
            for i in 0..SUPERSAMPLE {
                for j in 0..SUPERSAMPLE {
                    let sx = x as f64 - 0.5 + (i as f64 + 0.5) * step;
                    let sy = y as f64 - 0.5 + (j as f64 + 0.5) * step;
                    acc += scene.intensity(sx, sy, params.band_half_length);
                }
            }
            data.push(acc / (SUPERSAMPLE * SUPERSAMPLE) as f64 + noise(&mut rng, params.noise_amplitude));
        }
    }
    let dims = dimensions_from_keypoints(&keypoints, &Calibration::new(params.mm_per_pixel)?)?;
    Ok(LvdFrame {
        frame: Volume::new([nx, ny, 1], data)?,
        keypoints,
        dims,
        scene: *scene,
    })
}

/// Samples a scene from `params.seed` and renders it.
pub fn gen_lvd_frame(params: &LvdSceneParams) -> Result<LvdFrame> {
    params.validate()?;
    let mut rng = seeded(params.seed);
    let scene = LvdScene::sample(params, &mut rng);
    render_lvd_scene(&scene, params, rng.gen())
}

/// `n` frames whose per-frame seeds are drawn in order from `params.seed`.
pub fn gen_lvd_dataset(params: &LvdSceneParams, n: usize) -> Result<Vec<LvdFrame>> {
    params.validate()?;
    let mut rng = seeded(params.seed);
    let seeds: Vec<u64> = (0..n).map(|_| rng.gen()).collect();
    seeds
        .par_iter()
        .map(|&seed| gen_lvd_frame(&LvdSceneParams { seed, ..params.clone() }))
        .collect()
}

/// Wraps generated frames as samples with ids `frame_NNN` in input order.
pub fn lvd_samples(frames: &[LvdFrame], mm_per_pixel: f64) -> Result<Vec<LvdSample>> {
    let cal = Calibration::new(mm_per_pixel)?;
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| LvdSample::new(format!("frame_{i:03}"), f.frame.clone(), f.keypoints, cal))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beats::mask_area;

    #[test]
    fn zero_pulsatility_is_static() {
        let p = EfSceneParams { pulsatility: 0.0, ..Default::default() };
        let v = gen_ef_video(&p).unwrap();
        assert_eq!(v.ef_true, 0.0);
        assert!(v.true_extrema.is_empty());
        assert!(v.pixel_counts.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn doubled_area_ef() {
        let p = EfSceneParams { base_area: 0.15, pulsatility: 0.15, ..Default::default() };
        let v = gen_ef_video(&p).unwrap();
        let want = 100.0 * (1.0 - 0.5f64.powf(1.5));
        assert!((v.ef_true - want).abs() < 1e-12);
        assert!((v.ef_true - 64.64).abs() < 0.01);
    }

    #[test]
    fn ef_area_ratio_inverts() {
        for ef in [0.0, 12.5, 55.0, 80.0] {
            assert!((ef_from_areas(1.0, area_ratio_for_ef(ef)) - ef).abs() < 1e-10);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let p = EfSceneParams::default();
        assert_eq!(gen_ef_video(&p).unwrap(), gen_ef_video(&p).unwrap());
        let q = EfSceneParams { seed: 7, ..p.clone() };
        assert_ne!(gen_ef_video(&p).unwrap().video, gen_ef_video(&q).unwrap().video);
    }

    #[test]
    fn oversized_ellipse_is_rejected() {
        let p = EfSceneParams { base_area: 0.5, pulsatility: 0.4, ..Default::default() };
        assert!(matches!(gen_ef_video(&p), Err(Error::Config(_))));
        let p = EfSceneParams { period_frames: 5.0, ..Default::default() };
        assert!(gen_ef_video(&p).is_err());
    }

    #[test]
    fn emitted_counts_match_masks() {
        let v = gen_ef_video(&EfSceneParams::default()).unwrap();
        let mv = v.masks.to_volume();
        for t in 0..v.masks.nt() {
            assert_eq!(mask_area(&mv.frame(t)).unwrap(), v.pixel_counts[t]);
        }
        let s = area_signal(&v.masks, SYNTH_FRAME_RATE).unwrap();
        assert_eq!(s.values, v.pixel_counts);
    }

    #[test]
    fn pixel_counts_track_analytic_area() {
        let p = EfSceneParams { frame_dims: [64, 64], ..Default::default() };
        let v = gen_ef_video(&p).unwrap();
        for (t, &c) in v.pixel_counts.iter().enumerate() {
            let a = p.area_at(t as f64);
            assert!((c as f64 - a).abs() < 0.05 * a, "frame {t}: {c} vs {a}");
        }
    }

    #[test]
    fn analytic_extrema_layout() {
        let p = EfSceneParams { period_frames: 41.0, n_beats: 3, ..Default::default() };
        let v = gen_ef_video(&p).unwrap();
        assert_eq!(v.video.nt(), 124);
        assert_eq!(v.true_extrema.maxima, vec![0, 41, 82, 123]);
        assert_eq!(v.true_extrema.minima, vec![20, 61, 102]);
    }

    #[test]
    fn dataset_is_deterministic_and_in_range() {
        let p = EfDatasetParams { n_videos: 12, ..Default::default() };
        let a = gen_ef_dataset(&p).unwrap();
        assert_eq!(a, gen_ef_dataset(&p).unwrap());
        for v in &a {
            assert!((20.0..=75.0).contains(&v.ef_true));
            assert!((30.0..=50.0).contains(&v.params.period_frames));
        }
        let samples = ef_beat_samples(&a, &DetectorConfig::for_frame_rate(SYNTH_FRAME_RATE)).unwrap();
        assert_eq!(samples.len(), 12 * 2);
    }

    #[test]
    fn axis_aligned_lvd_scene() {
        let p = LvdSceneParams::default();
        let scene = LvdScene { center: Point::new(31.5, 31.5), angle: 0.0, ivs: 10.0, lvid: 30.0, lvpw: 10.0 };
        let f = render_lvd_scene(&scene, &p, 1).unwrap();
        assert_eq!(f.dims, LvDimensions::new(10.0, 30.0, 10.0));
        let xs: Vec<f64> = f.keypoints.points.iter().map(|q| q.x).collect();
        assert!(xs.iter().all(|&x| x == 31.5));
        let ys: Vec<f64> = f.keypoints.points.iter().map(|q| q.y).collect();
        assert_eq!(ys, vec![6.5, 16.5, 46.5, 56.5]);

        let rotated = LvdScene { angle: 45f64.to_radians(), lvid: 20.0, ..scene };
        let g = render_lvd_scene(&rotated, &p, 1).unwrap();
        let h = render_lvd_scene(&LvdScene { angle: 0.0, ..rotated }, &p, 1).unwrap();
        for (a, b) in g.dims.to_array().iter().zip(h.dims.to_array()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn out_of_frame_bands_rejected() {
        let p = LvdSceneParams::default();
        let scene = LvdScene { center: Point::new(31.5, 31.5), angle: 0.0, ivs: 12.0, lvid: 40.0, lvpw: 12.0 };
        assert!(matches!(render_lvd_scene(&scene, &p, 0), Err(Error::Config(_))));
        let bad = LvdSceneParams { ivs_range: [9.0, 6.0], ..p };
        assert!(gen_lvd_frame(&bad).is_err());
    }

    #[test]
    fn mm_scaling_applies_to_dims() {
        let p = LvdSceneParams { mm_per_pixel: 0.5, ..Default::default() };
        let f = gen_lvd_frame(&p).unwrap();
        assert!((f.dims.ivs - 0.5 * f.scene.ivs).abs() < 1e-9);
        assert!((f.dims.lvid - 0.5 * f.scene.lvid).abs() < 1e-9);
    }

    #[test]
    fn cavity_is_dark_and_walls_bright() {
        let p = LvdSceneParams { noise_amplitude: 0.0, ..Default::default() };
        let scene = LvdScene { center: Point::new(31.5, 31.5), angle: 0.0, ivs: 10.0, lvid: 30.0, lvpw: 10.0 };
        let f = render_lvd_scene(&scene, &p, 0).unwrap();
        let close = |x: usize, y: usize, v: f64| (f.frame.get(x, y, 0) - v).abs() < 1e-12;
        assert!(close(31, 32, CAVITY_INTENSITY));
        assert!(close(31, 10, SEPTUM_INTENSITY));
        assert!(close(31, 52, WALL_INTENSITY));
        assert!(close(2, 32, BACKGROUND_INTENSITY));
    }
}
