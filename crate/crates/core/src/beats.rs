//! Beat extraction from left-ventricle segmentation masks.
//!
//! The mask area per frame forms a signal whose maxima mark end-diastole and
//! whose minima mark end-systole. Each diastole → systole span becomes one
//! [`BeatClip`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Volume, VideoTensor};

/// Per-frame binary masks, `(x, y, t)` with `t` fastest like [`Volume`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSequence {
    dims: [usize; 3],
    data: Vec<u8>,
}

impl MaskSequence {
    pub fn new(dims: [usize; 3], data: Vec<u8>) -> Result<Self> {
        if dims.contains(&0) || data.len() != dims.iter().product::<usize>() {
            return Err(Error::shape(format!(
                "mask dims {dims:?} with {} values",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::validation(format!("mask value {v} is not 0 or 1")));
        }
        Ok(MaskSequence { dims, data })
    }

    /// Accepts a float volume whose values are exactly 0 or 1.
    pub fn from_volume(v: &Volume) -> Result<Self> {
        let data = v
            .data()
            .iter()
            .map(|&x| match x {
                0.0 => Ok(0u8),
                1.0 => Ok(1u8),
                other => Err(Error::validation(format!(
                    "mask value {other} is not exactly 0 or 1"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MaskSequence { dims: v.dims(), data })
    }

    pub fn to_volume(&self) -> Volume {
        Volume::from_parts(self.dims, self.data.iter().map(|&b| b as f64).collect())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn nt(&self) -> usize {
        self.dims[2]
    }

    pub fn frame(&self, t: usize) -> Vec<u8> {
        self.data.iter().skip(t).step_by(self.dims[2]).copied().collect()
    }
}

/// Number of 1-pixels in a single binary frame.
pub fn mask_area(frame: &[f64]) -> Result<u64> {
    frame.iter().try_fold(0u64, |acc, &v| match v {
        0.0 => Ok(acc),
        1.0 => Ok(acc + 1),
        other => Err(Error::validation(format!(
            "mask value {other} is not exactly 0 or 1"
        ))),
    })
}

/// Left-ventricle area in pixels per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaSignal {
    pub values: Vec<u64>,
    pub frame_rate: f64,
}

pub fn area_signal(masks: &MaskSequence, frame_rate: f64) -> Result<AreaSignal> {
    if !(frame_rate > 0.0 && frame_rate.is_finite()) {
        return Err(Error::config(format!("frame rate must be positive, got {frame_rate}")));
    }
    let nt = masks.nt();
    let mut values = vec![0u64; nt];
    for series in masks.data.chunks_exact(nt) {
        for (v, &m) in values.iter_mut().zip(series) {
            *v += m as u64;
        }
    }
    Ok(AreaSignal { values, frame_rate })
}

/// Diastole (maxima) and systole (minima) frame indices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExtremaList {
    pub maxima: Vec<usize>,
    pub minima: Vec<usize>,
}

impl ExtremaList {
    pub fn is_empty(&self) -> bool {
        self.maxima.is_empty() && self.minima.is_empty()
    }

    /// Both lists merged in frame order, tagged `true` for maxima.
    pub fn merged(&self) -> Vec<(usize, bool)> {
        let mut all: Vec<(usize, bool)> = self
            .maxima
            .iter()
            .map(|&i| (i, true))
            .chain(self.minima.iter().map(|&i| (i, false)))
            .collect();
        all.sort_unstable();
        all
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Minimum distance in frames between two extrema of the same kind.
    pub min_separation: usize,
    /// Minimum prominence as a fraction of the signal's max − min range.
    pub min_prominence: f64,
    /// Centered 5-frame moving average before detection.
    pub smooth: bool,
    /// Move each interior extremum to the vertex of a least-squares parabola
    /// fitted to the raw signal around it.
    #[serde(default)]
    pub refine: bool,
}

/// Nominal beat length in seconds used to derive the default separation.
pub const NOMINAL_BEAT_SECONDS: f64 = 0.8;

impl DetectorConfig {
    /// Separation of roughly half a nominal beat at `frame_rate`, 10% prominence.
    pub fn for_frame_rate(frame_rate: f64) -> Self {
        DetectorConfig {
            min_separation: ((0.4 * frame_rate * NOMINAL_BEAT_SECONDS).round() as usize).max(1),
            min_prominence: 0.1,
            smooth: true,
            refine: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.min_separation == 0 {
            return Err(Error::config("min separation must be at least 1 frame"));
        }
        if !(0.0..=1.0).contains(&self.min_prominence) {
            return Err(Error::config(format!(
                "min prominence must lie in [0, 1], got {}",
                self.min_prominence
            )));
        }
        Ok(())
    }
}

fn moving_average5(x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(2);
            let hi = (i + 2).min(x.len() - 1);
            x[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Local maxima of `x`, plateaus included. An interior plateau reports its
/// middle (rounded down); a plateau touching either end reports that end.
fn local_maxima(x: &[f64]) -> Vec<(usize, usize, usize)> {
    let n = x.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[j + 1] == x[i] {
            j += 1;
        }
        let left_ok = i == 0 || x[i - 1] < x[i];
        let right_ok = j == n - 1 || x[j + 1] < x[i];
        if left_ok && right_ok && !(i == 0 && j == n - 1) {
            let pos = if i == 0 {
                0
            } else if j == n - 1 {
                n - 1
            } else {
                (i + j) / 2
            };
            out.push((pos, i, j));
        }
        i = j + 1;
    }
    out
}

/// Topographic prominence of the plateau `[i, j]`: its height above the
/// highest col separating it from strictly higher ground. Each side is scanned
/// until a strictly higher sample; a side that runs off the signal end without
/// finding one leads nowhere higher and is ignored. The highest peak has no
/// col and is measured against the signal minimum.
fn prominence(x: &[f64], i: usize, j: usize) -> f64 {
    let v = x[i];
    let side = |it: &mut dyn Iterator<Item = &f64>| {
        let mut lowest = v;
        for &s in it {
            if s > v {
                return Some(lowest);
            }
            lowest = lowest.min(s);
        }
        None
    };
    let left = side(&mut x[..i].iter().rev());
    let right = side(&mut x[j + 1..].iter());
    let col = match (left, right) {
        (Some(l), Some(r)) => l.max(r),
        (Some(c), None) | (None, Some(c)) => c,
        (None, None) => x.iter().copied().fold(v, f64::min),
    };
    v - col
}

/// Peaks of `x` passing the prominence threshold, thinned so that no two
/// kept peaks are closer than `min_sep` (more prominent peaks win).
fn filtered_peaks(x: &[f64], threshold: f64, min_sep: usize) -> Vec<usize> {
    let mut cands: Vec<(usize, f64)> = local_maxima(x)
        .into_iter()
        .map(|(pos, i, j)| (pos, prominence(x, i, j)))
        .filter(|&(_, p)| p >= threshold)
        .collect();
    cands.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(x[b.0].total_cmp(&x[a.0]))
            .then(a.0.cmp(&b.0))
    });
    let mut kept: Vec<usize> = Vec::new();
    for (pos, _) in cands {
        if kept.iter().all(|&k| k.abs_diff(pos) >= min_sep) {
            kept.push(pos);
        }
    }
    kept.sort_unstable();
    kept
}

/// Finds diastole/systole frames in an area signal.
///
/// Maxima and minima pass a prominence filter and a same-kind separation
/// filter independently; the merged sequence is then forced to alternate by
/// dropping the weaker of two adjacent same-kind extrema (lower maximum,
/// higher minimum, earlier frame on ties). A constant signal has no extrema.
pub fn detect_extrema(signal: &[f64], config: &DetectorConfig) -> Result<ExtremaList> {
    config.validate()?;
    if signal.len() < 3 {
        return Err(Error::shape(format!(
            "extremum detection needs at least 3 frames, got {}",
            signal.len()
        )));
    }
    if let Some(v) = signal.iter().find(|v| !v.is_finite()) {
        return Err(Error::validation(format!("non-finite signal value {v}")));
    }
    let x = if config.smooth {
        moving_average5(signal)
    } else {
        signal.to_vec()
    };
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    if range == 0.0 {
        return Ok(ExtremaList::default());
    }
    let threshold = config.min_prominence * range;
    let maxima = filtered_peaks(&x, threshold, config.min_separation);
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let minima = filtered_peaks(&neg, threshold, config.min_separation);

    let merged = ExtremaList { maxima, minima }.merged();
    let mut alternating: Vec<(usize, bool)> = Vec::with_capacity(merged.len());
    for (pos, is_max) in merged {
        match alternating.last_mut() {
            Some(last) if last.1 == is_max => {
                let stronger = if is_max { x[pos] > x[last.0] } else { x[pos] < x[last.0] };
                if stronger {
                    *last = (pos, is_max);
                }
            }
            _ => alternating.push((pos, is_max)),
        }
    }
    if config.refine {
        if let Some(refined) = refine_positions(signal, &alternating, config.min_separation) {
            alternating = refined;
        }
    }
    Ok(ExtremaList {
        maxima: alternating.iter().filter(|e| e.1).map(|e| e.0).collect(),
        minima: alternating.iter().filter(|e| !e.1).map(|e| e.0).collect(),
    })
}

/// Vertex of the least-squares parabola through `x[c - h..=c + h]`, rounded
/// (halves down) and clamped to the window. `None` for a flat fit.
fn parabola_vertex(x: &[f64], c: usize, h: usize) -> Option<usize> {
    // Normal equations in u = t - c; odd moments vanish on a symmetric window.
    let (mut s2, mut s4, mut r0, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, &v) in x[c - h..=c + h].iter().enumerate() {
        let u = k as f64 - h as f64;
        s2 += u * u;
        s4 += u * u * u * u;
        r0 += v;
        r1 += u * v;
        r2 += u * u * v;
    }
    let s0 = (2 * h + 1) as f64;
    let b = r1 / s2;
    let a2 = (s0 * r2 - s2 * r0) / (s0 * s4 - s2 * s2);
    if a2 == 0.0 || !a2.is_finite() {
        return None;
    }
    let v = (-b / (2.0 * a2)).clamp(-(h as f64), h as f64);
    Some((c as f64 + v - 0.5).ceil() as usize)
}

/// Parabola refinement of every extremum with room for a symmetric window of
/// at least two frames on each side. The half-width stays below half the gap
/// to the neighbouring extrema, so order is preserved. Gives up (returns
/// `None`) if the result would break the same-kind separation.
fn refine_positions(x: &[f64], extrema: &[(usize, bool)], min_sep: usize) -> Option<Vec<(usize, bool)>> {
    let n = x.len();
    let refined: Vec<(usize, bool)> = extrema
        .iter()
        .enumerate()
        .map(|(i, &(c, is_max))| {
            let gap = [i.checked_sub(1).map(|p| c - extrema[p].0), extrema.get(i + 1).map(|e| e.0 - c)]
                .into_iter()
                .flatten()
                .min();
            let h = gap.map_or(0, |g| (g - 1) / 2).min(c).min(n - 1 - c);
            let pos = if h >= 2 { parabola_vertex(x, c, h).unwrap_or(c) } else { c };
            (pos, is_max)
        })
        .collect();
    let spaced = |kind: bool| {
        let same: Vec<usize> = refined.iter().filter(|e| e.1 == kind).map(|e| e.0).collect();
        same.windows(2).all(|w| w[1] >= w[0] + min_sep)
    };
    (spaced(true) && spaced(false)).then_some(refined)
}

/// [`detect_extrema`] on an [`AreaSignal`].
pub fn detect_area_extrema(signal: &AreaSignal, config: &DetectorConfig) -> Result<ExtremaList> {
    let values: Vec<f64> = signal.values.iter().map(|&v| v as f64).collect();
    detect_extrema(&values, config)
}

/// One diastole → systole span, endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatClip {
    pub start_frame: usize,
    pub end_frame: usize,
    pub video: VideoTensor,
}

/// Cuts one clip for every maximum that is directly followed by a minimum in
/// the merged extrema sequence. Maxima without a following minimum are
/// dropped.
pub fn extract_beats(video: &VideoTensor, extrema: &ExtremaList) -> Result<Vec<BeatClip>> {
    let nt = video.nt();
    if let Some(&bad) = extrema
        .maxima
        .iter()
        .chain(&extrema.minima)
        .find(|&&i| i >= nt)
    {
        return Err(Error::validation(format!(
            "extremum at frame {bad} outside video of {nt} frames"
        )));
    }
    let merged = extrema.merged();
    let mut clips = Vec::new();
    for pair in merged.windows(2) {
        if let [(start, true), (end, false)] = *pair {
            if start < end {
                clips.push(BeatClip {
                    start_frame: start,
                    end_frame: end,
                    video: video.slice_frames(start, end)?,
                });
            }
        }
    }
    Ok(clips)
}
