//! Reading and writing the on-disk dataset layout: CTR1 volumes plus label
//! CSVs whose paths are relative to the CSV's own directory.

use std::fs;
use std::path::{Path, PathBuf};

use cardio_core::ctr1::{self, DType};
use cardio_core::ef::EfSample;
use cardio_core::lvd::{Calibration, KeypointSet, LvdSample};
use cardio_core::tensor::{Tensor, Volume};
use cardio_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const EF_LABELS: &str = "ef_labels.csv";
pub const LVD_LABELS: &str = "lvd_labels.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfLabelRow {
    pub clip_path: String,
    pub ef_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvdLabelRow {
    pub frame_path: String,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub x3: f64,
    pub y3: f64,
    pub x4: f64,
    pub y4: f64,
    pub mm_per_pixel: f64,
}

impl LvdLabelRow {
    pub fn new(frame_path: String, kp: &KeypointSet, mm_per_pixel: f64) -> Self {
        let [x1, y1, x2, y2, x3, y3, x4, y4] = kp.to_flat();
        LvdLabelRow { frame_path, x1, y1, x2, y2, x3, y3, x4, y4, mm_per_pixel }
    }

    pub fn keypoints(&self) -> Result<KeypointSet> {
        KeypointSet::from_flat(&[self.x1, self.y1, self.x2, self.y2, self.x3, self.y3, self.x4, self.y4])
    }
}

/// Video id of a clip file: the file stem up to its last `_clip_` marker, or
/// the whole stem when there is none. Clips of one video share the id.
pub fn video_id_from_clip(path: &str) -> String {
    let stem = Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match stem.rfind("_clip_") {
        Some(i) => stem[..i].to_string(),
        None => stem,
    }
}

pub fn save_volume(path: &Path, v: &Volume, dtype: DType) -> Result<()> {
    let [nx, ny, nt] = v.dims();
    let t = Tensor::new(vec![nx, ny, nt], v.data().to_vec())?;
    ctr1::save(path, &t, dtype)
}

/// Loads a rank-3 `[nx, ny, nt]` tensor, or a rank-2 frame as `nt = 1`.
pub fn load_volume(path: &Path) -> Result<(Volume, DType)> {
    let (t, dtype) = ctr1::load(path)?;
    let dims = match *t.shape() {
        [nx, ny, nt] => [nx, ny, nt],
        [nx, ny] => [nx, ny, 1],
        ref s => return Err(Error::format(path, format!("expected a rank-2 or rank-3 tensor, got shape {s:?}"))),
    };
    Ok((Volume::new(dims, t.into_data())?, dtype))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.is_file() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::validation(format!("{}: row {}: {e}", path.display(), i + 1))))
        .collect()
}

fn resolve(csv_path: &Path, entry: &str) -> PathBuf {
    csv_path.parent().unwrap_or(Path::new(".")).join(entry)
}

/// Clips listed in an EF label CSV, in file order.
pub fn load_ef_samples(labels: &Path) -> Result<Vec<EfSample>> {
    let rows: Vec<EfLabelRow> = read_csv(labels)?;
    if rows.is_empty() {
        return Err(Error::validation(format!("{}: no labelled clips", labels.display())));
    }
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            let (clip, _) = load_volume(&resolve(labels, &row.clip_path))?;
            EfSample::new(video_id_from_clip(&row.clip_path), clip, row.ef_percent).map_err(|e| {
                Error::validation(format!("{}: row {}: field ef_percent: {e}", labels.display(), i + 1))
            })
        })
        .collect()
}

/// Frames listed in an LVD label CSV; the sample id is the frame path.
pub fn load_lvd_samples(labels: &Path) -> Result<Vec<LvdSample>> {
    let rows: Vec<LvdLabelRow> = read_csv(labels)?;
    if rows.is_empty() {
        return Err(Error::validation(format!("{}: no labelled frames", labels.display())));
    }
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            let field = |name: &str, e: Error| {
                Error::validation(format!("{}: row {}: field {name}: {e}", labels.display(), i + 1))
            };
            let (frame, _) = load_volume(&resolve(labels, &row.frame_path))?;
            let cal = Calibration::new(row.mm_per_pixel).map_err(|e| field("mm_per_pixel", e))?;
            LvdSample::new(row.frame_path.clone(), frame, row.keypoints()?, cal).map_err(|e| field("frame_path", e))
        })
        .collect()
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
