//! Model checkpoints: a directory with `manifest.json` (architecture and
//! settings) and `params.ctr` (one f64 `CTR1` record per parameter tensor, in
//! model order).

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::ctr1::{self, DType};
use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.ctr";

pub fn save<M: Serialize>(dir: impl AsRef<Path>, manifest: &M, params: &[&Param]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::format(&path, e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    let tensors: Vec<Tensor> = params
        .iter()
        .map(|p| Tensor::new(p.shape.clone(), p.value.clone()))
        .collect::<Result<_>>()?;
    ctr1::save_all(dir.join(PARAMS_FILE), &tensors, DType::F64)
}

pub fn load_manifest<M: DeserializeOwned>(dir: impl AsRef<Path>) -> Result<M> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

/// Overwrites `params` with the stored tensors; shapes must match exactly.
pub fn load_params(dir: impl AsRef<Path>, params: Vec<&mut Param>) -> Result<()> {
    let path = dir.as_ref().join(PARAMS_FILE);
    let stored = ctr1::read_all(&path)?;
    if stored.len() != params.len() {
        return Err(Error::format(
            &path,
            format!("{} tensors stored, model has {}", stored.len(), params.len()),
        ));
    }
    for (i, (p, (t, _))) in params.into_iter().zip(stored).enumerate() {
        if t.shape() != p.shape.as_slice() {
            return Err(Error::format(
                &path,
                format!("tensor {i} has shape {:?}, model expects {:?}", t.shape(), p.shape),
            ));
        }
        p.value = t.into_data();
    }
    Ok(())
}
