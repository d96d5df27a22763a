//! Checkpoint directories: the resolved config, a manifest of named tensors,
//! and one tensor file per learnable (plus the solved ridge maps).
//!
//! Frozen state (broad spaces, initial draws) is not stored; it is fully
//! determined by the config seed, so loading rebuilds the model from the
//! config and then overwrites the learnable tensors. Tensor files hold f32,
//! so callers quantize the model (`Model::quantize_to_f32`) before saving if
//! a reload must reproduce the in-memory model bit for bit.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::config::RunConfig;
use crate::io::tensor;
use crate::model::Model;

const MANIFEST: &str = "manifest.txt";
const CONFIG: &str = "config.txt";

fn tensor_file_name(name: &str) -> String {
    let mut stem: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    stem.push_str(".bmt");
    stem
}

/// Writes config, manifest, and every named tensor under `dir`.
pub fn save_checkpoint(dir: &Path, model: &Model, config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    tensor::write_atomic(&dir.join(CONFIG), config.to_text().as_bytes())?;
    let mut manifest = String::new();
    let params = model.params();
    let ridge = model.ridge_tensors();
    for t in params.iter().chain(ridge.iter()) {
        let file = tensor_file_name(&t.name);
        let data: Vec<f32> = t.data.iter().map(|&v| v as f32).collect();
        tensor::write_tensor(&dir.join(&file), &t.shape, &data)?;
        manifest.push_str(&format!("{} = {}\n", t.name, file));
    }
    tensor::write_atomic(&dir.join(MANIFEST), manifest.as_bytes())?;
    Ok(())
}

/// Rebuilds the model from the stored config and loads every tensor named in
/// the manifest. Every learnable tensor must be present with its exact shape.
pub fn load_checkpoint(dir: &Path) -> Result<(RunConfig, Model)> {
    let config = RunConfig::from_file(&dir.join(CONFIG))?;
    let mut model = Model::init(config.model_config())?;
    let manifest_text = std::fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| Error::Config(format!("cannot read checkpoint manifest: {e}")))?;
    let mut entries = Vec::new();
    for line in manifest_text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (name, file) = line
            .split_once('=')
            .ok_or_else(|| Error::Corrupt(format!("manifest line '{line}'")))?;
        entries.push((name.trim().to_string(), file.trim().to_string()));
    }
    let mut loaded = std::collections::HashSet::new();
    for (name, file) in &entries {
        let (dims, data) = tensor::read_tensor(&dir.join(file))?;
        if let Some(short) = name.strip_prefix("ridge.") {
            let modality = crate::embedding::Modality::from_short(short)?;
            let index = model
                .config()
                .modalities
                .iter()
                .position(|&m| m == modality)
                .ok_or_else(|| {
                    Error::Config(format!("checkpoint has ridge map for unused {modality}"))
                })?;
            if dims.len() != 2 {
                return Err(Error::Corrupt(format!("ridge tensor {name} must be rank 2")));
            }
            let arr = ndarray::Array2::from_shape_vec(
                (dims[0], dims[1]),
                data.into_iter().map(f64::from).collect(),
            )
            .map_err(|e| Error::Corrupt(format!("{name}: {e}")))?;
            model.set_ridge(index, arr)?;
            loaded.insert(name.clone());
            continue;
        }
        let mut tensors = model.params_mut();
        let slot = tensors
            .iter_mut()
            .find(|t| &t.name == name)
            .ok_or_else(|| Error::Config(format!("checkpoint tensor '{name}' does not fit this config")))?;
        if slot.shape != dims {
            return Err(Error::Config(format!(
                "checkpoint tensor '{name}' has shape {dims:?}, model expects {:?}",
                slot.shape
            )));
        }
        for (dst, src) in slot.data.iter_mut().zip(data.iter()) {
            *dst = f64::from(*src);
        }
        loaded.insert(name.clone());
    }
    for t in model.params() {
        if !loaded.contains(&t.name) {
            return Err(Error::Corrupt(format!(
                "checkpoint is missing tensor '{}'",
                t.name
            )));
        }
    }
    Ok((config, model))
}
