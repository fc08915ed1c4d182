//! Model checkpoints: a parameter container plus a JSON manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CascadeModel, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::checkpoint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub model: ModelConfig,
    /// SHA-256 of the canonical JSON of `model`.
    pub config_hash: String,
    /// Parameter container, relative to the manifest's directory.
    pub params_file: String,
    pub parameter_count: usize,
    pub seed: u64,
    /// Training steps taken so far, summed over stages.
    pub step: u64,
    /// Calibrated per-level thresholds, coarse first.
    #[serde(default)]
    pub thresholds: Vec<f64>,
    /// Threshold used to binarise the final mask for IoU.
    #[serde(default)]
    pub miou_threshold: Option<f64>,
    /// Non-fatal problems met while producing the model.
    #[serde(default)]
    pub warnings: Vec<String>,
}

pub fn config_hash(config: &ModelConfig) -> String {
    let json = serde_json::to_string(config).expect("model config serialises");
    hex::encode(Sha256::digest(json.as_bytes()))
}

impl ModelManifest {
    pub fn new(model: &CascadeModel<f32>, seed: u64) -> Self {
        Self {
            model: model.config().clone(),
            config_hash: config_hash(model.config()),
            params_file: String::new(),
            parameter_count: model.count_parameters(),
            seed,
            step: 0,
            thresholds: Vec::new(),
            miou_threshold: None,
            warnings: Vec::new(),
        }
    }

    /// Threshold for the final mask: the explicit IoU threshold, else 0.5.
    pub fn decision_threshold(&self) -> f64 {
        self.miou_threshold.unwrap_or(0.5)
    }
}

/// Write `<manifest_path>` and its sibling `.ckpt` parameter file.
pub fn save_model(
    manifest_path: &Path,
    model: &CascadeModel<f32>,
    manifest: &ModelManifest,
) -> Result<ModelManifest> {
    let ckpt = manifest_path.with_extension("ckpt");
    let file_name = ckpt
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Argument(format!("bad manifest path {}", manifest_path.display())))?
        .to_string();
    checkpoint::save(&ckpt, &model.named_params())?;
    let mut manifest = manifest.clone();
    manifest.model = model.config().clone();
    manifest.config_hash = config_hash(model.config());
    manifest.parameter_count = model.count_parameters();
    manifest.params_file = file_name;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(manifest_path, e))?;
    fs::write(manifest_path, json).map_err(|e| Error::io(manifest_path, e))?;
    Ok(manifest)
}

pub fn load_model(manifest_path: &Path) -> Result<(CascadeModel<f32>, ModelManifest)> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).map_err(|e| Error::json(manifest_path, e))?;
    if config_hash(&manifest.model) != manifest.config_hash {
        return Err(Error::Checkpoint(format!(
            "{}: config hash does not match the stored model config",
            manifest_path.display()
        )));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let entries = checkpoint::load(&dir.join(&manifest.params_file))?;
    let expected: Vec<String> = (0..manifest.model.levels)
        .flat_map(|l| manifest.model.level_names(l))
        .collect();
    let names: Vec<&String> = entries.iter().map(|(n, _)| n).collect();
    if names.len() != expected.len() || names.iter().zip(&expected).any(|(a, b)| *a != b) {
        return Err(Error::Checkpoint(
            "parameter names do not match the model configuration".into(),
        ));
    }
    let params = entries.into_iter().map(|(_, t)| t).collect();
    let model = CascadeModel::from_params(manifest.model.clone(), params)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip_and_tamper_detection() {
        let cfg = ModelConfig {
            levels: 2,
            channels: 4,
            resblocks: 1,
            resolution: 16,
            ..ModelConfig::default()
        };
        let model = CascadeModel::<f32>::new(cfg, 3).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("model.json");
        let mut m = ModelManifest::new(&model, 3);
        m.thresholds = vec![0.2, 0.4];
        let saved = save_model(&path, &model, &m).unwrap();
        let (back, manifest) = load_model(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(manifest, saved);

        let mut text = fs::read_to_string(&path).unwrap();
        text = text.replace("\"channels\": 4", "\"channels\": 5");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Checkpoint(_))));
    }
}
