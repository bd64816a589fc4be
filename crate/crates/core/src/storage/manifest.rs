//! Run manifests: the JSON record tying a set of ACTV files to the network,
//! augmentation and filtering that produced them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_activations, StorageError};
use crate::activations::LayerActivations;
use crate::augment::AugmentConfig;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRef {
    /// Path of the network spec JSON, relative to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Seed of the generated weights, for desk-scale networks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationEntry {
    pub layer: String,
    /// ACTV file, relative to the manifest.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub network: NetworkRef,
    pub augmentation: AugmentConfig,
    /// Requested cluster size, including the seed image.
    pub cluster_size: usize,
    pub confidence_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_index: Option<usize>,
    /// Samples dropped by the confidence filter.
    #[serde(default)]
    pub excluded_samples: Vec<usize>,
    /// Input preprocessing applied before the network, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocessing: Option<String>,
    pub activations: Vec<ActivationEntry>,
}

impl RunManifest {
    pub fn from_json(text: &str) -> Result<Self, StorageError> {
        let m: Self = serde_json::from_str(text).map_err(|e| StorageError::Json(e.to_string()))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(StorageError::Manifest(format!(
                "unsupported manifest version {}",
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn read(path: &Path) -> Result<Self, StorageError> {
        let text = fs::read_to_string(path).map_err(|e| StorageError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: &Path) -> Result<(), StorageError> {
        fs::write(path, self.to_json()).map_err(|e| StorageError::io(path, e))
    }

    pub fn resolve(&self, manifest_path: &Path, entry: &ActivationEntry) -> PathBuf {
        manifest_path.parent().unwrap_or(Path::new(".")).join(&entry.file)
    }

    /// Reads every listed file, checking each carries the layer name the
    /// manifest gives it. `filter`, when non-empty, restricts to those layers.
    pub fn load_activations(
        &self,
        manifest_path: &Path,
        filter: &[String],
    ) -> Result<Vec<LayerActivations>, StorageError> {
        for wanted in filter {
            if !self.activations.iter().any(|e| &e.layer == wanted) {
                return Err(StorageError::Manifest(format!("no layer '{wanted}' in manifest")));
            }
        }
        self.activations
            .iter()
            .filter(|e| filter.is_empty() || filter.contains(&e.layer))
            .map(|entry| {
                let acts = read_activations(&self.resolve(manifest_path, entry))?;
                if acts.layer_name() != entry.layer {
                    return Err(StorageError::Manifest(format!(
                        "file {} holds layer '{}', manifest says '{}'",
                        entry.file,
                        acts.layer_name(),
                        entry.layer
                    )));
                }
                Ok(acts)
            })
            .collect()
    }
}
