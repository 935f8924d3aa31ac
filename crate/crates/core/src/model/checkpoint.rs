//! JSON checkpoints with a CRC32 over the parameter payload.

use std::collections::BTreeMap;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{HistnModel, ModelConfig, ModelError, Result};
use crate::files::write_atomic;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format_version: u32,
    config: ModelConfig,
    params: BTreeMap<String, ParamRecord>,
    checksum: u32,
}

/// CRC32 of the compact JSON encoding of the sorted parameter map.
pub(crate) fn params_checksum(params: &BTreeMap<String, ParamRecord>) -> Result<u32> {
    let canonical = serde_json::to_vec(params)
        .map_err(|e| ModelError::Checkpoint(format!("cannot encode parameters: {e}")))?;
    Ok(crc32fast::hash(&canonical))
}

impl HistnModel {
    pub(crate) fn param_records(&self) -> BTreeMap<String, ParamRecord> {
        self.params
            .iter()
            .map(|(name, p)| {
                (
                    name.clone(),
                    ParamRecord {
                        shape: p.tensor.shape().to_vec(),
                        values: p.tensor.values().to_vec(),
                    },
                )
            })
            .collect()
    }

    pub fn to_checkpoint_json(&self) -> Result<String> {
        let params = self.param_records();
        let file = CheckpointFile {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            checksum: params_checksum(&params)?,
            params,
        };
        serde_json::to_string(&file)
            .map_err(|e| ModelError::Checkpoint(format!("cannot encode checkpoint: {e}")))
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| ModelError::Checkpoint(format!("not valid JSON: {e}")))?;
        match raw.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
            Some(v) => {
                return Err(ModelError::Checkpoint(format!(
                    "unsupported format version {v}, expected {CHECKPOINT_VERSION}"
                )))
            }
            None => return Err(ModelError::Checkpoint("missing format_version".into())),
        }
        let file: CheckpointFile = serde_json::from_value(raw)
            .map_err(|e| ModelError::Checkpoint(format!("malformed checkpoint: {e}")))?;
        let actual = params_checksum(&file.params)?;
        if actual != file.checksum {
            return Err(ModelError::Checkpoint(format!(
                "checksum mismatch: stored {}, computed {actual}",
                file.checksum
            )));
        }
        let mut values = IndexMap::new();
        let expected = HistnModel::shapes_for(&file.config);
        for (name, rec) in file.params {
            match expected.get(&name) {
                Some(shape) if *shape != rec.shape => {
                    return Err(ModelError::Checkpoint(format!(
                        "parameter {name} has shape {:?} but the configuration expects {shape:?}",
                        rec.shape
                    )))
                }
                _ => {}
            }
            values.insert(name, rec.values);
        }
        HistnModel::from_values(file.config, values)
            .map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    /// Errors unless `other` describes the same architecture as this model.
    pub fn check_compatible(&self, other: &ModelConfig) -> Result<()> {
        if HistnModel::shapes_for(other) != HistnModel::shapes_for(&self.config)
            || other.variant != self.config.variant
            || other.num_classes != self.config.num_classes
        {
            return Err(ModelError::Checkpoint(format!(
                "checkpoint holds variant {} with K={}, configuration asks for variant {} with K={}",
                self.config.variant, self.config.num_classes, other.variant, other.num_classes
            )));
        }
        Ok(())
    }

    fn shapes_for(cfg: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
        super::param_specs(cfg)
            .into_iter()
            .map(|s| (s.name, s.shape))
            .collect()
    }
}

pub fn save_checkpoint(model: &HistnModel, path: &Path) -> Result<()> {
    write_atomic(path, model.to_checkpoint_json()?.as_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<HistnModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ModelError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    HistnModel::from_checkpoint_json(&text)
}
