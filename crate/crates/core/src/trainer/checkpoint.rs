//! Versioned JSON checkpoints with a configuration hash and a parameter checksum.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::adam::AdamState;
use crate::conductor::ModelAssembly;
use crate::config::ModelConfig;
use crate::features::Vocabularies;
use crate::tensor::Tensor;
use crate::Result;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),
    #[error("unsupported checkpoint format version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error(
        "checkpoint was saved for a different model configuration (hash {found}, model has {expected}); \
         rebuild the model with the checkpoint's configuration"
    )]
    ConfigMismatch { expected: String, found: String },
    #[error("parameter {name}: checkpoint shape {found:?} does not match model shape {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("parameter {name} is missing from the checkpoint")]
    Missing { name: String },
    #[error("checkpoint has parameter {name} that the model does not")]
    Unexpected { name: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub tensor: Tensor,
    pub frozen_rows: Option<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub model: ModelConfig,
    pub path: String,
    pub vocabs: Vocabularies,
    pub params: Vec<SavedParam>,
    pub checksum: String,
    pub adam: Option<AdamState>,
    pub epoch: usize,
    pub best_dev_em: Option<f64>,
    pub lr_history: Vec<f64>,
}

fn params_checksum(params: &[SavedParam]) -> String {
    let bytes = serde_json::to_vec(params).expect("parameters serialize");
    hex::encode(Sha256::digest(&bytes))
}

impl Checkpoint {
    pub fn capture(
        model: &ModelAssembly,
        adam: Option<&AdamState>,
        epoch: usize,
        best_dev_em: Option<f64>,
        lr_history: &[f64],
    ) -> Self {
        let params: Vec<SavedParam> = model
            .params
            .iter()
            .map(|(_, p)| SavedParam {
                name: p.name.clone(),
                tensor: p.value.clone(),
                frozen_rows: p.frozen_rows.clone(),
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            config_hash: model.config_hash(),
            model: model.config.clone(),
            path: model.path.render(),
            vocabs: model.vocabs.clone(),
            checksum: params_checksum(&params),
            params,
            adam: adam.cloned(),
            epoch,
            best_dev_em,
            lr_history: lr_history.to_vec(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec(self).map_err(|e| crate::Error::Io(e.into()))?;
        // Write then rename so an interrupted save never leaves a torn file behind.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(Self::from_bytes(&bytes)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut c: Checkpoint =
            serde_json::from_slice(bytes).map_err(|e| CheckpointError::Integrity(e.to_string()))?;
        if c.format_version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: c.format_version,
            });
        }
        if params_checksum(&c.params) != c.checksum {
            return Err(CheckpointError::Integrity("parameter checksum mismatch".into()));
        }
        for p in &c.params {
            if p.tensor.numel() != p.tensor.data().len() {
                return Err(CheckpointError::Integrity(format!(
                    "parameter {} has inconsistent shape",
                    p.name
                )));
            }
        }
        c.vocabs.reindex();
        Ok(c)
    }

    /// Builds the model this checkpoint was saved from and loads its parameters.
    pub fn build_model(&self) -> Result<ModelAssembly> {
        let mut model = ModelAssembly::build(&self.model, self.vocabs.clone(), None, 0)?;
        self.restore(&mut model)?;
        Ok(model)
    }

    /// Copies parameters into `model`, which must have the same structure.
    pub fn restore(&self, model: &mut ModelAssembly) -> Result<(), CheckpointError> {
        for p in &self.params {
            if model.params.find(&p.name).is_none() {
                return Err(CheckpointError::Unexpected { name: p.name.clone() });
            }
        }
        let mut updates = Vec::with_capacity(self.params.len());
        for (id, param) in model.params.iter() {
            let saved = self.params.iter().find(|s| s.name == param.name).ok_or_else(|| {
                CheckpointError::Missing {
                    name: param.name.clone(),
                }
            })?;
            if saved.tensor.shape() != param.value.shape() {
                return Err(CheckpointError::Shape {
                    name: param.name.clone(),
                    expected: param.value.shape().to_vec(),
                    found: saved.tensor.shape().to_vec(),
                });
            }
            updates.push((id, saved));
        }
        let expected = model.config_hash();
        if expected != self.config_hash {
            return Err(CheckpointError::ConfigMismatch {
                expected,
                found: self.config_hash.clone(),
            });
        }
        for (id, saved) in updates {
            let p = model.params.get_mut(id);
            p.value = saved.tensor.clone();
            p.frozen_rows = saved.frozen_rows.clone();
        }
        Ok(())
    }
}
