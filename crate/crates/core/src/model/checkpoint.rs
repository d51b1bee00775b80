use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{ModelConfig, PvLstmModel};
use crate::error::{Error, Result};
use crate::params::NamedTensors;

pub const CHECKPOINT_FORMAT: &str = "pvlstm-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    /// Row-major.
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub tag: String,
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub lr: Option<f64>,
}

/// Serialized model: format tag, configuration, training metadata and every
/// named tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub meta: CheckpointMeta,
    pub params: BTreeMap<String, TensorRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &PvLstmModel, meta: CheckpointMeta) -> Self {
        let params = model
            .params
            .tensors()
            .into_iter()
            .map(|t| {
                (
                    t.name,
                    TensorRecord {
                        shape: t.shape,
                        data: t.data.to_vec(),
                    },
                )
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: model.config.clone(),
            meta,
            params,
        }
    }

    /// Rebuilds the model, requiring an exact match of tensor names and shapes.
    pub fn to_model(&self) -> Result<PvLstmModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!(
                "unsupported checkpoint format {:?} (expected {CHECKPOINT_FORMAT:?})",
                self.format
            )));
        }
        let mut model = PvLstmModel::zeros(self.config.clone())?;
        let shapes: Vec<(String, Vec<usize>)> = model.params.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
        if shapes.len() != self.params.len() {
            let extra: Vec<&String> = self
                .params
                .keys()
                .filter(|k| !shapes.iter().any(|(n, _)| n == *k))
                .collect();
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, config implies {} (unexpected: {extra:?})",
                self.params.len(),
                shapes.len()
            )));
        }
        for ((name, dst), (_, shape)) in model.params.tensors_mut().into_iter().zip(&shapes) {
            let rec = self
                .params
                .get(&name)
                .ok_or_else(|| Error::Config(format!("checkpoint is missing tensor {name}")))?;
            if &rec.shape != shape || rec.data.len() != dst.len() {
                return Err(Error::shape(
                    "checkpoint",
                    format!("{name} {shape:?}"),
                    format!("stored {:?} with {} values", rec.shape, rec.data.len()),
                ));
            }
            if rec.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("tensor {name} in checkpoint")));
            }
            dst.copy_from_slice(&rec.data);
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Loads a model, failing if `expected` is given and differs from the
    /// stored configuration.
    pub fn load_model(path: &Path, expected: Option<&ModelConfig>) -> Result<(PvLstmModel, CheckpointMeta)> {
        let ckpt = Checkpoint::load(path)?;
        if let Some(want) = expected {
            if want != &ckpt.config {
                return Err(Error::Config(format!(
                    "checkpoint config {:?} disagrees with requested config {:?}",
                    ckpt.config, want
                )));
            }
        }
        let model = ckpt.to_model()?;
        Ok((model, ckpt.meta))
    }
}
