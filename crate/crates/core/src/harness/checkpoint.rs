//! Single-file checkpoint container.
//!
//! ```text
//! 8 bytes   magic "CELLDET1"
//! 8 bytes   manifest length, u64 little-endian
//! n bytes   JSON manifest (configs, counters, history, array table)
//! ...       array data, little-endian f32, in array-table order
//! ```
//!
//! Array names are `param/<name>`, `bn/<layer>/mean`, `bn/<layer>/var`,
//! `adam/m/<name>` and `adam/v/<name>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{Adam, PlateauState};
use super::train::{EpochMetrics, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::model::{param_specs, Model, ModelConfig, ParamStore};
use crate::tensor::ops::BatchNormState;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CELLDET1";
pub const FORMAT_VERSION: u32 = 1;

/// Everything in the manifest except the array table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub plateau: PlateauState,
    pub adam_step: u64,
    pub best_val_loss: Option<f64>,
    pub history: Vec<EpochMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ArrayInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    meta: CheckpointMeta,
    arrays: Vec<ArrayInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub arrays: BTreeMap<String, Tensor>,
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn from_state(train: &TrainConfig, state: &TrainState) -> Self {
        let mut arrays = BTreeMap::new();
        for (name, t) in state.model.params.iter() {
            arrays.insert(format!("param/{name}"), t.clone());
        }
        for (name, s) in &state.model.norms {
            arrays.insert(format!("bn/{name}/mean"), s.running_mean.clone());
            arrays.insert(format!("bn/{name}/var"), s.running_var.clone());
        }
        for (name, t) in &state.adam.m {
            arrays.insert(format!("adam/m/{name}"), t.clone());
        }
        for (name, t) in &state.adam.v {
            arrays.insert(format!("adam/v/{name}"), t.clone());
        }
        Checkpoint {
            meta: CheckpointMeta {
                model: state.model.config.clone(),
                train: train.clone(),
                epoch: state.epoch,
                plateau: state.plateau,
                adam_step: state.adam.step,
                best_val_loss: state.best_val_loss,
                history: state.history.clone(),
            },
            arrays,
        }
    }

    /// Rebuilds the model, checking that every configured parameter and
    /// batch-norm statistic is present with the right shape.
    pub fn model(&self) -> Result<Model> {
        let cfg = &self.meta.model;
        cfg.validate()?;
        let (specs, norms) = param_specs(cfg);
        let mut params = ParamStore::new();
        for spec in &specs {
            let t = self
                .arrays
                .get(&format!("param/{}", spec.name))
                .ok_or_else(|| ckpt_err(format!("missing parameter `{}`", spec.name)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(ckpt_err(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
            params.insert(spec.name.clone(), t.clone());
        }
        let n_params = self.arrays.keys().filter(|k| k.starts_with("param/")).count();
        if n_params != specs.len() {
            return Err(ckpt_err(format!(
                "{n_params} parameter arrays, configuration implies {}",
                specs.len()
            )));
        }
        let mut states = BTreeMap::new();
        for (name, c) in norms {
            let get = |stat: &str| {
                self.arrays
                    .get(&format!("bn/{name}/{stat}"))
                    .filter(|t| t.shape() == [c])
                    .cloned()
                    .ok_or_else(|| ckpt_err(format!("missing or malformed batch-norm statistic `{name}/{stat}`")))
            };
            states.insert(
                name.clone(),
                BatchNormState {
                    running_mean: get("mean")?,
                    running_var: get("var")?,
                },
            );
        }
        Ok(Model {
            config: cfg.clone(),
            params,
            norms: states,
        })
    }

    pub fn into_state(self) -> Result<(TrainConfig, TrainState)> {
        let model = self.model()?;
        let mut adam = Adam::new();
        adam.step = self.meta.adam_step;
        for (key, t) in &self.arrays {
            if let Some(name) = key.strip_prefix("adam/m/") {
                adam.m.insert(name.to_string(), t.clone());
            } else if let Some(name) = key.strip_prefix("adam/v/") {
                adam.v.insert(name.to_string(), t.clone());
            }
        }
        let meta = self.meta;
        Ok((
            meta.train,
            TrainState {
                model,
                adam,
                plateau: meta.plateau,
                epoch: meta.epoch,
                best_val_loss: meta.best_val_loss,
                history: meta.history,
            },
        ))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            version: FORMAT_VERSION,
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(name, t)| ArrayInfo {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let data_len: usize = self.arrays.values().map(|t| t.len() * 4).sum();
        let mut out = Vec::with_capacity(16 + json.len() + data_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.arrays.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(ckpt_err("not a checkpoint file (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes
            .get(16..16 + len)
            .ok_or_else(|| ckpt_err("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(json)?;
        if manifest.version != FORMAT_VERSION {
            return Err(ckpt_err(format!("unsupported format version {}", manifest.version)));
        }
        let mut pos = 16 + len;
        let mut arrays = BTreeMap::new();
        for info in manifest.arrays {
            let n: usize = info.shape.iter().product();
            let raw = bytes
                .get(pos..pos + 4 * n)
                .ok_or_else(|| ckpt_err(format!("truncated data for `{}`", info.name)))?;
            pos += 4 * n;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(info.shape, data)?;
            if arrays.insert(info.name.clone(), t).is_some() {
                return Err(ckpt_err(format!("duplicate array `{}`", info.name)));
            }
        }
        if pos != bytes.len() {
            return Err(ckpt_err(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Checkpoint {
            meta: manifest.meta,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| ckpt_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
