//! Trained-model checkpoints as a single JSON document.
//!
//! Floats are written in shortest round-trip form and parsed back exactly,
//! so `load(save(ck)) == ck` holds bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cell::{CellConfig, ImvCellParams};
use crate::dataio::{SplitFractions, Standardization};
use crate::error::{ImvError, Result};
use crate::mixture::{AttentionParams, HeadConfig};
use crate::model::ImvModel;
use crate::ndtape::NdArray;
use crate::scalar::Scalar;
use crate::trainer::{ImportanceState, TrainConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    /// Model input columns, target last.
    pub columns: Vec<String>,
    pub window: usize,
    pub splits: SplitFractions,
    pub cell: CellConfig,
    pub head: HeadConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRecord {
    #[serde(rename = "I")]
    pub variable: Vec<f64>,
    /// Temporal importance row of each variable, keyed by column name.
    #[serde(rename = "T")]
    pub temporal: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    /// Epoch the parameters were taken from; 0 means untrained.
    pub epoch: usize,
    pub val_rmse: Option<f64>,
    pub loss_history: Vec<f64>,
    pub val_history: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: CheckpointConfig,
    pub params: BTreeMap<String, TensorRecord>,
    pub importance: ImportanceRecord,
    pub standardization: Option<Standardization>,
    pub meta: TrainingMeta,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: Option<u32>,
}

/// Head tensors stored per variable: (internal name, prefix, suffix).
const HEAD_PER_VAR: [(&str, &str, &str); 7] = [
    ("score_w", "head.fn", "w"),
    ("score_b", "head.fn", "b"),
    ("score_v", "head.fn", "v"),
    ("out_w1", "head.phi", "w1"),
    ("out_b1", "head.phi", "b1"),
    ("out_w2", "head.phi", "w2"),
    ("out_b2", "head.phi", "b2"),
];

const HEAD_SHARED: [(&str, &str); 3] = [("prior_w", "head.f.w"), ("prior_b", "head.f.b"), ("prior_v", "head.f.v")];

fn record<S: Scalar>(t: &NdArray<S>) -> TensorRecord {
    TensorRecord {
        shape: t.shape().to_vec(),
        data: t.data().iter().map(|v| v.to_f64_lossy()).collect(),
    }
}

impl Checkpoint {
    pub fn from_model<S: Scalar>(
        model: &ImvModel<S>,
        config: CheckpointConfig,
        importance: &ImportanceState,
        standardization: Option<Standardization>,
        meta: TrainingMeta,
    ) -> Result<Self> {
        if config.cell != model.cell_config() || config.head != model.head_config() {
            return Err(ImvError::Contract("checkpoint config does not describe the model".into()));
        }
        let n = config.cell.n_vars;
        if config.columns.len() != n || importance.n_vars() != n || importance.window() != config.window {
            return Err(ImvError::Contract(format!(
                "{} columns, importance {}×{}, model N={} T={}",
                config.columns.len(),
                importance.n_vars(),
                importance.window(),
                n,
                config.window
            )));
        }
        if model.tensors().iter().any(|t| !t.all_finite()) {
            return Err(ImvError::Format("refusing to store non-finite parameters".into()));
        }

        let mut params = BTreeMap::new();
        for (name, t) in model.cell.named_tensors() {
            params.insert(name.to_string(), record(t));
        }
        let head: BTreeMap<&str, &NdArray<S>> = model.head.named_tensors().into_iter().collect();
        for (internal, prefix, suffix) in HEAD_PER_VAR {
            let t = head[internal];
            let rest = &t.shape()[1..];
            let k: usize = rest.iter().product();
            for v in 0..n {
                params.insert(
                    format!("{prefix}.{v}.{suffix}"),
                    TensorRecord {
                        shape: rest.to_vec(),
                        data: t.data()[v * k..(v + 1) * k].iter().map(|x| x.to_f64_lossy()).collect(),
                    },
                );
            }
        }
        for (internal, name) in HEAD_SHARED {
            params.insert(name.to_string(), record(head[internal]));
        }

        let t = config.window;
        let temporal: BTreeMap<String, Vec<f64>> = config
            .columns
            .iter()
            .enumerate()
            .map(|(v, c)| (c.clone(), importance.temporal_importance.data()[v * t..(v + 1) * t].to_vec()))
            .collect();
        if temporal.len() != n {
            return Err(ImvError::Contract("duplicate column names".into()));
        }
        Ok(Checkpoint {
            format_version: FORMAT_VERSION,
            config,
            params,
            importance: ImportanceRecord {
                variable: importance.var_importance.data().to_vec(),
                temporal,
            },
            standardization,
            meta,
        })
    }

    /// Rebuild the model, checking every tensor name and shape.
    pub fn model<S: Scalar>(&self) -> Result<ImvModel<S>> {
        let (cell_cfg, head_cfg) = (self.config.cell, self.config.head);
        cell_cfg.validate()?;
        let n = cell_cfg.n_vars;
        let mut used = 0;
        let mut take = |name: &str, shape: &[usize]| -> Result<Vec<S>> {
            let r = self
                .params
                .get(name)
                .ok_or_else(|| ImvError::Format(format!("missing tensor {name}")))?;
            if r.shape != shape || r.data.len() != shape.iter().product::<usize>() {
                return Err(ImvError::Format(format!(
                    "tensor {name}: shape {:?} with {} values, expected {shape:?}",
                    r.shape,
                    r.data.len()
                )));
            }
            used += 1;
            Ok(r.data.iter().map(|&v| S::lit(v)).collect())
        };

        let mut cell = ImvCellParams::<S>::zeros(cell_cfg);
        let cell_names: Vec<&str> = cell.named_tensors().into_iter().map(|(k, _)| k).collect();
        for (name, t) in cell_names.into_iter().zip(cell.tensors_mut()) {
            let data = take(name, t.shape())?;
            t.data_mut().copy_from_slice(&data);
        }

        let mut head = AttentionParams::<S>::zeros(head_cfg);
        let head_names: Vec<&str> = head.named_tensors().into_iter().map(|(k, _)| k).collect();
        for (internal, t) in head_names.into_iter().zip(head.tensors_mut()) {
            if let Some(&(_, prefix, suffix)) = HEAD_PER_VAR.iter().find(|e| e.0 == internal) {
                let rest = t.shape()[1..].to_vec();
                let k: usize = rest.iter().product();
                for v in 0..n {
                    let data = take(&format!("{prefix}.{v}.{suffix}"), &rest)?;
                    t.data_mut()[v * k..(v + 1) * k].copy_from_slice(&data);
                }
            } else {
                let name = HEAD_SHARED.iter().find(|e| e.0 == internal).expect("every head tensor is listed").1;
                let data = take(name, t.shape())?;
                t.data_mut().copy_from_slice(&data);
            }
        }
        if used != self.params.len() {
            return Err(ImvError::Format(format!(
                "{} unexpected tensors in checkpoint",
                self.params.len() - used
            )));
        }
        Ok(ImvModel { cell, head })
    }

    pub fn importance_state(&self) -> Result<ImportanceState> {
        let (n, t) = (self.config.columns.len(), self.config.window);
        if self.importance.variable.len() != n {
            return Err(ImvError::Format(format!(
                "I has {} entries for {n} variables",
                self.importance.variable.len()
            )));
        }
        let mut temporal = Vec::with_capacity(n * t);
        for c in &self.config.columns {
            let row = self
                .importance
                .temporal
                .get(c)
                .ok_or_else(|| ImvError::Format(format!("no temporal importance for {c}")))?;
            if row.len() != t {
                return Err(ImvError::Format(format!("temporal importance of {c} has length {}", row.len())));
            }
            temporal.extend_from_slice(row);
        }
        Ok(ImportanceState {
            var_importance: NdArray::new(vec![n], self.importance.variable.clone())?,
            temporal_importance: NdArray::new(vec![n, t], temporal)?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| ImvError::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: VersionProbe =
            serde_json::from_str(text).map_err(|e| ImvError::Format(format!("not a checkpoint: {e}")))?;
        match probe.format_version {
            Some(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(ImvError::Format(format!(
                    "unsupported format_version {v} (this build reads {FORMAT_VERSION})"
                )))
            }
            None => return Err(ImvError::Format("missing format_version".into())),
        }
        serde_json::from_str(text).map_err(|e| ImvError::Format(e.to_string()))
    }

    /// Write atomically: a temporary sibling file is renamed into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ImvError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            ImvError::Format(m) => ImvError::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Write `bytes` to a temporary file next to `path`, then rename it over
/// `path`. Readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let file_name = path
        .file_name()
        .ok_or_else(|| ImvError::Argument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", file_name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(ImvError::io(path, e));
    }
    Ok(())
}
