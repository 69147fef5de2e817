//! Run configuration: a TOML document whose fields can be overridden by flags.

use std::path::{Path, PathBuf};

use imv_core::cell::Variant;
use imv_core::dataio::SplitFractions;
use imv_core::trainer::{ArchConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub target: Option<String>,
    pub window: usize,
    pub out: PathBuf,
    /// Write an importance snapshot every this many epochs.
    pub snapshot_every: usize,
    pub model: ArchConfig,
    pub train: TrainConfig,
    pub split: SplitFractions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            target: None,
            window: 10,
            out: PathBuf::from("imv-run"),
            snapshot_every: 5,
            model: ArchConfig::default(),
            train: TrainConfig::default(),
            split: SplitFractions::default(),
        }
    }
}

/// Flag values that replace config fields when present.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub target: Option<String>,
    pub variant: Option<Variant>,
    pub per_var_dim: Option<usize>,
    pub window: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(v) = o.data {
            self.data = Some(v);
        }
        if let Some(v) = o.target {
            self.target = Some(v);
        }
        if let Some(v) = o.variant {
            self.model.variant = v;
        }
        if let Some(v) = o.per_var_dim {
            self.model.per_var_dim = v;
        }
        if let Some(v) = o.window {
            self.window = v;
        }
        if let Some(v) = o.epochs {
            self.train.epochs = v;
        }
        if let Some(v) = o.seed {
            self.train.seed = v;
        }
        if let Some(v) = o.out {
            self.out = v;
        }
    }

    /// All problems at once; empty when the config is usable.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.data.is_none() {
            out.push("data: no input CSV given".to_string());
        }
        if self.target.as_deref().is_none_or(str::is_empty) {
            out.push("target: no target column given".to_string());
        }
        if self.window == 0 {
            out.push("window must be at least 1".to_string());
        }
        if self.snapshot_every == 0 {
            out.push("snapshot_every must be at least 1".to_string());
        }
        out.extend(self.model.problems().into_iter().map(|p| format!("model.{p}")));
        out.extend(self.train.problems().into_iter().map(|p| format!("train.{p}")));
        if let Err(e) = self.split.validate() {
            out.push(format!("split: {e}"));
        }
        out
    }
}
