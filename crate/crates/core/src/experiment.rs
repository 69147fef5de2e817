//! End-to-end pipeline: prepare a table, train, score every split, and
//! forecast from a saved checkpoint.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataio::{prepare_dataset, SeriesTable, Split, SplitFractions, WindowedDataset};
use crate::error::{ImvError, Result};
use crate::evalx::MetricsReport;
use crate::model::ImvModel;
use crate::ndtape::Tape;
use crate::scalar::Scalar;
use crate::trainer::{fit_with, predict_windows, targets_original, ArchConfig, EpochRecord, FitOutcome, TrainConfig};

/// Metrics per split in original units; a split without windows is `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub train: Option<MetricsReport>,
    pub val: Option<MetricsReport>,
    pub test: Option<MetricsReport>,
    /// Epoch the scored parameters come from.
    pub epoch: usize,
}

pub fn split_metrics<S: Scalar>(model: &ImvModel<S>, data: &WindowedDataset, epoch: usize) -> Result<SplitMetrics> {
    let score = |split| -> Result<Option<MetricsReport>> {
        let idx = data.indices(split);
        if idx.is_empty() {
            return Ok(None);
        }
        let pred = predict_windows(model, data, &idx)?;
        MetricsReport::compute(&targets_original(data, &idx), &pred).map(Some)
    };
    Ok(SplitMetrics {
        train: score(Split::Train)?,
        val: score(Split::Val)?,
        test: score(Split::Test)?,
        epoch,
    })
}

#[derive(Clone, Debug)]
pub struct TrainedRun<S> {
    pub dataset: WindowedDataset,
    pub outcome: FitOutcome<S>,
    pub metrics: SplitMetrics,
}

/// Standardize on training rows, window, train and score.
pub fn train_on_table<S: Scalar>(
    table: &SeriesTable,
    window: usize,
    fractions: &SplitFractions,
    arch: &ArchConfig,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedRun<S>> {
    let dataset = prepare_dataset(table, window, fractions)?;
    train_on_dataset(dataset, arch, config, on_epoch)
}

pub fn train_on_dataset<S: Scalar>(
    dataset: WindowedDataset,
    arch: &ArchConfig,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedRun<S>> {
    let outcome = fit_with(&dataset, arch, config, on_epoch)?;
    let metrics = split_metrics(&outcome.model, &dataset, outcome.checkpoint.meta.epoch)?;
    Ok(TrainedRun {
        dataset,
        outcome,
        metrics,
    })
}

/// One forecast; `y_true` is absent for the step after the last row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub window_start: usize,
    pub y_true: Option<f64>,
    pub y_hat: f64,
}

/// Forecast every window of `table` with a checkpoint. Columns are matched
/// by name; a table of `L ≥ T` rows yields `L − T + 1` forecasts.
pub fn predict_table(checkpoint: &Checkpoint, table: &SeriesTable) -> Result<Vec<Prediction>> {
    let model: ImvModel<f64> = checkpoint.model()?;
    let cols = &checkpoint.config.columns;
    let window = checkpoint.config.window;
    let aligned = table.align_to(cols)?;
    let scaled = match &checkpoint.standardization {
        Some(s) => s.apply(&aligned)?,
        None => aligned.clone(),
    };
    let rows = aligned.n_rows();
    if rows < window {
        return Err(ImvError::Data(format!(
            "{rows} rows cannot fill a window of {window}"
        )));
    }
    let n = aligned.n_cols();
    let mut tape = Tape::new();
    (0..=rows - window)
        .map(|i| {
            let p = model.predict_with(&mut tape, &scaled.data()[i * n..(i + window) * n])?;
            let y_hat = match &checkpoint.standardization {
                Some(s) => s.target_to_original(p),
                None => p,
            };
            Ok(Prediction {
                window_start: i,
                y_true: (i + window < rows).then(|| aligned.value(i + window, n - 1)),
                y_hat,
            })
        })
        .collect()
}
