//! CSV ingestion, standardization and sliding-window datasets.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ImvError, Result};

/// Columns with these names (any case) are treated as timestamps and skipped.
const TIME_COLUMNS: [&str; 4] = ["timestamp", "time", "date", "datetime"];

/// A rectangular numeric table whose last column is the forecasting target.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesTable {
    columns: Vec<String>,
    /// Row-major `L×N`.
    data: Vec<f64>,
    dropped_rows: usize,
}

impl SeriesTable {
    pub fn new(columns: Vec<String>, data: Vec<f64>) -> Result<Self> {
        if columns.is_empty() {
            return Err(ImvError::Data("table without columns".into()));
        }
        if data.len() % columns.len() != 0 {
            return Err(ImvError::Data(format!(
                "{} values do not fill rows of {} columns",
                data.len(),
                columns.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ImvError::Data(format!(
                "non-finite value at row {}, column {}",
                i / columns.len(),
                columns[i % columns.len()]
            )));
        }
        Ok(SeriesTable {
            columns,
            data,
            dropped_rows: 0,
        })
    }

    pub fn from_rows(columns: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.iter().any(|r| r.len() != columns.len()) {
            return Err(ImvError::Data("ragged rows".into()));
        }
        Self::new(columns, rows.concat())
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.columns.len()
    }

    /// Rows dropped during ingestion because of missing cells.
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn target_name(&self) -> &str {
        self.columns.last().expect("non-empty")
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let n = self.n_cols();
        &self.data[r * n..(r + 1) * n]
    }

    pub fn value(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n_cols() + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|r| self.value(r, c)).collect()
    }

    pub fn target(&self) -> Vec<f64> {
        self.column(self.n_cols() - 1)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// A table made of the given columns, in the given order.
    pub fn select_columns(&self, keep: &[usize]) -> Result<SeriesTable> {
        if let Some(&bad) = keep.iter().find(|&&c| c >= self.n_cols()) {
            return Err(ImvError::Argument(format!("column {bad} out of range")));
        }
        let columns = keep.iter().map(|&c| self.columns[c].clone()).collect();
        let mut data = Vec::with_capacity(self.n_rows() * keep.len());
        for r in 0..self.n_rows() {
            let row = self.row(r);
            data.extend(keep.iter().map(|&c| row[c]));
        }
        Ok(SeriesTable {
            columns,
            data,
            dropped_rows: self.dropped_rows,
        })
    }

    /// Reorder columns by name to match `names` exactly.
    pub fn align_to(&self, names: &[String]) -> Result<SeriesTable> {
        let missing: Vec<&str> = names
            .iter()
            .filter(|n| self.column_index(n).is_none())
            .map(String::as_str)
            .collect();
        let extra: Vec<&str> = self
            .columns
            .iter()
            .filter(|c| !names.contains(c))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(ImvError::Data(format!(
                "column mismatch: missing {missing:?}, unexpected {extra:?}"
            )));
        }
        let order: Vec<usize> = names.iter().filter_map(|n| self.column_index(n)).collect();
        self.select_columns(&order)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let wrap = |e: csv::Error| ImvError::Data(format!("CSV write: {e}"));
        w.write_record(&self.columns).map_err(wrap)?;
        for r in 0..self.n_rows() {
            w.write_record(self.row(r).iter().map(|v| format!("{v:?}")))
                .map_err(wrap)?;
        }
        w.flush().map_err(|e| ImvError::Data(format!("CSV write: {e}")))?;
        Ok(())
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(
        cell.trim().to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "null" | "none"
    )
}

/// Read a CSV file with a header row; `target` names the column to forecast.
pub fn load_csv(path: impl AsRef<Path>, target: &str) -> Result<SeriesTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| ImvError::io(path, e))?;
    read_csv(file, path, target)
}

/// [`load_csv`] over any reader; `source` labels error messages.
pub fn read_csv<R: Read>(reader: R, source: impl AsRef<Path>, target: &str) -> Result<SeriesTable> {
    let source = source.as_ref();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let parse_err = |row: usize, column: &str, message: String| ImvError::Parse {
        path: source.to_path_buf(),
        row,
        column: column.to_string(),
        message,
    };
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(0, "", e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target_idx = header.iter().position(|h| h == target).ok_or_else(|| {
        ImvError::Data(format!(
            "target column {target:?} not found; available columns: {}",
            header.join(", ")
        ))
    })?;
    let mut used: Vec<usize> = (0..header.len())
        .filter(|&i| i != target_idx && !TIME_COLUMNS.contains(&header[i].to_ascii_lowercase().as_str()))
        .collect();
    used.push(target_idx);

    let mut data = Vec::new();
    let mut dropped = 0;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| parse_err(row, "", e.to_string()))?;
        if used.iter().any(|&c| rec.get(c).is_none_or(is_missing)) {
            dropped += 1;
            continue;
        }
        for &c in &used {
            let cell = rec.get(c).expect("checked above").trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(row, &header[c], format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(row, &header[c], format!("non-finite value {cell:?}")));
            }
            data.push(v);
        }
    }
    let columns = used.iter().map(|&c| header[c].clone()).collect();
    let mut table = SeriesTable::new(columns, data)?;
    table.dropped_rows = dropped;
    Ok(table)
}

/// Per-column z-score parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl Standardization {
    /// Transform a table whose columns match these statistics by name.
    pub fn apply(&self, table: &SeriesTable) -> Result<SeriesTable> {
        let aligned = table.align_to(&self.columns)?;
        let n = aligned.n_cols();
        let data = aligned
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - self.mean[i % n]) / self.std[i % n])
            .collect();
        Ok(SeriesTable {
            columns: aligned.columns,
            data,
            dropped_rows: table.dropped_rows,
        })
    }

    pub fn inverse(&self, table: &SeriesTable) -> Result<SeriesTable> {
        let n = table.n_cols();
        if table.columns != self.columns {
            return Err(ImvError::Data("column mismatch in inverse transform".into()));
        }
        let data = table
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v * self.std[i % n] + self.mean[i % n])
            .collect();
        SeriesTable::new(table.columns.clone(), data)
    }

    /// Map a standardized target value back to original units.
    pub fn target_to_original(&self, v: f64) -> f64 {
        let t = self.columns.len() - 1;
        v * self.std[t] + self.mean[t]
    }

    pub fn target_to_standard(&self, v: f64) -> f64 {
        let t = self.columns.len() - 1;
        (v - self.mean[t]) / self.std[t]
    }
}

/// Z-score every column with mean and (population) standard deviation of the
/// first `train_rows` rows; constant columns use a standard deviation floor.
pub fn standardize(table: &SeriesTable, train_rows: usize) -> Result<(SeriesTable, Standardization)> {
    if train_rows < 2 || train_rows > table.n_rows() {
        return Err(ImvError::Argument(format!(
            "standardization needs 2..={} train rows, got {train_rows}",
            table.n_rows()
        )));
    }
    let n = table.n_cols();
    let mut mean = vec![0.0; n];
    let mut std = vec![0.0; n];
    for c in 0..n {
        let col: Vec<f64> = (0..train_rows).map(|r| table.value(r, c)).collect();
        // A constant column keeps its exact value as the mean so it maps to 0.
        let m = if col.iter().all(|&v| v == col[0]) {
            col[0]
        } else {
            col.iter().sum::<f64>() / train_rows as f64
        };
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / train_rows as f64;
        mean[c] = m;
        std[c] = var.sqrt().max(STD_FLOOR);
    }
    let stats = Standardization {
        columns: table.columns.clone(),
        mean,
        std,
    };
    Ok((stats.apply(table)?, stats))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(ImvError::Argument(format!(
                "split fractions must be in [0, 1] and sum to 1: {self:?}"
            )));
        }
        if self.train <= 0.0 {
            return Err(ImvError::Argument("train fraction must be positive".into()));
        }
        Ok(())
    }

    /// Chronological window counts `(train, val, test)` for `m` windows.
    /// Train always gets at least one window.
    pub fn counts(&self, m: usize) -> (usize, usize, usize) {
        let floor = |f: f64| ((m as f64) * f + 1e-9).floor() as usize;
        let train = floor(self.train).clamp(1, m);
        let val = floor(self.val).min(m - train);
        (train, val, m - train - val)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// `M` windows of `T×N` inputs, each paired with the next target value.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub columns: Vec<String>,
    pub window: usize,
    /// Fractions the split tags were derived from.
    pub fractions: SplitFractions,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    splits: Vec<Split>,
    /// Statistics the windows were standardized with, if any.
    pub standardization: Option<Standardization>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        self.columns.len()
    }

    /// Row-major `T×N` window `i`; row `t` is table row `i + t`.
    pub fn input(&self, i: usize) -> &[f64] {
        let w = self.window * self.n_vars();
        &self.inputs[i * w..(i + 1) * w]
    }

    /// Target of window `i`: the last column at table row `i + T`.
    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn split(&self, i: usize) -> Split {
        self.splits[i]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Keep only the given variable columns (target last, by convention of
    /// the caller), preserving windows, targets and splits.
    pub fn select_variables(&self, keep: &[usize]) -> Result<WindowedDataset> {
        let n = self.n_vars();
        if let Some(&bad) = keep.iter().find(|&&c| c >= n) {
            return Err(ImvError::Argument(format!("variable {bad} out of range")));
        }
        let mut inputs = Vec::with_capacity(self.len() * self.window * keep.len());
        for row in self.inputs.chunks_exact(n) {
            inputs.extend(keep.iter().map(|&c| row[c]));
        }
        let standardization = self.standardization.as_ref().map(|s| Standardization {
            columns: keep.iter().map(|&c| s.columns[c].clone()).collect(),
            mean: keep.iter().map(|&c| s.mean[c]).collect(),
            std: keep.iter().map(|&c| s.std[c]).collect(),
        });
        Ok(WindowedDataset {
            columns: keep.iter().map(|&c| self.columns[c].clone()).collect(),
            window: self.window,
            fractions: self.fractions,
            inputs,
            targets: self.targets.clone(),
            splits: self.splits.clone(),
            standardization,
        })
    }
}

/// Rows covered by training windows (inputs and targets).
pub fn train_row_count(rows: usize, window: usize, fractions: &SplitFractions) -> usize {
    let m = rows.saturating_sub(window);
    if m == 0 {
        return rows;
    }
    fractions.counts(m).0 + window
}

/// Slide a window of `window` rows over the table: `M = L − T` windows,
/// split chronologically by start index.
pub fn make_windows(table: &SeriesTable, window: usize, fractions: &SplitFractions) -> Result<WindowedDataset> {
    fractions.validate()?;
    if window == 0 {
        return Err(ImvError::Argument("window length must be positive".into()));
    }
    let rows = table.n_rows();
    if rows <= window {
        return Err(ImvError::Data(format!(
            "series too short: {rows} rows for window {window} (need at least {})",
            window + 1
        )));
    }
    let m = rows - window;
    let n = table.n_cols();
    let mut inputs = Vec::with_capacity(m * window * n);
    let mut targets = Vec::with_capacity(m);
    for i in 0..m {
        inputs.extend_from_slice(&table.data[i * n..(i + window) * n]);
        targets.push(table.value(i + window, n - 1));
    }
    let (train, val, _) = fractions.counts(m);
    let splits = (0..m)
        .map(|i| {
            if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            }
        })
        .collect();
    Ok(WindowedDataset {
        columns: table.columns.clone(),
        window,
        fractions: *fractions,
        inputs,
        targets,
        splits,
        standardization: None,
    })
}

/// Standardize with statistics of the training rows only, then window.
pub fn prepare_dataset(table: &SeriesTable, window: usize, fractions: &SplitFractions) -> Result<WindowedDataset> {
    fractions.validate()?;
    if table.n_rows() <= window {
        return make_windows(table, window, fractions);
    }
    let train_rows = train_row_count(table.n_rows(), window, fractions);
    let (std_table, stats) = standardize(table, train_rows)?;
    let mut ds = make_windows(&std_table, window, fractions)?;
    ds.standardization = Some(stats);
    Ok(ds)
}
