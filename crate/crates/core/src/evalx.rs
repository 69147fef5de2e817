//! Metrics, variable rankings and selection, and a synthetic benchmark with
//! known drivers.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{SeriesTable, WindowedDataset};
use crate::error::{ImvError, Result};
use crate::trainer::ImportanceState;

fn check_pair(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(ImvError::Argument("metric over zero points".into()));
    }
    if y.len() != y_hat.len() {
        return Err(ImvError::dim("metric", &[y.len()], &[y_hat.len()]));
    }
    Ok(())
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    let sse: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    let sae: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum();
    Ok(sae / y.len() as f64)
}

/// Variable indices (0-based) by descending importance; ties keep the
/// lower index first.
pub fn rank_variables(importance: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..importance.len()).collect();
    idx.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    idx
}

/// Sample Pearson correlation; 0 when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let (x, y) = (&x[..n], &y[..n]);
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Rank the exogenous columns (all but the last) by `|ρ|` between the column
/// at row `r` and the target at row `r + 1`, over the first `train_rows`
/// rows. Ties keep the lower index first.
pub fn pearson_rank(table: &SeriesTable, train_rows: usize) -> Result<Vec<usize>> {
    let rows = train_rows.min(table.n_rows());
    if rows < 3 {
        return Err(ImvError::Argument(format!("correlation ranking needs at least 3 rows, got {rows}")));
    }
    let target = table.target();
    let next = &target[1..rows];
    let scores: Vec<f64> = (0..table.n_cols() - 1)
        .map(|c| pearson(&table.column(c)[..rows - 1], next).abs())
        .collect();
    Ok(rank_variables(&scores))
}

/// Columns kept by keeping the top `fraction` of exogenous variables in
/// `ranking`: `ceil(fraction·(N−1))` of them in their original order, then
/// the target. Entries of `ranking` equal to the target index are skipped.
pub fn selected_columns(n_vars: usize, ranking: &[usize], fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ImvError::Argument(format!("fraction must be in (0, 1], got {fraction}")));
    }
    if n_vars == 0 {
        return Err(ImvError::Argument("no variables".into()));
    }
    let target = n_vars - 1;
    let exo: Vec<usize> = ranking.iter().copied().filter(|&v| v != target).collect();
    let mut seen = vec![false; target];
    for &v in &exo {
        if v >= target || std::mem::replace(&mut seen[v], true) {
            return Err(ImvError::Argument(format!(
                "ranking {ranking:?} is not a permutation of the {target} exogenous variables"
            )));
        }
    }
    if exo.len() != target {
        return Err(ImvError::Argument(format!(
            "ranking {ranking:?} is not a permutation of the {target} exogenous variables"
        )));
    }
    let k = ((fraction * target as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut keep: Vec<usize> = exo[..k.min(target)].to_vec();
    keep.sort_unstable();
    keep.push(target);
    Ok(keep)
}

/// Reduced table; see [`selected_columns`].
pub fn select_top_k_table(table: &SeriesTable, ranking: &[usize], fraction: f64) -> Result<SeriesTable> {
    table.select_columns(&selected_columns(table.n_cols(), ranking, fraction)?)
}

/// Reduced windowed dataset; see [`selected_columns`].
pub fn select_top_k(data: &WindowedDataset, ranking: &[usize], fraction: f64) -> Result<WindowedDataset> {
    data.select_variables(&selected_columns(data.n_vars(), ranking, fraction)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Driver {
    /// 0-based exogenous variable index.
    pub var: usize,
    pub lag: usize,
    pub coef: f64,
}

/// Exogenous AR(1) series plus a target driven by lagged exogenous values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Number of exogenous variables.
    pub n_vars: usize,
    pub length: usize,
    pub seed: u64,
    pub drivers: Vec<Driver>,
    /// Wrap the driver sum in `tanh`.
    pub nonlinear: bool,
    pub noise_std: f64,
    /// Steps simulated and discarded before the first row.
    pub burn_in: usize,
}

pub const AR_COEF: f64 = 0.7;

impl Default for SyntheticSpec {
    /// The default benchmark: 6 exogenous variables, the first driving the
    /// target at lag 2 and the second at lag 0.
    fn default() -> Self {
        SyntheticSpec {
            n_vars: 6,
            length: 2500,
            seed: 42,
            drivers: vec![
                Driver { var: 0, lag: 2, coef: 0.6 },
                Driver { var: 1, lag: 0, coef: 0.3 },
            ],
            nonlinear: false,
            noise_std: 0.1,
            burn_in: 100,
        }
    }
}

impl SyntheticSpec {
    pub fn max_lag(&self) -> usize {
        self.drivers.iter().map(|d| d.lag).max().unwrap_or(0)
    }

    /// Validate the settings; with `window` given, every lag must fit inside it.
    pub fn validate(&self, window: Option<usize>) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_vars == 0 {
            problems.push("n_vars must be at least 1".to_string());
        }
        if self.length < 2 {
            problems.push(format!("length must be at least 2, got {}", self.length));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            problems.push(format!("noise std must be non-negative, got {}", self.noise_std));
        }
        for d in &self.drivers {
            if d.var >= self.n_vars {
                problems.push(format!("driver variable {} out of range", d.var));
            }
            if !d.coef.is_finite() {
                problems.push(format!("driver coefficient {} is not finite", d.coef));
            }
            if let Some(t) = window {
                if d.lag >= t {
                    problems.push(format!("driver lag {} does not fit window {t}", d.lag));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ImvError::Argument(problems.join("; ")))
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        (1..=self.n_vars).map(|i| format!("x{i}")).chain(["y".to_string()]).collect()
    }

    /// Noise-free value of `y` at row `r` from exogenous values in `table`,
    /// or `None` when a required lag reaches before row 0.
    pub fn bayes_forecast(&self, table: &SeriesTable, r: usize) -> Option<f64> {
        if r == 0 || r > table.n_rows() {
            return None;
        }
        let t = r - 1;
        let mut s = 0.0;
        for d in &self.drivers {
            s += d.coef * table.value(t.checked_sub(d.lag)?, d.var);
        }
        Some(if self.nonlinear { s.tanh() } else { s })
    }
}

/// Generate the table; columns `x1..xN` and then `y`. The same settings always
/// produce the same table.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SeriesTable> {
    spec.validate(None)?;
    let n = spec.n_vars;
    let skip = spec.burn_in + spec.max_lag() + 1;
    let steps = skip + spec.length;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = vec![0.0_f64; steps * n];
    let mut y = vec![0.0_f64; steps];
    let mut prev = vec![0.0_f64; n];
    for t in 0..steps {
        for v in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            prev[v] = AR_COEF * prev[v] + e;
            x[t * n + v] = prev[v];
        }
        let noise: f64 = StandardNormal.sample(&mut rng);
        if t > spec.max_lag() {
            let mut s = 0.0;
            for d in &spec.drivers {
                s += d.coef * x[(t - 1 - d.lag) * n + d.var];
            }
            y[t] = if spec.nonlinear { s.tanh() } else { s } + spec.noise_std * noise;
        }
    }
    let mut data = Vec::with_capacity(spec.length * (n + 1));
    for t in skip..steps {
        data.extend_from_slice(&x[t * n..(t + 1) * n]);
        data.push(y[t]);
    }
    SeriesTable::new(spec.column_names(), data)
}

/// `{rmse, mae, n_test}` for one set of predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub mae: f64,
    pub n_test: usize,
}

impl MetricsReport {
    pub fn compute(y: &[f64], y_hat: &[f64]) -> Result<Self> {
        Ok(MetricsReport {
            rmse: rmse(y, y_hat)?,
            mae: mae(y, y_hat)?,
            n_test: y.len(),
        })
    }
}

/// Variable and temporal importance with the ranking, by column name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub variables: Vec<String>,
    #[serde(rename = "I")]
    pub variable: Vec<f64>,
    /// Temporal rows by variable; entry `k` is window position `k`, so the
    /// last entry is the most recent step.
    #[serde(rename = "T")]
    pub temporal: BTreeMap<String, Vec<f64>>,
    /// Variable names, most important first.
    pub ranking: Vec<String>,
}

impl ImportanceReport {
    pub fn new(columns: &[String], state: &ImportanceState) -> Result<Self> {
        if columns.len() != state.n_vars() {
            return Err(ImvError::dim("importance report", &[columns.len()], &[state.n_vars()]));
        }
        let t = state.window();
        let temporal = columns
            .iter()
            .enumerate()
            .map(|(v, c)| (c.clone(), state.temporal_importance.data()[v * t..(v + 1) * t].to_vec()))
            .collect();
        let ranking = rank_variables(state.var_importance.data())
            .into_iter()
            .map(|v| columns[v].clone())
            .collect();
        Ok(ImportanceReport {
            variables: columns.to_vec(),
            variable: state.var_importance.data().to_vec(),
            temporal,
            ranking,
        })
    }
}
