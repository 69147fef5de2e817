//! EM training of the forecaster.
//!
//! Each epoch alternates an E-step, which computes the posterior `q` over
//! variable components for every instance with the weights fixed, and an
//! M-step, which takes Adam steps on `−Σ q (log density + log prior)` with `q`
//! held constant. After the epoch the variable importance `I` is the mean
//! of all posteriors and each temporal importance row `T^n` is the mean of
//! the temporal attention rows of variable `n`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell::{CellConfig, Variant};
use crate::checkpoint::{Checkpoint, CheckpointConfig, TrainingMeta};
use crate::dataio::{Split, WindowedDataset};
use crate::error::{ImvError, Result};
use crate::mixture::{gaussian_log_pdf, HeadConfig, MixtureOutput, MixtureVars};
use crate::model::ImvModel;
use crate::ndtape::{NdArray, Tape, Var};
use crate::scalar::{log_sum_exp, Scalar};

/// Floor applied to `I` inside `log I`.
pub const IMPORTANCE_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Coefficient `λ` of the penalty `λ/2 · Σ p²` over all weights.
    pub l2_coeff: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 50,
            l2_coeff: 1e-4,
            grad_clip_norm: Some(5.0),
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            out.push("batch_size must be at least 1".into());
        }
        if !(self.l2_coeff >= 0.0 && self.l2_coeff.is_finite()) {
            out.push(format!("l2_coeff must be non-negative, got {}", self.l2_coeff));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                out.push(format!("grad_clip_norm must be positive, got {c}"));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                out.push(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            out.push(format!("eps must be positive, got {}", self.eps));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(ImvError::Argument(p.join("; ")))
        }
    }
}

/// Architecture choices that are not implied by the data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub variant: Variant,
    pub per_var_dim: usize,
    /// Width of the head nets; defaults to `per_var_dim`.
    pub head_hidden: Option<usize>,
    pub sigma_min: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            variant: Variant::Tensor,
            per_var_dim: 8,
            head_hidden: None,
            sigma_min: 1e-3,
        }
    }
}

impl ArchConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.per_var_dim == 0 {
            out.push("per_var_dim must be at least 1".to_string());
        }
        if self.head_hidden == Some(0) {
            out.push("head_hidden must be at least 1".to_string());
        }
        if !(self.sigma_min > 0.0 && self.sigma_min.is_finite()) {
            out.push(format!("sigma_min must be positive, got {}", self.sigma_min));
        }
        out
    }

    pub fn configs(&self, n_vars: usize) -> (CellConfig, HeadConfig) {
        let cell = CellConfig::new(n_vars, self.per_var_dim, self.variant);
        let mut head = HeadConfig::new(n_vars, self.per_var_dim);
        if let Some(a) = self.head_hidden {
            head.hidden = a;
        }
        head.sigma_min = self.sigma_min;
        (cell, head)
    }
}

/// Variable importance `I` and temporal importance rows `T^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceState {
    /// `[N]`, a probability vector.
    pub var_importance: NdArray<f64>,
    /// `[N×T]`, every row a probability vector over window positions.
    pub temporal_importance: NdArray<f64>,
}

impl ImportanceState {
    pub fn uniform(n_vars: usize, window: usize) -> Result<Self> {
        if n_vars == 0 || window == 0 {
            return Err(ImvError::Argument(format!(
                "importance needs N ≥ 1 and T ≥ 1, got {n_vars} and {window}"
            )));
        }
        Ok(ImportanceState {
            var_importance: NdArray::full(&[n_vars], 1.0 / n_vars as f64),
            temporal_importance: NdArray::full(&[n_vars, window], 1.0 / window as f64),
        })
    }

    pub fn n_vars(&self) -> usize {
        self.var_importance.len()
    }

    pub fn window(&self) -> usize {
        self.temporal_importance.shape()[1]
    }

    /// Largest deviation from the simplex over `I` and all `T^n` rows.
    pub fn simplex_error(&self) -> f64 {
        let mut err = simplex_deviation(self.var_importance.data());
        for row in self.temporal_importance.data().chunks_exact(self.window()) {
            err = err.max(simplex_deviation(row));
        }
        err
    }
}

/// `|Σ p − 1|`, or infinity if any entry is negative or not finite.
pub fn simplex_deviation(p: &[f64]) -> f64 {
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return f64::INFINITY;
    }
    (p.iter().sum::<f64>() - 1.0).abs()
}

/// Posterior over components given log joint terms `log prior + log density`.
pub fn posterior_from_log_joint<S: Scalar>(log_joint: &[S]) -> Vec<S> {
    let z = log_sum_exp(log_joint);
    if !z.is_finite() {
        let u = S::one() / S::lit(log_joint.len() as f64);
        return vec![u; log_joint.len()];
    }
    log_joint.iter().map(|&l| (l - z).exp()).collect()
}

fn log_joint<S: Scalar>(mix: &MixtureOutput<S>, y: S) -> Vec<S> {
    let (p, mu, sigma) = (mix.prior.data(), mix.mu.data(), mix.sigma.data());
    (0..p.len())
        .map(|n| p[n].ln() + gaussian_log_pdf(y, mu[n], sigma[n]))
        .collect()
}

/// Responsibilities `q_n ∝ prior_n · N(y; μ_n, σ_n²)`.
pub fn posterior<S: Scalar>(mix: &MixtureOutput<S>, y: S) -> Vec<S> {
    posterior_from_log_joint(&log_joint(mix, y))
}

/// The three parts of the per-instance loss, each already negated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms<S> {
    pub density: S,
    pub prior: S,
    pub importance: S,
}

impl<S: Scalar> LossTerms<S> {
    pub fn total(&self) -> S {
        self.density + self.prior + self.importance
    }
}

/// Split loss `−Σ q log N − Σ q log prior − Σ q log I`. Terms with `q_n = 0`
/// contribute nothing.
pub fn instance_loss_terms<S: Scalar>(mix: &MixtureOutput<S>, y: S, q: &[S], importance: &[f64]) -> Result<LossTerms<S>> {
    let n = mix.prior.len();
    if q.len() != n || importance.len() != n {
        return Err(ImvError::dim("instance_loss", &[q.len(), importance.len()], &[n, n]));
    }
    let (p, mu, sigma) = (mix.prior.data(), mix.mu.data(), mix.sigma.data());
    let mut t = LossTerms {
        density: S::zero(),
        prior: S::zero(),
        importance: S::zero(),
    };
    for i in 0..n {
        if q[i] == S::zero() {
            continue;
        }
        t.density -= q[i] * gaussian_log_pdf(y, mu[i], sigma[i]);
        t.prior -= q[i] * p[i].ln();
        t.importance -= q[i] * S::lit(importance[i].max(IMPORTANCE_FLOOR).ln());
    }
    Ok(t)
}

/// Total per-instance loss; see [`instance_loss_terms`].
pub fn instance_loss<S: Scalar>(mix: &MixtureOutput<S>, y: S, q: &[S], importance: &[f64]) -> Result<S> {
    Ok(instance_loss_terms(mix, y, q, importance)?.total())
}

/// Record the optimized part of the loss, `−Σ q (log density + log prior)`,
/// with `q` entering as a constant.
pub fn optimized_loss_on<S: Scalar>(tape: &mut Tape<S>, mix: &MixtureVars, q: &[S]) -> Result<Var> {
    let lj = mix
        .log_joint
        .ok_or_else(|| ImvError::Contract("head was recorded without a target".into()))?;
    let qv = tape.constant_from(&[q.len()], q)?;
    let weighted = tape.mul(qv, lj)?;
    let s = tape.sum(weighted);
    Ok(tape.affine(s, -S::one(), S::zero()))
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(sizes: &[usize]) -> Self {
        AdamState {
            m: sizes.iter().map(|&n| vec![S::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![S::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn for_model(model: &ImvModel<S>) -> Self {
        let sizes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
        Self::new(&sizes)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One Adam update. The L2 gradient is added to `grads` first, then the
/// global norm is clipped. Returns the gradient norm before clipping.
pub fn adam_step<S: Scalar>(
    params: &mut [&mut NdArray<S>],
    grads: &mut [Vec<S>],
    config: &TrainConfig,
    state: &mut AdamState<S>,
) -> Result<f64> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(ImvError::Contract(format!(
            "adam_step: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads.iter()) {
        if p.len() != g.len() {
            return Err(ImvError::dim("adam_step", p.shape(), &[g.len()]));
        }
    }
    let l2 = S::lit(config.l2_coeff);
    if config.l2_coeff > 0.0 {
        for (p, g) in params.iter().zip(grads.iter_mut()) {
            for (gi, &pi) in g.iter_mut().zip(p.data()) {
                *gi += l2 * pi;
            }
        }
    }
    let norm = grads
        .iter()
        .flatten()
        .map(|g| {
            let g = g.to_f64_lossy();
            g * g
        })
        .sum::<f64>()
        .sqrt();
    if let Some(c) = config.grad_clip_norm {
        if norm > c {
            let scale = S::lit(c / norm);
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (S::lit(config.beta1), S::lit(config.beta2));
    let c1 = S::one() - b1.powi(t);
    let c2 = S::one() - b2.powi(t);
    let (lr, eps) = (S::lit(config.learning_rate), S::lit(config.eps));
    for (k, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, pi) in p.data_mut().iter_mut().enumerate() {
            let g = grads[k][i];
            m[i] = b1 * m[i] + (S::one() - b1) * g;
            v[i] = b2 * v[i] + (S::one() - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(norm)
}

/// Summary of one EM epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean full loss, including the `−Σ q log I` term, over training windows.
    pub mean_loss: f64,
    /// Mean mixture negative log-likelihood over training windows.
    pub mean_nll: f64,
    /// Largest simplex deviation seen in attention rows, priors, posteriors
    /// and the updated importance vectors.
    pub simplex_error: f64,
}

/// Everything that evolves across epochs.
#[derive(Debug)]
pub struct EmState<S> {
    pub model: ImvModel<S>,
    pub importance: ImportanceState,
    pub adam: AdamState<S>,
    rng: ChaCha8Rng,
    epoch: usize,
    tape: Tape<S>,
    buf: Vec<S>,
}

impl<S: Scalar> EmState<S> {
    /// Initialise a model from `seed`; the same generator then drives batch
    /// shuffling.
    pub fn init(arch: &ArchConfig, n_vars: usize, window: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cell, head) = arch.configs(n_vars);
        let model = ImvModel::init(cell, head, &mut rng)?;
        Ok(Self::from_parts(model, ImportanceState::uniform(n_vars, window)?, rng))
    }

    pub fn from_parts(model: ImvModel<S>, importance: ImportanceState, rng: ChaCha8Rng) -> Self {
        EmState {
            adam: AdamState::for_model(&model),
            model,
            importance,
            rng,
            epoch: 0,
            tape: Tape::new(),
            buf: Vec::new(),
        }
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

fn load_window<S: Scalar>(buf: &mut Vec<S>, src: &[f64]) {
    buf.clear();
    buf.extend(src.iter().map(|&v| S::lit(v)));
}

/// Run one EM epoch over the training windows of `data`.
pub fn em_epoch<S: Scalar>(state: &mut EmState<S>, data: &WindowedDataset, config: &TrainConfig) -> Result<EpochStats> {
    config.validate()?;
    let (n, t) = (state.model.n_vars(), data.window);
    if data.n_vars() != n || state.importance.window() != t || state.importance.n_vars() != n {
        return Err(ImvError::Contract(format!(
            "dataset has {} variables and window {}, model expects {} and {}",
            data.n_vars(),
            t,
            n,
            state.importance.window()
        )));
    }
    let mut order = data.indices(Split::Train);
    if order.is_empty() {
        return Err(ImvError::Data("no training windows".into()));
    }
    order.shuffle(&mut state.rng);
    let epoch = state.epoch + 1;

    let importance: Vec<f64> = state.importance.var_importance.data().to_vec();
    let log_importance: Vec<f64> = importance.iter().map(|&i| i.max(IMPORTANCE_FLOOR).ln()).collect();
    let mut sum_q = vec![0.0_f64; n];
    let mut sum_alpha = vec![0.0_f64; n * t];
    let (mut loss_sum, mut nll_sum, mut simplex) = (0.0_f64, 0.0_f64, 0.0_f64);
    let mut grads: Vec<Vec<S>> = state.model.tensors().iter().map(|p| vec![S::zero(); p.len()]).collect();

    for (b, batch) in order.chunks(config.batch_size).enumerate() {
        let non_finite = ImvError::NonFinite { epoch, batch: b };
        grads.iter_mut().flatten().for_each(|g| *g = S::zero());
        for &i in batch {
            let tape = &mut state.tape;
            tape.clear();
            load_window(&mut state.buf, data.input(i));
            let y = S::lit(data.target(i));
            let fp = state.model.forward(tape, &state.buf, Some(y), true)?;
            let lj_var = fp.mix.log_joint.expect("target supplied");
            let lj = tape.data(lj_var);
            let q = posterior_from_log_joint(lj);

            let nll = -tape.scalar(fp.mix.log_lik.expect("target supplied")).to_f64_lossy();
            let mut loss = 0.0;
            for k in 0..n {
                let qk = q[k].to_f64_lossy();
                if qk > 0.0 {
                    loss -= qk * (lj[k].to_f64_lossy() + log_importance[k]);
                }
            }
            if !loss.is_finite() || !nll.is_finite() {
                return Err(non_finite);
            }
            loss_sum += loss;
            nll_sum += nll;

            let qf: Vec<f64> = q.iter().map(|v| v.to_f64_lossy()).collect();
            simplex = simplex.max(simplex_deviation(&qf));
            let prior: Vec<f64> = tape.data(fp.mix.prior).iter().map(|v| v.to_f64_lossy()).collect();
            simplex = simplex.max(simplex_deviation(&prior));
            for (acc, v) in sum_q.iter_mut().zip(&qf) {
                *acc += v;
            }
            let alpha: Vec<f64> = tape.data(fp.mix.alpha).iter().map(|v| v.to_f64_lossy()).collect();
            for row in alpha.chunks_exact(t) {
                simplex = simplex.max(simplex_deviation(row));
            }
            for (acc, v) in sum_alpha.iter_mut().zip(&alpha) {
                *acc += v;
            }

            let objective = optimized_loss_on(tape, &fp.mix, &q)?;
            tape.backward(objective)?;
            for (g, &v) in grads.iter_mut().zip(&fp.params) {
                for (gi, &d) in g.iter_mut().zip(tape.grad(v)) {
                    *gi += d;
                }
            }
        }
        let scale = S::one() / S::lit(batch.len() as f64);
        for g in grads.iter_mut().flatten() {
            *g *= scale;
            if !g.is_finite() {
                return Err(non_finite);
            }
        }
        let mut params = state.model.tensors_mut();
        adam_step(&mut params, &mut grads, config, &mut state.adam)?;
    }

    let m = order.len() as f64;
    state.importance = ImportanceState {
        var_importance: NdArray::new(vec![n], sum_q.iter().map(|s| s / m).collect())?,
        temporal_importance: NdArray::new(vec![n, t], sum_alpha.iter().map(|s| s / m).collect())?,
    };
    state.epoch = epoch;
    Ok(EpochStats {
        epoch,
        mean_loss: loss_sum / m,
        mean_nll: nll_sum / m,
        simplex_error: simplex.max(state.importance.simplex_error()),
    })
}

/// Point forecasts for the given windows, in the dataset's original units.
pub fn predict_windows<S: Scalar>(model: &ImvModel<S>, data: &WindowedDataset, indices: &[usize]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let mut buf = Vec::new();
    indices
        .iter()
        .map(|&i| {
            load_window(&mut buf, data.input(i));
            let p = model.predict_with(&mut tape, &buf)?.to_f64_lossy();
            Ok(to_original(data, p))
        })
        .collect()
}

/// Targets of the given windows, in original units.
pub fn targets_original(data: &WindowedDataset, indices: &[usize]) -> Vec<f64> {
    indices.iter().map(|&i| to_original(data, data.target(i))).collect()
}

fn to_original(data: &WindowedDataset, v: f64) -> f64 {
    match &data.standardization {
        Some(s) => s.target_to_original(v),
        None => v,
    }
}

fn split_rmse<S: Scalar>(model: &ImvModel<S>, data: &WindowedDataset, split: Split) -> Result<Option<f64>> {
    let idx = data.indices(split);
    if idx.is_empty() {
        return Ok(None);
    }
    let pred = predict_windows(model, data, &idx)?;
    let truth = targets_original(data, &idx);
    crate::evalx::rmse(&truth, &pred).map(Some)
}

/// Per-epoch record kept by [`fit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    #[serde(flatten)]
    pub stats: EpochStats,
    /// Validation RMSE in original units, if there is a validation split.
    pub val_rmse: Option<f64>,
    pub var_importance: Vec<f64>,
}

/// Result of [`fit`]: the best checkpoint, its model and the full history.
#[derive(Clone, Debug)]
pub struct FitOutcome<S> {
    pub checkpoint: Checkpoint,
    pub model: ImvModel<S>,
    pub importance: ImportanceState,
    pub history: Vec<EpochRecord>,
}

/// Train on `data` and keep the epoch with the lowest validation RMSE
/// (the last epoch if there is no validation split).
pub fn fit<S: Scalar>(data: &WindowedDataset, arch: &ArchConfig, config: &TrainConfig) -> Result<FitOutcome<S>> {
    fit_with(data, arch, config, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with<S: Scalar>(
    data: &WindowedDataset,
    arch: &ArchConfig,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome<S>> {
    config.validate()?;
    if data.is_empty() {
        return Err(ImvError::Data("empty dataset".into()));
    }
    let mut state: EmState<S> = EmState::init(arch, data.n_vars(), data.window, config.seed)?;
    let mut best = (state.model.clone(), state.importance.clone(), 0_usize, None::<f64>);
    let mut history = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        let stats = em_epoch(&mut state, data, config)?;
        let val_rmse = split_rmse(&state.model, data, Split::Val)?;
        let improved = match (val_rmse, best.3) {
            (Some(v), Some(b)) => v < b,
            (Some(_), None) => true,
            (None, _) => true,
        };
        if improved {
            best = (state.model.clone(), state.importance.clone(), stats.epoch, val_rmse);
        }
        let record = EpochRecord {
            stats,
            val_rmse,
            var_importance: state.importance.var_importance.data().to_vec(),
        };
        on_epoch(&record);
        history.push(record);
    }

    let (model, importance, epoch, val_rmse) = best;
    let meta = TrainingMeta {
        seed: config.seed,
        epoch,
        val_rmse,
        loss_history: history.iter().map(|r| r.stats.mean_loss).collect(),
        val_history: history.iter().map(|r| r.val_rmse).collect(),
    };
    let cfg = CheckpointConfig {
        columns: data.columns.clone(),
        window: data.window,
        splits: data.fractions,
        cell: model.cell_config(),
        head: model.head_config(),
        train: config.clone(),
    };
    let checkpoint = Checkpoint::from_model(&model, cfg, &importance, data.standardization.clone(), meta)?;
    Ok(FitOutcome {
        checkpoint,
        model,
        importance,
        history,
    })
}
