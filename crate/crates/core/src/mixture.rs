//! Mixture-attention head.
//!
//! Given the hidden matrices `h̃_1 … h̃_T` of a window, each variable `n`
//! gets a temporal attention `α^n = softmax_t f_n(h_t^n)` and a context
//! `g^n = Σ_t α_t^n h_t^n`. The joint summary `h_T^n ⊕ g^n` feeds
//!
//! * a shared scoring net `f`, softmaxed over variables into the prior
//!   `Pr(z = n)`, and
//! * a per-variable net `φ_n` producing the Gaussian component `(μ_n, σ_n)`
//!   with `σ_n = softplus(s_n) + σ_min`.
//!
//! All nets have one tanh hidden layer of width `a`. Scalar output biases of
//! `f_n` and `f` are omitted: a constant added to every logit of a softmax
//! has no effect.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ImvError, Result};
use crate::ndtape::{NdArray, Tape, Var};
use crate::scalar::{log_sum_exp, Scalar};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub n_vars: usize,
    pub per_var_dim: usize,
    /// Hidden width `a` of every head net.
    pub hidden: usize,
    pub sigma_min: f64,
}

impl HeadConfig {
    pub fn new(n_vars: usize, per_var_dim: usize) -> Self {
        HeadConfig {
            n_vars,
            per_var_dim,
            hidden: per_var_dim,
            sigma_min: 1e-3,
        }
    }
}

/// Parameters of all head nets, stacked over variables where per-variable.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<S> {
    pub config: HeadConfig,
    /// `f_n` hidden layer: `[N×a×d]`, bias `[N×a]`, output `[N×1×a]`.
    pub score_w: NdArray<S>,
    pub score_b: NdArray<S>,
    pub score_v: NdArray<S>,
    /// Shared `f`: `[2d×a]`, bias `[a]`, output `[a×1]`.
    pub prior_w: NdArray<S>,
    pub prior_b: NdArray<S>,
    pub prior_v: NdArray<S>,
    /// `φ_n`: `[N×a×2d]`, `[N×a]`, then `[N×2×a]`, `[N×2]` giving `(μ, s)`.
    pub out_w1: NdArray<S>,
    pub out_b1: NdArray<S>,
    pub out_w2: NdArray<S>,
    pub out_b2: NdArray<S>,
}

impl<S: Scalar> AttentionParams<S> {
    pub fn zeros(config: HeadConfig) -> Self {
        let (n, d, a) = (config.n_vars, config.per_var_dim, config.hidden);
        AttentionParams {
            config,
            score_w: NdArray::zeros(&[n, a, d]),
            score_b: NdArray::zeros(&[n, a]),
            score_v: NdArray::zeros(&[n, 1, a]),
            prior_w: NdArray::zeros(&[2 * d, a]),
            prior_b: NdArray::zeros(&[a]),
            prior_v: NdArray::zeros(&[a, 1]),
            out_w1: NdArray::zeros(&[n, a, 2 * d]),
            out_b1: NdArray::zeros(&[n, a]),
            out_w2: NdArray::zeros(&[n, 2, a]),
            out_b2: NdArray::zeros(&[n, 2]),
        }
    }

    /// Weights uniform in `[-1/√fan_in, 1/√fan_in]`, biases zero.
    pub fn init<R: Rng + ?Sized>(config: HeadConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(config);
        let (d, a) = (config.per_var_dim as f64, config.hidden as f64);
        let mut fill = |t: &mut NdArray<S>, fan_in: f64| {
            let bound = 1.0 / fan_in.sqrt();
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = S::lit(rng.random_range(-bound..=bound)));
        };
        fill(&mut p.score_w, d);
        fill(&mut p.score_v, a);
        fill(&mut p.prior_w, 2.0 * d);
        fill(&mut p.prior_v, a);
        fill(&mut p.out_w1, 2.0 * d);
        fill(&mut p.out_w2, a);
        p
    }

    /// Internal tensor names in canonical order.
    pub fn named_tensors(&self) -> Vec<(&'static str, &NdArray<S>)> {
        vec![
            ("score_w", &self.score_w),
            ("score_b", &self.score_b),
            ("score_v", &self.score_v),
            ("prior_w", &self.prior_w),
            ("prior_b", &self.prior_b),
            ("prior_v", &self.prior_v),
            ("out_w1", &self.out_w1),
            ("out_b1", &self.out_b1),
            ("out_w2", &self.out_w2),
            ("out_b2", &self.out_b2),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut NdArray<S>> {
        vec![
            &mut self.score_w,
            &mut self.score_b,
            &mut self.score_v,
            &mut self.prior_w,
            &mut self.prior_b,
            &mut self.prior_v,
            &mut self.out_w1,
            &mut self.out_b1,
            &mut self.out_w2,
            &mut self.out_b2,
        ]
    }

    pub fn register(&self, tape: &mut Tape<S>, tracked: bool) -> HeadVars {
        let vars: Vec<Var> = self
            .named_tensors()
            .into_iter()
            .map(|(_, t)| if tracked { tape.param(t) } else { tape.constant(t) })
            .collect();
        HeadVars {
            config: self.config,
            score_w: vars[0],
            score_b: vars[1],
            score_v: vars[2],
            prior_w: vars[3],
            prior_b: vars[4],
            prior_v: vars[5],
            out_w1: vars[6],
            out_b1: vars[7],
            out_w2: vars[8],
            out_b2: vars[9],
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub config: HeadConfig,
    pub score_w: Var,
    pub score_b: Var,
    pub score_v: Var,
    pub prior_w: Var,
    pub prior_b: Var,
    pub prior_v: Var,
    pub out_w1: Var,
    pub out_b1: Var,
    pub out_w2: Var,
    pub out_b2: Var,
}

impl HeadVars {
    pub fn handles(&self) -> Vec<Var> {
        vec![
            self.score_w,
            self.score_b,
            self.score_v,
            self.prior_w,
            self.prior_b,
            self.prior_v,
            self.out_w1,
            self.out_b1,
            self.out_w2,
            self.out_b2,
        ]
    }
}

/// Head outputs on a tape.
#[derive(Clone, Copy, Debug)]
pub struct MixtureVars {
    /// `[N×T]` temporal attention.
    pub alpha: Var,
    /// `[N×d]` contexts.
    pub g: Var,
    pub prior: Var,
    pub log_prior: Var,
    pub mu: Var,
    pub sigma: Var,
    /// Component log-densities and `log prior + log density`, when the target is known.
    pub log_density: Option<Var>,
    pub log_joint: Option<Var>,
    /// `log p(y | X)`.
    pub log_lik: Option<Var>,
}

/// Per-variable temporal scores `f_n(h_t^n)` for one step, `[N×1]`.
fn temporal_scores_on<S: Scalar>(tape: &mut Tape<S>, p: &HeadVars, h: Var) -> Result<Var> {
    let z = tape.tensor_dot(p.score_w, h)?;
    let z = tape.add(z, p.score_b)?;
    let z = tape.tanh(z);
    tape.tensor_dot(p.score_v, z)
}

/// Temporal attention `[N×T]` and contexts `[N×d]` for all variables.
pub fn temporal_attention_on<S: Scalar>(tape: &mut Tape<S>, p: &HeadVars, hs: &[Var]) -> Result<(Var, Var)> {
    if hs.is_empty() {
        return Err(ImvError::Argument("temporal attention over zero steps".into()));
    }
    let (n, d, t) = (p.config.n_vars, p.config.per_var_dim, hs.len());
    let mut scores = Vec::with_capacity(t);
    let mut cols = Vec::with_capacity(t);
    for &h in hs {
        scores.push(temporal_scores_on(tape, p, h)?);
        cols.push(tape.reshape(h, &[n, d, 1])?);
    }
    let scores = tape.concat(&scores, 1)?;
    let alpha = tape.softmax(scores);
    // stacked[n] is the d×T matrix of variable n's hidden states.
    let stacked = tape.concat(&cols, 2)?;
    let g = tape.tensor_dot(stacked, alpha)?;
    Ok((alpha, g))
}

/// Log-prior over variables from joint summaries `[N×2d]`.
pub fn variable_log_prior_on<S: Scalar>(tape: &mut Tape<S>, p: &HeadVars, joint: Var) -> Result<Var> {
    let n = p.config.n_vars;
    let z = tape.matmul(joint, p.prior_w)?;
    let z = tape.add_rows(z, p.prior_b)?;
    let z = tape.tanh(z);
    let s = tape.matmul(z, p.prior_v)?;
    let s = tape.reshape(s, &[n])?;
    Ok(tape.log_softmax(s))
}

/// Full head forward. With `y` given, component densities and the mixture
/// log-likelihood are recorded as well.
pub fn forward_head_on<S: Scalar>(tape: &mut Tape<S>, p: &HeadVars, hs: &[Var], y: Option<S>) -> Result<MixtureVars> {
    let n = p.config.n_vars;
    let (alpha, g) = temporal_attention_on(tape, p, hs)?;
    let h_last = *hs.last().expect("non-empty, checked above");
    let joint = tape.concat(&[h_last, g], 1)?;

    let log_prior = variable_log_prior_on(tape, p, joint)?;
    let prior = tape.softmax(log_prior);

    let z = tape.tensor_dot(p.out_w1, joint)?;
    let z = tape.add(z, p.out_b1)?;
    let z = tape.tanh(z);
    let out = tape.tensor_dot(p.out_w2, z)?;
    let out = tape.add(out, p.out_b2)?;
    let mu = tape.slice_last(out, 0, 1)?;
    let mu = tape.reshape(mu, &[n])?;
    let s = tape.slice_last(out, 1, 1)?;
    let s = tape.reshape(s, &[n])?;
    let s = tape.softplus(s);
    let sigma = tape.affine(s, S::one(), S::lit(p.config.sigma_min));

    let (log_density, log_joint, log_lik) = match y {
        Some(y) => {
            let ld = tape.gauss_log_pdf(mu, sigma, y)?;
            let lj = tape.add(ld, log_prior)?;
            let ll = tape.log_sum_exp(lj);
            (Some(ld), Some(lj), Some(ll))
        }
        None => (None, None, None),
    };
    Ok(MixtureVars {
        alpha,
        g,
        prior,
        log_prior,
        mu,
        sigma,
        log_density,
        log_joint,
        log_lik,
    })
}

/// Values of one head evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureOutput<S> {
    pub alpha: NdArray<S>,
    pub g: NdArray<S>,
    pub prior: NdArray<S>,
    pub mu: NdArray<S>,
    pub sigma: NdArray<S>,
    /// `log p(y | X)` when the target was supplied.
    pub log_lik: Option<S>,
}

impl<S: Scalar> MixtureOutput<S> {
    pub fn read(tape: &Tape<S>, v: &MixtureVars) -> Self {
        MixtureOutput {
            alpha: tape.value(v.alpha),
            g: tape.value(v.g),
            prior: tape.value(v.prior),
            mu: tape.value(v.mu),
            sigma: tape.value(v.sigma),
            log_lik: v.log_lik.map(|l| tape.scalar(l)),
        }
    }

    pub fn prediction(&self) -> S {
        predict(self.prior.data(), self.mu.data())
    }
}

/// Attention weights `softmax(scores)` and the weighted sum of `hs`.
pub fn attend<S: Scalar>(scores: &[S], hs: &[&[S]]) -> Result<(Vec<S>, Vec<S>)> {
    if scores.len() != hs.len() {
        return Err(ImvError::dim("attend", &[scores.len()], &[hs.len()]));
    }
    let alpha = crate::ndtape::softmax(scores)?;
    let d = hs[0].len();
    let mut g = vec![S::zero(); d];
    for (&a, h) in alpha.iter().zip(hs) {
        if h.len() != d {
            return Err(ImvError::dim("attend", &[d], &[h.len()]));
        }
        for (gi, &hi) in g.iter_mut().zip(*h) {
            *gi += a * hi;
        }
    }
    Ok((alpha, g))
}

/// Temporal attention of variable `n` over its hidden states `hs_n [T×d]`.
pub fn temporal_attention<S: Scalar>(params: &AttentionParams<S>, n: usize, hs_n: &NdArray<S>) -> Result<(Vec<S>, Vec<S>)> {
    let cfg = params.config;
    if n >= cfg.n_vars {
        return Err(ImvError::Argument(format!("variable {n} out of range")));
    }
    if hs_n.ndim() != 2 || hs_n.shape()[1] != cfg.per_var_dim {
        return Err(ImvError::dim("temporal_attention", hs_n.shape(), &[0, cfg.per_var_dim]));
    }
    let (a, d) = (cfg.hidden, cfg.per_var_dim);
    let w = &params.score_w.data()[n * a * d..(n + 1) * a * d];
    let b = &params.score_b.data()[n * a..(n + 1) * a];
    let v = &params.score_v.data()[n * a..(n + 1) * a];
    let rows: Vec<&[S]> = (0..hs_n.shape()[0]).map(|t| hs_n.row(t)).collect();
    let scores: Vec<S> = rows.iter().map(|h| one_hidden_layer(w, b, v, h)).collect();
    attend(&scores, &rows)
}

fn one_hidden_layer<S: Scalar>(w: &[S], b: &[S], v: &[S], x: &[S]) -> S {
    b.iter()
        .zip(v)
        .enumerate()
        .map(|(i, (&bi, &vi))| {
            let row = &w[i * x.len()..(i + 1) * x.len()];
            let z: S = row.iter().zip(x).map(|(&a, &b)| a * b).sum::<S>() + bi;
            vi * z.tanh()
        })
        .sum()
}

/// Prior over variables from their joint summaries `h_T^n ⊕ g^n` (`[N×2d]`).
pub fn variable_prior<S: Scalar>(params: &AttentionParams<S>, joint: &NdArray<S>) -> Result<Vec<S>> {
    let cfg = params.config;
    let expect = [cfg.n_vars, 2 * cfg.per_var_dim];
    if joint.shape() != expect {
        return Err(ImvError::dim("variable_prior", joint.shape(), &expect));
    }
    let mut tape = Tape::new();
    let hv = params.register(&mut tape, false);
    let j = tape.constant(joint);
    let lp = variable_log_prior_on(&mut tape, &hv, j)?;
    let prior = tape.softmax(lp);
    Ok(tape.data(prior).to_vec())
}

/// `ln N(y; μ, σ²)` without argument checks.
#[inline]
pub fn gaussian_log_pdf<S: Scalar>(y: S, mu: S, sigma: S) -> S {
    let z = (y - mu) / sigma;
    -S::lit(LN_SQRT_2PI) - sigma.ln() - S::lit(0.5) * z * z
}

/// Component log-density; `sigma` must respect the configured floor.
pub fn component_density<S: Scalar>(y: S, mu: S, sigma: S, sigma_min: S) -> Result<S> {
    if !(sigma >= sigma_min) || sigma_min <= S::zero() {
        return Err(ImvError::Contract(format!(
            "sigma {sigma} below floor {sigma_min}"
        )));
    }
    Ok(gaussian_log_pdf(y, mu, sigma))
}

/// `ln Σ_n prior_n N(y; μ_n, σ_n²)`, evaluated in log space.
pub fn mixture_log_likelihood<S: Scalar>(y: S, prior: &[S], mu: &[S], sigma: &[S]) -> S {
    let terms: Vec<S> = prior
        .iter()
        .zip(mu)
        .zip(sigma)
        .map(|((&p, &m), &s)| p.ln() + gaussian_log_pdf(y, m, s))
        .collect();
    log_sum_exp(&terms)
}

/// Point forecast `Σ_n μ_n prior_n`.
pub fn predict<S: Scalar>(prior: &[S], mu: &[S]) -> S {
    prior.iter().zip(mu).map(|(&p, &m)| p * m).sum()
}

/// Evaluate the head on hidden matrices `[N×d]`, optionally scoring `y`.
pub fn forward_head<S: Scalar>(hidden_seq: &[NdArray<S>], params: &AttentionParams<S>, y: Option<S>) -> Result<MixtureOutput<S>> {
    let cfg = params.config;
    let mut tape = Tape::new();
    let hv = params.register(&mut tape, false);
    let mut hs = Vec::with_capacity(hidden_seq.len());
    for h in hidden_seq {
        if h.shape() != [cfg.n_vars, cfg.per_var_dim] {
            return Err(ImvError::dim("forward_head", h.shape(), &[cfg.n_vars, cfg.per_var_dim]));
        }
        hs.push(tape.constant(h));
    }
    let mv = forward_head_on(&mut tape, &hv, &hs, y)?;
    Ok(MixtureOutput::read(&tape, &mv))
}
