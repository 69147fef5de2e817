//! Shared oracles for integration tests: finite differences, a plain-loop
//! LSTM, and random model/instance draws.
#![allow(dead_code)]

use imv_core::cell::{CellConfig, GateParams, Variant};
use imv_core::mixture::HeadConfig;
use imv_core::model::ImvModel;
use imv_core::ndtape::Tape;
use imv_core::trainer::{optimized_loss_on, posterior_from_log_joint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative errors of near-zero derivatives.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// `(f(x+h) − f(x−h)) / 2h` for every coordinate of `x`.
pub fn numeric_grad(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let x0 = x[i];
            x[i] = x0 + FD_STEP;
            let up = f(x);
            x[i] = x0 - FD_STEP;
            let down = f(x);
            x[i] = x0;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Random point on the probability simplex with all entries positive.
pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -rng.random_range(1e-6..1.0f64).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// A model with every weight drawn uniformly from `[-scale, scale]`.
pub fn random_model(rng: &mut ChaCha8Rng, n: usize, d: usize, variant: Variant, scale: f64) -> ImvModel<f64> {
    let cell = CellConfig::new(n, d, variant);
    let head = HeadConfig::new(n, d);
    let mut m = ImvModel::init(cell, head, rng).unwrap();
    for t in m.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
    m
}

/// Optimized loss and its analytic gradient (flattened over all tensors),
/// with `q` computed at the current parameters and then held fixed.
pub fn analytic_objective(model: &ImvModel<f64>, window: &[f64], y: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new();
    let fp = model.forward(&mut tape, window, Some(y), true).unwrap();
    let q = posterior_from_log_joint(tape.data(fp.mix.log_joint.unwrap()));
    let loss = optimized_loss_on(&mut tape, &fp.mix, &q).unwrap();
    tape.backward(loss).unwrap();
    let grad = fp.params.iter().flat_map(|&v| tape.grad(v).to_vec()).collect();
    (tape.scalar(loss), grad, q)
}

/// `−Σ q (log density + log prior)` for fixed `q`, evaluated without a
/// gradient tape.
pub fn objective_fixed_q(model: &ImvModel<f64>, window: &[f64], y: f64, q: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let fp = model.forward(&mut tape, window, Some(y), false).unwrap();
    let lj = tape.data(fp.mix.log_joint.unwrap());
    -q.iter().zip(lj).map(|(a, b)| a * b).sum::<f64>()
}

pub fn flatten(model: &ImvModel<f64>) -> Vec<f64> {
    model.tensors().iter().flat_map(|t| t.data().to_vec()).collect()
}

pub fn unflatten(model: &mut ImvModel<f64>, flat: &[f64]) {
    let mut at = 0;
    for t in model.tensors_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[at..at + n]);
        at += n;
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Weights of a single-layer LSTM with input size `k` and hidden size `d`,
/// each gate as a dense `d×(k+d)` matrix over `[x ; h]`.
pub struct TextbookLstm {
    pub d: usize,
    pub k: usize,
    pub wi: Vec<f64>,
    pub wf: Vec<f64>,
    pub wo: Vec<f64>,
    pub wg: Vec<f64>,
    pub bi: Vec<f64>,
    pub bf: Vec<f64>,
    pub bo: Vec<f64>,
    pub bg: Vec<f64>,
}

impl TextbookLstm {
    /// Hidden states `h_1 … h_T` from zero state for inputs `xs[t]` of length `k`.
    pub fn run(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let (d, k) = (self.d, self.k);
        let mut h = vec![0.0; d];
        let mut c = vec![0.0; d];
        let mut out = Vec::new();
        for x in xs {
            let z: Vec<f64> = x.iter().chain(h.iter()).copied().collect();
            let affine = |w: &[f64], b: &[f64], r: usize| b[r] + (0..k + d).map(|j| w[r * (k + d) + j] * z[j]).sum::<f64>();
            let mut h_new = vec![0.0; d];
            for r in 0..d {
                let i = sigmoid(affine(&self.wi, &self.bi, r));
                let f = sigmoid(affine(&self.wf, &self.bf, r));
                let o = sigmoid(affine(&self.wo, &self.bo, r));
                let g = affine(&self.wg, &self.bg, r).tanh();
                c[r] = f * c[r] + i * g;
                h_new[r] = o * c[r].tanh();
            }
            h = h_new;
            out.push(h.clone());
        }
        out
    }

    /// Read the weights of a single-variable IMV-Full cell. The candidate
    /// uses `[U_j | W_j]`; gate rows are `(i, f, o)` blocks of the dense gate
    /// weight whose columns are `[x ; h]`.
    pub fn from_full_cell(p: &imv_core::cell::ImvCellParams<f64>) -> Self {
        let c = p.config;
        assert_eq!((c.n_vars, c.variant), (1, Variant::Full));
        let (d, k) = (c.per_var_dim, c.input_dim_per_var);
        let GateParams::Full { w, b } = &p.gates else { unreachable!() };
        let rows = |g: usize| w.data()[g * d * (k + d)..(g + 1) * d * (k + d)].to_vec();
        let mut wg = Vec::with_capacity(d * (k + d));
        for r in 0..d {
            wg.extend_from_slice(&p.u_j.data()[r * k..(r + 1) * k]);
            wg.extend_from_slice(&p.w_j.data()[r * d..(r + 1) * d]);
        }
        let bias = |g: usize| b.data()[g * d..(g + 1) * d].to_vec();
        TextbookLstm {
            d,
            k,
            wi: rows(0),
            wf: rows(1),
            wo: rows(2),
            wg,
            bi: bias(0),
            bf: bias(1),
            bo: bias(2),
            bg: p.b_j.data().to_vec(),
        }
    }
}
