//! IMV-Full and IMV-Tensor recurrent cells.
//!
//! Both cells keep a hidden state *matrix* `h̃ [N×d]` whose row `n` only ever
//! receives information from input variable `n` through the candidate update
//! `j̃ = tanh(𝓦_j ⊛ h̃ + 𝓤_j ⊛ x + b_j)`. They differ in how gates are formed:
//!
//! * **Full**: one dense gate layer over `x ⊕ vec(h̃)`, memory `c` is a vector
//!   of length `D = N·d` in column-major `vec` order.
//! * **Tensor**: gates are tensor-dot products as well, so every gate and the
//!   memory are `N×d` matrices and the cell is `N` independent LSTMs.
//!
//! Stacked gate tensors are ordered `(input, forget, output)`. In the Full
//! cell's dense weight, columns are `[x (N·d₀, variable-major) ; vec(h̃) (D)]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ImvError, Result};
use crate::ndtape::{NdArray, Tape, Var};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    Tensor,
}

impl std::str::FromStr for Variant {
    type Err = ImvError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Variant::Full),
            "tensor" => Ok(Variant::Tensor),
            other => Err(ImvError::Argument(format!(
                "unknown variant {other:?} (expected full or tensor)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::Tensor => "tensor",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellConfig {
    /// Number of input variables `N`, target channel included.
    pub n_vars: usize,
    /// Hidden units per variable `d`.
    pub per_var_dim: usize,
    /// Dimension `d₀` of each variable's input at one time step.
    pub input_dim_per_var: usize,
    pub variant: Variant,
}

impl CellConfig {
    pub fn new(n_vars: usize, per_var_dim: usize, variant: Variant) -> Self {
        CellConfig {
            n_vars,
            per_var_dim,
            input_dim_per_var: 1,
            variant,
        }
    }

    /// Layer size `D = N·d`.
    pub fn layer_size(&self) -> usize {
        self.n_vars * self.per_var_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vars == 0 || self.per_var_dim == 0 || self.input_dim_per_var == 0 {
            return Err(ImvError::Argument(format!(
                "cell extents must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Gate parameters for the configured variant.
#[derive(Clone, Debug, PartialEq)]
pub enum GateParams<S> {
    /// `w: [3D × (N·d₀ + D)]`, `b: [3D]`
    Full { w: NdArray<S>, b: NdArray<S> },
    /// `w: [N×3d×d]`, `u: [N×3d×d₀]`, `b: [N×3d]`
    Tensor {
        w: NdArray<S>,
        u: NdArray<S>,
        b: NdArray<S>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImvCellParams<S> {
    pub config: CellConfig,
    /// Hidden-to-hidden transition `𝓦_j [N×d×d]`.
    pub w_j: NdArray<S>,
    /// Input-to-hidden transition `𝓤_j [N×d×d₀]`.
    pub u_j: NdArray<S>,
    pub b_j: NdArray<S>,
    pub gates: GateParams<S>,
}

impl<S: Scalar> ImvCellParams<S> {
    pub fn zeros(config: CellConfig) -> Self {
        let (n, d, d0) = (config.n_vars, config.per_var_dim, config.input_dim_per_var);
        let big_d = config.layer_size();
        let gates = match config.variant {
            Variant::Full => GateParams::Full {
                w: NdArray::zeros(&[3 * big_d, n * d0 + big_d]),
                b: NdArray::zeros(&[3 * big_d]),
            },
            Variant::Tensor => GateParams::Tensor {
                w: NdArray::zeros(&[n, 3 * d, d]),
                u: NdArray::zeros(&[n, 3 * d, d0]),
                b: NdArray::zeros(&[n, 3 * d]),
            },
        };
        ImvCellParams {
            config,
            w_j: NdArray::zeros(&[n, d, d]),
            u_j: NdArray::zeros(&[n, d, d0]),
            b_j: NdArray::zeros(&[n, d]),
            gates,
        }
    }

    /// Weights uniform in `[-1/√D, 1/√D]`, biases zero except the forget gate
    /// bias, which starts at `+1`.
    pub fn init<R: Rng + ?Sized>(config: CellConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(config);
        let bound = 1.0 / (config.layer_size() as f64).sqrt();
        let mut fill = |a: &mut NdArray<S>| {
            a.data_mut()
                .iter_mut()
                .for_each(|v| *v = S::lit(rng.random_range(-bound..=bound)));
        };
        fill(&mut p.w_j);
        fill(&mut p.u_j);
        let (d, big_d) = (config.per_var_dim, config.layer_size());
        match &mut p.gates {
            GateParams::Full { w, b } => {
                fill(w);
                b.data_mut()[big_d..2 * big_d].fill(S::one());
            }
            GateParams::Tensor { w, u, b } => {
                fill(w);
                fill(u);
                for row in b.data_mut().chunks_exact_mut(3 * d) {
                    row[d..2 * d].fill(S::one());
                }
            }
        }
        p
    }

    /// Tensors in canonical order with their checkpoint names.
    pub fn named_tensors(&self) -> Vec<(&'static str, &NdArray<S>)> {
        let mut out = vec![
            ("cell.w_j", &self.w_j),
            ("cell.u_j", &self.u_j),
            ("cell.b_j", &self.b_j),
        ];
        match &self.gates {
            GateParams::Full { w, b } => {
                out.push(("cell.gates.w", w));
                out.push(("cell.gates.b", b));
            }
            GateParams::Tensor { w, u, b } => {
                out.push(("cell.gates.W", w));
                out.push(("cell.gates.U", u));
                out.push(("cell.gates.b", b));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut NdArray<S>> {
        let mut out = vec![&mut self.w_j, &mut self.u_j, &mut self.b_j];
        match &mut self.gates {
            GateParams::Full { w, b } => out.extend([w, b]),
            GateParams::Tensor { w, u, b } => out.extend([w, u, b]),
        }
        out
    }

    /// Literal number of scalar parameters held.
    pub fn element_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Put all tensors on `tape`, tracked for gradients or as constants.
    pub fn register(&self, tape: &mut Tape<S>, tracked: bool) -> CellVars {
        let mut put = |a: &NdArray<S>| {
            if tracked {
                tape.param(a)
            } else {
                tape.constant(a)
            }
        };
        let (w_j, u_j, b_j) = (put(&self.w_j), put(&self.u_j), put(&self.b_j));
        let gates = match &self.gates {
            GateParams::Full { w, b } => GateVars::Full {
                w: put(w),
                b: put(b),
            },
            GateParams::Tensor { w, u, b } => GateVars::Tensor {
                w: put(w),
                u: put(u),
                b: put(b),
            },
        };
        CellVars {
            config: self.config,
            w_j,
            u_j,
            b_j,
            gates,
        }
    }
}

/// Cell parameters as recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct CellVars {
    pub config: CellConfig,
    pub w_j: Var,
    pub u_j: Var,
    pub b_j: Var,
    pub gates: GateVars,
}

#[derive(Clone, Copy, Debug)]
pub enum GateVars {
    Full { w: Var, b: Var },
    Tensor { w: Var, u: Var, b: Var },
}

impl CellVars {
    /// Handles in the same canonical order as [`ImvCellParams::named_tensors`].
    pub fn handles(&self) -> Vec<Var> {
        let mut out = vec![self.w_j, self.u_j, self.b_j];
        match self.gates {
            GateVars::Full { w, b } => out.extend([w, b]),
            GateVars::Tensor { w, u, b } => out.extend([w, u, b]),
        }
        out
    }
}

/// Recurrent state: hidden matrix `h [N×d]` and memory `c` (`[D]` for Full,
/// `[N×d]` for Tensor).
#[derive(Clone, Debug, PartialEq)]
pub struct CellState<S> {
    pub h: NdArray<S>,
    pub c: NdArray<S>,
}

impl<S: Scalar> CellState<S> {
    pub fn zeros(config: &CellConfig) -> Self {
        let (n, d) = (config.n_vars, config.per_var_dim);
        let c = match config.variant {
            Variant::Full => NdArray::zeros(&[n * d]),
            Variant::Tensor => NdArray::zeros(&[n, d]),
        };
        CellState {
            h: NdArray::zeros(&[n, d]),
            c,
        }
    }
}

/// State handles on a tape.
#[derive(Clone, Copy, Debug)]
pub struct StateVars {
    pub h: Var,
    pub c: Var,
}

impl StateVars {
    pub fn zeros<S: Scalar>(tape: &mut Tape<S>, config: &CellConfig) -> Self {
        let s = CellState::<S>::zeros(config);
        StateVars {
            h: tape.constant(&s.h),
            c: tape.constant(&s.c),
        }
    }
}

/// `j̃ = tanh(𝓦_j ⊛ h_prev + 𝓤_j ⊛ x + b_j)` on a tape.
pub fn hidden_update_on<S: Scalar>(tape: &mut Tape<S>, p: &CellVars, h_prev: Var, x: Var) -> Result<Var> {
    let hh = tape.tensor_dot(p.w_j, h_prev)?;
    let xh = tape.tensor_dot(p.u_j, x)?;
    let s = tape.add(hh, xh)?;
    let s = tape.add(s, p.b_j)?;
    Ok(tape.tanh(s))
}

/// One recurrent step of either variant. `x` is `[N×d₀]`.
pub fn step_on<S: Scalar>(tape: &mut Tape<S>, p: &CellVars, state: StateVars, x: Var) -> Result<StateVars> {
    let (n, d) = (p.config.n_vars, p.config.per_var_dim);
    let j = hidden_update_on(tape, p, state.h, x)?;
    match p.gates {
        GateVars::Full { w, b } => {
            let big_d = n * d;
            let x_flat = tape.reshape(x, &[n * p.config.input_dim_per_var])?;
            let h_vec = tape.vectorize(state.h)?;
            let z = tape.concat(&[x_flat, h_vec], 0)?;
            let pre = tape.matvec(w, z)?;
            let pre = tape.add(pre, b)?;
            let gates = tape.sigmoid(pre);
            let i = tape.slice_last(gates, 0, big_d)?;
            let f = tape.slice_last(gates, big_d, big_d)?;
            let o = tape.slice_last(gates, 2 * big_d, big_d)?;
            let j_vec = tape.vectorize(j)?;
            let keep = tape.mul(f, state.c)?;
            let write = tape.mul(i, j_vec)?;
            let c = tape.add(keep, write)?;
            let tc = tape.tanh(c);
            let h_vec = tape.mul(o, tc)?;
            let h = tape.matricize(h_vec, n, d)?;
            Ok(StateVars { h, c })
        }
        GateVars::Tensor { w, u, b } => {
            let hh = tape.tensor_dot(w, state.h)?;
            let xh = tape.tensor_dot(u, x)?;
            let pre = tape.add(hh, xh)?;
            let pre = tape.add(pre, b)?;
            let gates = tape.sigmoid(pre);
            let i = tape.slice_last(gates, 0, d)?;
            let f = tape.slice_last(gates, d, d)?;
            let o = tape.slice_last(gates, 2 * d, d)?;
            let keep = tape.mul(f, state.c)?;
            let write = tape.mul(i, j)?;
            let c = tape.add(keep, write)?;
            let tc = tape.tanh(c);
            let h = tape.mul(o, tc)?;
            Ok(StateVars { h, c })
        }
    }
}

/// Run the cell over a window from zero state. `window` is row-major
/// `T×N×d₀`; returns the `T` hidden matrices.
pub fn unroll_on<S: Scalar>(tape: &mut Tape<S>, p: &CellVars, window: &[S]) -> Result<Vec<Var>> {
    let cfg = p.config;
    let step_len = cfg.n_vars * cfg.input_dim_per_var;
    if window.is_empty() || window.len() % step_len != 0 {
        return Err(ImvError::Argument(format!(
            "window of {} values is not a positive multiple of N·d₀ = {step_len}",
            window.len()
        )));
    }
    let mut state = StateVars::zeros(tape, &cfg);
    let mut hs = Vec::with_capacity(window.len() / step_len);
    for xt in window.chunks_exact(step_len) {
        let x = tape.constant_from(&[cfg.n_vars, cfg.input_dim_per_var], xt)?;
        state = step_on(tape, p, state, x)?;
        hs.push(state.h);
    }
    Ok(hs)
}

fn check_shape<S: Scalar>(what: &'static str, a: &NdArray<S>, expect: &[usize]) -> Result<()> {
    if a.shape() != expect {
        return Err(ImvError::dim(what, a.shape(), expect));
    }
    Ok(())
}

/// Candidate hidden update `j̃ [N×d]` for one step.
pub fn hidden_update<S: Scalar>(params: &ImvCellParams<S>, h_prev: &NdArray<S>, x: &NdArray<S>) -> Result<NdArray<S>> {
    let c = params.config;
    check_shape("hidden_update h_prev", h_prev, &[c.n_vars, c.per_var_dim])?;
    check_shape("hidden_update x", x, &[c.n_vars, c.input_dim_per_var])?;
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let (h, xv) = (tape.constant(h_prev), tape.constant(x));
    let j = hidden_update_on(&mut tape, &vars, h, xv)?;
    Ok(tape.value(j))
}

fn step_checked<S: Scalar>(
    params: &ImvCellParams<S>,
    state: &CellState<S>,
    x: &NdArray<S>,
    variant: Variant,
) -> Result<CellState<S>> {
    let c = params.config;
    if c.variant != variant {
        return Err(ImvError::Contract(format!(
            "{variant} step called on a {} cell",
            c.variant
        )));
    }
    let expect = CellState::<S>::zeros(&c);
    check_shape("step h", &state.h, expect.h.shape())?;
    check_shape("step c", &state.c, expect.c.shape())?;
    check_shape("step x", x, &[c.n_vars, c.input_dim_per_var])?;
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let sv = StateVars {
        h: tape.constant(&state.h),
        c: tape.constant(&state.c),
    };
    let xv = tape.constant(x);
    let next = step_on(&mut tape, &vars, sv, xv)?;
    Ok(CellState {
        h: tape.value(next.h),
        c: tape.value(next.c),
    })
}

/// IMV-Full step: `[i;f;o] = σ(W[x ⊕ vec(h)] + b)`, `c = f⊙c + i⊙vec(j̃)`,
/// `h = matricize(o⊙tanh(c))`.
pub fn step_full<S: Scalar>(params: &ImvCellParams<S>, state: &CellState<S>, x: &NdArray<S>) -> Result<CellState<S>> {
    step_checked(params, state, x, Variant::Full)
}

/// IMV-Tensor step: gates `σ(𝓦 ⊛ h + 𝓤 ⊛ x + b)` are `N×3d`, and memory and
/// hidden state stay `N×d` matrices.
pub fn step_tensor<S: Scalar>(params: &ImvCellParams<S>, state: &CellState<S>, x: &NdArray<S>) -> Result<CellState<S>> {
    step_checked(params, state, x, Variant::Tensor)
}

/// Hidden matrices `h̃_1 … h̃_T` from zero initial state.
pub fn unroll<S: Scalar>(params: &ImvCellParams<S>, xs: &[NdArray<S>]) -> Result<Vec<NdArray<S>>> {
    let c = params.config;
    if xs.is_empty() {
        return Err(ImvError::Argument("unroll over an empty sequence".into()));
    }
    let mut flat = Vec::with_capacity(xs.len() * c.n_vars * c.input_dim_per_var);
    for x in xs {
        check_shape("unroll x", x, &[c.n_vars, c.input_dim_per_var])?;
        flat.extend_from_slice(x.data());
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let hs = unroll_on(&mut tape, &vars, &flat)?;
    Ok(hs.into_iter().map(|h| tape.value(h)).collect())
}

/// Parameter counts of one recurrent layer of size `D = N·d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCounts {
    pub this_variant: usize,
    pub standard_lstm: usize,
    pub reduction: usize,
}

/// Parameter accounting against a standard LSTM of the same layer size,
/// for one-dimensional variables (`d₀ = 1`).
///
/// Standard LSTM: `4D² + 4ND + 4D`. Reductions: Full `(N−1)D + (1−1/N)D²`,
/// Tensor `4(N−1)D + 4(1−1/N)D²`. With `D = N·d`, `D²/N = N·d²` is integral.
pub fn count_params(config: &CellConfig) -> Result<ParamCounts> {
    config.validate()?;
    if config.input_dim_per_var != 1 {
        return Err(ImvError::Unsupported(format!(
            "parameter accounting assumes one-dimensional variables, got d0 = {}",
            config.input_dim_per_var
        )));
    }
    let (n, d) = (config.n_vars, config.per_var_dim);
    let big_d = n * d;
    let standard = 4 * big_d * big_d + 4 * n * big_d + 4 * big_d;
    let base = (n - 1) * big_d + big_d * big_d - n * d * d;
    let reduction = match config.variant {
        Variant::Full => base,
        Variant::Tensor => 4 * base,
    };
    Ok(ParamCounts {
        this_variant: standard - reduction,
        standard_lstm: standard,
        reduction,
    })
}

/// Multiplications performed by one recurrent step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepCost {
    pub full: usize,
    pub tensor: usize,
    pub standard_lstm: usize,
}

/// Exact per-step multiply counts derived from the parameter shapes: matrix
/// and tensor-dot products plus the three elementwise products of the memory
/// and output updates (`f⊙c`, `i⊙j`, `o⊙tanh c`).
pub fn step_flop_estimate(config: &CellConfig) -> StepCost {
    let (n, d, d0) = (config.n_vars, config.per_var_dim, config.input_dim_per_var);
    let big_d = n * d;
    let hidden = n * d * d + n * d * d0;
    let elementwise = 3 * big_d;
    StepCost {
        full: hidden + 3 * big_d * (n * d0 + big_d) + elementwise,
        tensor: hidden + n * 3 * d * (d + d0) + elementwise,
        standard_lstm: 4 * big_d * (n * d0 + big_d) + elementwise,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(n: usize, d: usize, v: Variant) -> CellConfig {
        CellConfig::new(n, d, v)
    }

    #[test]
    fn zero_params_give_zero_candidate() {
        let p = ImvCellParams::<f64>::zeros(cfg(3, 2, Variant::Tensor));
        let h = NdArray::full(&[3, 2], 0.3);
        let x = NdArray::full(&[3, 1], -1.2);
        assert_eq!(hidden_update(&p, &h, &x).unwrap(), NdArray::zeros(&[3, 2]));
    }

    #[test]
    fn scalar_candidate_update() {
        let mut p = ImvCellParams::<f64>::zeros(cfg(1, 1, Variant::Full));
        p.w_j.data_mut()[0] = 0.5;
        p.u_j.data_mut()[0] = 1.0;
        let j = hidden_update(&p, &NdArray::full(&[1, 1], 1.0), &NdArray::full(&[1, 1], 0.2)).unwrap();
        assert!((j.data()[0] - 0.604_367_777_117_063_4).abs() < 1e-12);
    }

    #[test]
    fn candidate_rows_are_isolated() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = ImvCellParams::<f64>::init(cfg(3, 2, Variant::Full), &mut rng);
        let h = NdArray::from_fn(&[3, 2], |i| i as f64 * 0.1 - 0.2);
        let x = NdArray::from_fn(&[3, 1], |i| i as f64);
        let base = hidden_update(&p, &h, &x).unwrap();
        let mut h2 = h.clone();
        h2.data_mut()[2] += 5.0;
        let mut x2 = x.clone();
        x2.data_mut()[1] -= 3.0;
        let moved = hidden_update(&p, &h2, &x2).unwrap();
        assert_eq!(base.row(0), moved.row(0));
        assert_eq!(base.row(2), moved.row(2));
        assert_ne!(base.row(1), moved.row(1));
    }

    #[test]
    fn zero_fixed_points() {
        for v in [Variant::Full, Variant::Tensor] {
            let c = cfg(2, 3, v);
            let p = ImvCellParams::<f64>::zeros(c);
            let s = CellState::zeros(&c);
            let x = NdArray::full(&[2, 1], 0.9);
            let next = match v {
                Variant::Full => step_full(&p, &s, &x).unwrap(),
                Variant::Tensor => step_tensor(&p, &s, &x).unwrap(),
            };
            assert_eq!(next, s);
        }
    }

    #[test]
    fn scalar_full_step_with_neutral_gates() {
        // Gate pre-activations are 0 (sigmoid 0.5); j̃ = tanh(atanh 0.6) = 0.6.
        let mut p = ImvCellParams::<f64>::zeros(cfg(1, 1, Variant::Full));
        p.b_j.data_mut()[0] = 0.6_f64.atanh();
        let s = CellState {
            h: NdArray::zeros(&[1, 1]),
            c: NdArray::full(&[1], 1.0),
        };
        let next = step_full(&p, &s, &NdArray::zeros(&[1, 1])).unwrap();
        assert!((next.c.data()[0] - 0.8).abs() < 1e-12);
        assert!((next.h.data()[0] - 0.5 * 0.8_f64.tanh()).abs() < 1e-12);
        assert!((next.h.data()[0] - 0.33201).abs() < 1e-5);
    }

    #[test]
    fn variant_mismatch_is_a_contract_error() {
        let c = cfg(2, 2, Variant::Tensor);
        let p = ImvCellParams::<f64>::zeros(c);
        let err = step_full(&p, &CellState::zeros(&c), &NdArray::zeros(&[2, 1])).unwrap_err();
        assert!(matches!(err, ImvError::Contract(_)));
    }

    #[test]
    fn unroll_contracts() {
        let c = cfg(2, 3, Variant::Tensor);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ImvCellParams::<f64>::init(c, &mut rng);
        assert!(unroll(&p, &[]).is_err());

        let x = NdArray::from_fn(&[2, 1], |i| 0.3 + i as f64);
        let one = unroll(&p, std::slice::from_ref(&x)).unwrap();
        let step = step_tensor(&p, &CellState::zeros(&c), &x).unwrap();
        assert_eq!(one, vec![step.h]);

        let z = ImvCellParams::<f64>::zeros(c);
        let hs = unroll(&z, &vec![NdArray::zeros(&[2, 1]); 4]).unwrap();
        assert!(hs.iter().all(|h| *h == NdArray::zeros(&[2, 3])));

        for n in 1..=3 {
            for d in 1..=3 {
                for t in 1..=3 {
                    for v in [Variant::Full, Variant::Tensor] {
                        let p = ImvCellParams::<f64>::init(cfg(n, d, v), &mut rng);
                        let hs = unroll(&p, &vec![NdArray::full(&[n, 1], 0.5); t]).unwrap();
                        assert_eq!(hs.len(), t);
                        assert!(hs.iter().all(|h| h.shape() == [n, d]));
                        assert!(hs.iter().all(|h| h.data().iter().all(|v| v.abs() < 1.0)));
                    }
                }
            }
        }
    }

    #[test]
    fn init_sets_forget_bias_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = cfg(2, 4, Variant::Tensor);
        let p = ImvCellParams::<f64>::init(c, &mut rng);
        let bound = 1.0 / 8f64.sqrt();
        assert!(p.w_j.data().iter().all(|v| v.abs() <= bound));
        if let GateParams::Tensor { b, .. } = &p.gates {
            assert_eq!(b.row(0), &[0., 0., 0., 0., 1., 1., 1., 1., 0., 0., 0., 0.]);
        }
        let f = ImvCellParams::<f64>::init(cfg(2, 2, Variant::Full), &mut rng);
        if let GateParams::Full { b, .. } = &f.gates {
            assert_eq!(b.data(), &[0., 0., 0., 0., 1., 1., 1., 1., 0., 0., 0., 0.]);
        }
    }

    #[test]
    fn param_counts_for_two_vars_four_units() {
        let full = count_params(&cfg(2, 4, Variant::Full)).unwrap();
        assert_eq!((full.standard_lstm, full.reduction, full.this_variant), (352, 40, 312));
        let tensor = count_params(&cfg(2, 4, Variant::Tensor)).unwrap();
        assert_eq!((tensor.reduction, tensor.this_variant), (160, 192));
        let mut multi = cfg(2, 4, Variant::Full);
        multi.input_dim_per_var = 2;
        assert!(matches!(count_params(&multi), Err(ImvError::Unsupported(_))));
    }

    #[test]
    fn step_cost_degenerate_and_scaling() {
        let one = step_flop_estimate(&cfg(1, 16, Variant::Full));
        assert_eq!(one.full, one.tensor);
        // Each count is aD² + bD at fixed N; the second difference isolates
        // the quadratic term, which must grow 4x when D doubles.
        let at = |d: usize| step_flop_estimate(&cfg(4, d, Variant::Full));
        let quad = |f: fn(&StepCost) -> usize, d: usize| f(&at(2 * d)) - 2 * f(&at(d));
        for f in [|c: &StepCost| c.full, |c: &StepCost| c.tensor] {
            assert_eq!(quad(f, 32), 4 * quad(f, 16));
        }
    }
}
