//! Reverse-mode gradients of every tape primitive against central
//! differences. Each op output is scalarized as `Σ r ⊙ out` with a fixed
//! random `r`, so every output element contributes.

mod common;

use common::{numeric_grad, rel_err, rng, uniform_vec};
use imv_core::ndtape::{NdArray, Tape, Var};
use imv_core::Result;

const TOL: f64 = 1e-6;

struct Input {
    shape: Vec<usize>,
    /// Values are drawn from `[lo, hi)`.
    lo: f64,
    hi: f64,
}

fn inp(shape: &[usize]) -> Input {
    Input {
        shape: shape.to_vec(),
        lo: -1.5,
        hi: 1.5,
    }
}

fn positive(shape: &[usize]) -> Input {
    Input {
        shape: shape.to_vec(),
        lo: 0.4,
        hi: 1.6,
    }
}

/// Scalarized objective, recorded on a fresh tape.
fn record(
    tape: &mut Tape<f64>,
    inputs: &[NdArray<f64>],
    weights: &mut Option<Vec<f64>>,
    seed: u64,
    op: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> (Vec<Var>, Var) {
    let vars: Vec<Var> = inputs.iter().map(|a| tape.param(a)).collect();
    let out = op(tape, &vars).unwrap();
    let n = tape.data(out).len();
    let r = weights.get_or_insert_with(|| uniform_vec(&mut rng(seed ^ 0xabc), n, 1.0));
    let rv = tape.constant_from(tape.shape(out).to_vec().as_slice(), r).unwrap();
    let prod = tape.mul(out, rv).unwrap();
    (vars, tape.sum(prod))
}

fn check(name: &str, inputs: &[Input], op: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) {
    for seed in 0..5u64 {
        let mut g = rng(seed);
        let arrays: Vec<NdArray<f64>> = inputs
            .iter()
            .map(|i| {
                let n: usize = i.shape.iter().product();
                let data = (0..n).map(|_| rand::Rng::random_range(&mut g, i.lo..i.hi)).collect();
                NdArray::new(i.shape.clone(), data).unwrap()
            })
            .collect();
        let mut weights = None;
        let mut tape = Tape::new();
        let (vars, loss) = record(&mut tape, &arrays, &mut weights, seed, &op);
        tape.backward(loss).unwrap();
        let analytic: Vec<f64> = vars.iter().flat_map(|&v| tape.grad(v).to_vec()).collect();

        let mut flat: Vec<f64> = arrays.iter().flat_map(|a| a.data().to_vec()).collect();
        let numeric = numeric_grad(&mut flat, |x| {
            let mut at = 0;
            let moved: Vec<NdArray<f64>> = arrays
                .iter()
                .map(|a| {
                    let n = a.len();
                    at += n;
                    NdArray::new(a.shape().to_vec(), x[at - n..at].to_vec()).unwrap()
                })
                .collect();
            let mut t = Tape::new();
            let (_, l) = record(&mut t, &moved, &mut weights, seed, &op);
            t.scalar(l)
        });
        for (k, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let e = rel_err(*a, *n);
            assert!(e < TOL, "{name} seed {seed} coord {k}: analytic {a} numeric {n} rel {e}");
        }
    }
}

#[test]
fn linear_algebra() {
    check("matmul", &[inp(&[3, 4]), inp(&[4, 2])], |t, v| t.matmul(v[0], v[1]));
    check("matvec", &[inp(&[3, 4]), inp(&[4])], |t, v| t.matvec(v[0], v[1]));
    check("tensor_dot", &[inp(&[3, 4, 2]), inp(&[3, 2])], |t, v| t.tensor_dot(v[0], v[1]));
}

#[test]
fn elementwise_binary() {
    let s = [2, 3];
    check("add", &[inp(&s), inp(&s)], |t, v| t.add(v[0], v[1]));
    check("sub", &[inp(&s), inp(&s)], |t, v| t.sub(v[0], v[1]));
    check("mul", &[inp(&s), inp(&s)], |t, v| t.mul(v[0], v[1]));
    check("add_rows", &[inp(&[4, 3]), inp(&[3])], |t, v| t.add_rows(v[0], v[1]));
    // The same input on both sides accumulates two gradient contributions.
    check("mul_self", &[inp(&s)], |t, v| t.mul(v[0], v[0]));
}

#[test]
fn elementwise_unary() {
    let s = [3, 2];
    check("affine", &[inp(&s)], |t, v| Ok(t.affine(v[0], -1.7, 0.3)));
    check("sigmoid", &[inp(&s)], |t, v| Ok(t.sigmoid(v[0])));
    check("tanh", &[inp(&s)], |t, v| Ok(t.tanh(v[0])));
    check("softplus", &[inp(&s)], |t, v| Ok(t.softplus(v[0])));
}

#[test]
fn normalizers_and_reductions() {
    check("softmax", &[inp(&[3, 4])], |t, v| Ok(t.softmax(v[0])));
    check("log_softmax", &[inp(&[3, 4])], |t, v| Ok(t.log_softmax(v[0])));
    check("sum", &[inp(&[2, 3])], |t, v| Ok(t.sum(v[0])));
    check("log_sum_exp", &[inp(&[5])], |t, v| Ok(t.log_sum_exp(v[0])));
}

#[test]
fn shape_ops() {
    check("concat0", &[inp(&[2, 3]), inp(&[1, 3])], |t, v| t.concat(&[v[0], v[1]], 0));
    check("concat1", &[inp(&[2, 3]), inp(&[2, 1])], |t, v| t.concat(&[v[0], v[1]], 1));
    check("concat2", &[inp(&[2, 3, 1]), inp(&[2, 3, 2])], |t, v| t.concat(&[v[0], v[1]], 2));
    check("reshape", &[inp(&[2, 3])], |t, v| t.reshape(v[0], &[3, 2]));
    check("slice_last", &[inp(&[2, 5])], |t, v| t.slice_last(v[0], 1, 3));
    check("vectorize", &[inp(&[3, 2])], |t, v| t.vectorize(v[0]));
    check("matricize", &[inp(&[6])], |t, v| t.matricize(v[0], 2, 3));
}

#[test]
fn gaussian_log_density() {
    check("gauss_log_pdf", &[inp(&[4]), positive(&[4])], |t, v| t.gauss_log_pdf(v[0], v[1], 0.35));
}
