//! Define-by-run reverse-mode differentiation over [`NdArray`]-shaped values.
//!
//! All values and adjoints live in two flat arenas; nodes hold offsets into
//! them. Nodes are appended in evaluation order, so every input precedes the
//! node that consumes it and a single reverse sweep visits each node once.
//! A tape can be cleared and reused to keep its allocations.

use super::array::{concat_shape, NdArray};
use super::kernels;
use crate::error::{ImvError, Result};
use crate::scalar::{sigmoid, Scalar};

const MAX_RANK: usize = 4;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Dims {
    d: [usize; MAX_RANK],
    n: usize,
}

impl Dims {
    fn new(shape: &[usize]) -> Result<Self> {
        if shape.len() > MAX_RANK {
            return Err(ImvError::Unsupported(format!(
                "tape values are limited to rank {MAX_RANK}, got {shape:?}"
            )));
        }
        let mut d = [0; MAX_RANK];
        d[..shape.len()].copy_from_slice(shape);
        Ok(Dims { d, n: shape.len() })
    }

    fn as_slice(&self) -> &[usize] {
        &self.d[..self.n]
    }

    fn numel(&self) -> usize {
        self.as_slice().iter().product()
    }

    fn last(&self) -> usize {
        if self.n == 0 {
            1
        } else {
            self.d[self.n - 1]
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    MatVec(Var, Var),
    TensorDot(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRows(Var, Var),
    Affine(Var, S, S),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Sum(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    Concat { first: usize, count: usize, axis: usize },
    Reshape(Var),
    SliceLast(Var, usize),
    Vectorize(Var),
    Matricize(Var),
    GaussLogPdf { mu: Var, sigma: Var, y: S },
}

#[derive(Clone, Copy, Debug)]
struct Node<S> {
    op: Op<S>,
    dims: Dims,
    offset: usize,
    len: usize,
    needs_grad: bool,
}

/// Recording of one forward evaluation.
#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    operands: Vec<Var>,
    values: Vec<S>,
    grads: Vec<S>,
    backward_from: Option<Var>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            operands: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            backward_from: None,
        }
    }

    /// Drop all nodes, keeping allocated capacity.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.operands.clear();
        self.values.clear();
        self.grads.clear();
        self.backward_from = None;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> &Node<S> {
        &self.nodes[v.index()]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.index()].dims.as_slice()
    }

    pub fn data(&self, v: Var) -> &[S] {
        let n = self.node(v);
        &self.values[n.offset..n.offset + n.len]
    }

    pub fn value(&self, v: Var) -> NdArray<S> {
        NdArray::new(self.shape(v).to_vec(), self.data(v).to_vec())
            .expect("tape node shape is consistent")
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> S {
        self.data(v)[0]
    }

    /// Adjoint of `v` from the last [`Tape::backward`] call. Nodes that do not
    /// reach the loss hold exact zeros.
    pub fn grad(&self, v: Var) -> &[S] {
        assert!(self.backward_from.is_some(), "grad() before backward()");
        let n = self.node(v);
        &self.grads[n.offset..n.offset + n.len]
    }

    pub fn grad_array(&self, v: Var) -> NdArray<S> {
        NdArray::new(self.shape(v).to_vec(), self.grad(v).to_vec())
            .expect("tape node shape is consistent")
    }

    /// Append a node and return its handle plus the split arena: values of
    /// earlier nodes (read-only) and the fresh output slice.
    fn push(&mut self, op: Op<S>, dims: Dims, needs_grad: bool) -> (Var, &[S], &mut [S]) {
        let offset = self.values.len();
        let len = dims.numel();
        self.values.resize(offset + len, S::zero());
        let id = Var(self.nodes.len() as u32);
        self.nodes.push(Node {
            op,
            dims,
            offset,
            len,
            needs_grad,
        });
        let (before, out) = self.values.split_at_mut(offset);
        (id, before, out)
    }

    fn range(&self, v: Var) -> std::ops::Range<usize> {
        let n = self.node(v);
        n.offset..n.offset + n.len
    }

    fn leaf(&mut self, shape: &[usize], data: &[S], needs_grad: bool) -> Result<Var> {
        let dims = Dims::new(shape)?;
        if dims.numel() != data.len() {
            return Err(ImvError::dim("leaf", shape, &[data.len()]));
        }
        let (v, _, out) = self.push(Op::Leaf, dims, needs_grad);
        out.copy_from_slice(data);
        Ok(v)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, a: &NdArray<S>) -> Var {
        self.leaf(a.shape(), a.data(), false)
            .expect("NdArray rank within tape limit")
    }

    pub fn constant_from(&mut self, shape: &[usize], data: &[S]) -> Result<Var> {
        self.leaf(shape, data, false)
    }

    /// A tracked parameter; its adjoint is available after `backward`.
    pub fn param(&mut self, a: &NdArray<S>) -> Var {
        self.leaf(a.shape(), a.data(), true)
            .expect("NdArray rank within tape limit")
    }

    fn ng(&self, v: Var) -> bool {
        self.node(v).needs_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (self.node(a).dims, self.node(b).dims);
        if da.n != 2 || db.n != 2 || da.d[1] != db.d[0] {
            return Err(ImvError::dim("matmul", da.as_slice(), db.as_slice()));
        }
        let (p, q, r) = (da.d[0], da.d[1], db.d[1]);
        let (ra, rb) = (self.range(a), self.range(b));
        let ng = self.ng(a) || self.ng(b);
        let (v, vals, out) = self.push(Op::MatMul(a, b), Dims::new(&[p, r])?, ng);
        kernels::matmul(&vals[ra], &vals[rb], p, q, r, out);
        Ok(v)
    }

    /// `[p×q] · [q]` → `[p]`.
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (da, dx) = (self.node(a).dims, self.node(x).dims);
        if da.n != 2 || dx.n != 1 || da.d[1] != dx.d[0] {
            return Err(ImvError::dim("matvec", da.as_slice(), dx.as_slice()));
        }
        let (p, q) = (da.d[0], da.d[1]);
        let (ra, rx) = (self.range(a), self.range(x));
        let ng = self.ng(a) || self.ng(x);
        let (v, vals, out) = self.push(Op::MatVec(a, x), Dims::new(&[p])?, ng);
        kernels::matvec(&vals[ra], &vals[rx], p, q, out);
        Ok(v)
    }

    /// `w [N×p×k] ⊛ h [N×k]` → `[N×p]`, block `n` being `w[n] · h[n]`.
    pub fn tensor_dot(&mut self, w: Var, h: Var) -> Result<Var> {
        let (dw, dh) = (self.node(w).dims, self.node(h).dims);
        if dw.n != 3 || dh.n != 2 || dw.d[0] != dh.d[0] || dw.d[2] != dh.d[1] {
            return Err(ImvError::dim("tensor_dot", dw.as_slice(), dh.as_slice()));
        }
        let (n, p, k) = (dw.d[0], dw.d[1], dw.d[2]);
        let (rw, rh) = (self.range(w), self.range(h));
        let ng = self.ng(w) || self.ng(h);
        let (v, vals, out) = self.push(Op::TensorDot(w, h), Dims::new(&[n, p])?, ng);
        kernels::tensor_dot(&vals[rw], &vals[rh], n, p, k, out);
        Ok(v)
    }

    fn binary(&mut self, op: Op<S>, a: Var, b: Var, name: &'static str, f: fn(S, S) -> S) -> Result<Var> {
        let (da, db) = (self.node(a).dims, self.node(b).dims);
        if da != db {
            return Err(ImvError::dim(name, da.as_slice(), db.as_slice()));
        }
        let (ra, rb) = (self.range(a), self.range(b));
        let ng = self.ng(a) || self.ng(b);
        let (v, vals, out) = self.push(op, da, ng);
        for ((o, &x), &y) in out.iter_mut().zip(&vals[ra]).zip(&vals[rb]) {
            *o = f(x, y);
        }
        Ok(v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Add(a, b), a, b, "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Sub(a, b), a, b, "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Mul(a, b), a, b, "mul", |x, y| x * y)
    }

    /// Add a vector `[k]` to every row of `a [..×k]`.
    pub fn add_rows(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (da, db) = (self.node(a).dims, self.node(bias).dims);
        if da.n == 0 || db.n != 1 || da.last() != db.d[0] {
            return Err(ImvError::dim("add_rows", da.as_slice(), db.as_slice()));
        }
        let (ra, rb) = (self.range(a), self.range(bias));
        let ng = self.ng(a) || self.ng(bias);
        let (v, vals, out) = self.push(Op::AddRows(a, bias), da, ng);
        let b = &vals[rb];
        for (orow, arow) in out.chunks_exact_mut(b.len()).zip(vals[ra].chunks_exact(b.len())) {
            for ((o, &x), &y) in orow.iter_mut().zip(arow).zip(b) {
                *o = x + y;
            }
        }
        Ok(v)
    }

    /// `scale · a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: S, shift: S) -> Var {
        let (dims, ra, ng) = (self.node(a).dims, self.range(a), self.ng(a));
        let (v, vals, out) = self.push(Op::Affine(a, scale, shift), dims, ng);
        for (o, &x) in out.iter_mut().zip(&vals[ra]) {
            *o = scale * x + shift;
        }
        v
    }

    fn unary(&mut self, op: Op<S>, a: Var, f: fn(&[S], &mut [S])) -> Var {
        let (dims, ra, ng) = (self.node(a).dims, self.range(a), self.ng(a));
        let (v, vals, out) = self.push(op, dims, ng);
        f(&vals[ra], out);
        v
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Op::Sigmoid(a), a, kernels::sigmoid_map)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Op::Tanh(a), a, kernels::tanh_map)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(Op::Softplus(a), a, kernels::softplus_map)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let w = self.node(a).dims.last();
        let (dims, ra, ng) = (self.node(a).dims, self.range(a), self.ng(a));
        let (v, vals, out) = self.push(Op::Softmax(a), dims, ng);
        kernels::softmax_rows(&vals[ra], w, out);
        v
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let w = self.node(a).dims.last();
        let (dims, ra, ng) = (self.node(a).dims, self.range(a), self.ng(a));
        let (v, vals, out) = self.push(Op::LogSoftmax(a), dims, ng);
        kernels::log_softmax_rows(&vals[ra], w, out);
        v
    }

    /// Sum of all elements, as a rank-0 value.
    pub fn sum(&mut self, a: Var) -> Var {
        let (ra, ng) = (self.range(a), self.ng(a));
        let (v, vals, out) = self.push(Op::Sum(a), Dims::new(&[]).unwrap(), ng);
        out[0] = vals[ra].iter().copied().sum();
        v
    }

    /// `ln Σ exp(a)` over all elements, as a rank-0 value.
    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let (ra, ng) = (self.range(a), self.ng(a));
        let (v, vals, out) = self.push(Op::LogSumExp(a), Dims::new(&[]).unwrap(), ng);
        out[0] = crate::scalar::log_sum_exp(&vals[ra]);
        v
    }

    /// Concatenate along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(ImvError::Argument("concat of zero values".into()));
        }
        let dims: Vec<Dims> = parts.iter().map(|&p| self.node(p).dims).collect();
        let shapes: Vec<&[usize]> = dims.iter().map(Dims::as_slice).collect();
        let out_dims = Dims::new(&concat_shape(&shapes, axis)?)?;
        let outer: usize = dims[0].as_slice()[..axis].iter().product();
        let first = self.operands.len();
        self.operands.extend_from_slice(parts);
        let ranges: Vec<_> = parts.iter().map(|&p| self.range(p)).collect();
        let inner: Vec<usize> = ranges.iter().map(|r| r.len() / outer).collect();
        let ng = parts.iter().any(|&p| self.ng(p));
        let op = Op::Concat {
            first,
            count: parts.len(),
            axis,
        };
        let (v, vals, out) = self.push(op, out_dims, ng);
        let srcs: Vec<&[S]> = ranges.into_iter().map(|r| &vals[r]).collect();
        kernels::concat(&srcs, &inner, outer, out);
        Ok(v)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let dims = Dims::new(shape)?;
        if dims.numel() != self.node(a).len {
            return Err(ImvError::dim("reshape", self.shape(a), shape));
        }
        let (ra, ng) = (self.range(a), self.ng(a));
        let (v, vals, out) = self.push(Op::Reshape(a), dims, ng);
        out.copy_from_slice(&vals[ra]);
        Ok(v)
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let da = self.node(a).dims;
        let w = da.last();
        if da.n == 0 || len == 0 || start + len > w {
            return Err(ImvError::dim("slice_last", da.as_slice(), &[start, len]));
        }
        let mut out_dims = da;
        out_dims.d[da.n - 1] = len;
        let (ra, ng) = (self.range(a), self.ng(a));
        let (v, vals, out) = self.push(Op::SliceLast(a, start), out_dims, ng);
        for (orow, arow) in out.chunks_exact_mut(len).zip(vals[ra].chunks_exact(w)) {
            orow.copy_from_slice(&arow[start..start + len]);
        }
        Ok(v)
    }

    /// Column-major vectorization `[N×d]` → `[N·d]`.
    pub fn vectorize(&mut self, m: Var) -> Result<Var> {
        let dm = self.node(m).dims;
        if dm.n != 2 {
            return Err(ImvError::dim("vectorize", dm.as_slice(), &[]));
        }
        let (rows, cols) = (dm.d[0], dm.d[1]);
        let (rm, ng) = (self.range(m), self.ng(m));
        let (v, vals, out) = self.push(Op::Vectorize(m), Dims::new(&[rows * cols])?, ng);
        kernels::vectorize(&vals[rm], rows, cols, out);
        Ok(v)
    }

    /// Inverse of [`Tape::vectorize`]: `[N·d]` → `[N×d]`.
    pub fn matricize(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let dx = self.node(x).dims;
        if dx.n != 1 || rows * cols != dx.d[0] {
            return Err(ImvError::dim("matricize", dx.as_slice(), &[rows, cols]));
        }
        let (rx, ng) = (self.range(x), self.ng(x));
        let (v, vals, out) = self.push(Op::Matricize(x), Dims::new(&[rows, cols])?, ng);
        kernels::matricize(&vals[rx], rows, cols, out);
        Ok(v)
    }

    /// Elementwise Gaussian log-density of a fixed observation `y` under
    /// `N(mu, sigma²)`; `mu` and `sigma` share a shape.
    pub fn gauss_log_pdf(&mut self, mu: Var, sigma: Var, y: S) -> Result<Var> {
        let (dm, ds) = (self.node(mu).dims, self.node(sigma).dims);
        if dm != ds {
            return Err(ImvError::dim("gauss_log_pdf", dm.as_slice(), ds.as_slice()));
        }
        let (rm, rs) = (self.range(mu), self.range(sigma));
        let ng = self.ng(mu) || self.ng(sigma);
        let (v, vals, out) = self.push(Op::GaussLogPdf { mu, sigma, y }, dm, ng);
        for ((o, &m), &s) in out.iter_mut().zip(&vals[rm]).zip(&vals[rs]) {
            *o = crate::mixture::gaussian_log_pdf(y, m, s);
        }
        Ok(v)
    }

    /// Reverse sweep from a single-element `loss`. Afterwards [`Tape::grad`]
    /// returns `∂loss/∂v` for every node recorded before `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ln = *self.node(loss);
        if ln.len != 1 {
            return Err(ImvError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                ln.dims.as_slice()
            )));
        }
        self.grads.clear();
        self.grads.resize(self.values.len(), S::zero());
        self.grads[ln.offset] = S::one();
        self.backward_from = Some(loss);

        let Tape {
            nodes,
            operands,
            values,
            grads,
            ..
        } = self;
        for idx in (0..=loss.index()).rev() {
            let node = nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let (gin, gout) = grads.split_at_mut(node.offset);
            let g = &gout[..node.len];
            let out = &values[node.offset..node.offset + node.len];
            let at = |v: Var| {
                let n = &nodes[v.index()];
                n.offset..n.offset + n.len
            };
            let wants = |v: Var| nodes[v.index()].needs_grad;
            match node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (da, db) = (nodes[a.index()].dims, nodes[b.index()].dims);
                    let (p, q, r) = (da.d[0], da.d[1], db.d[1]);
                    if wants(a) {
                        kernels::matmul_grad_a(g, &values[at(b)], p, q, r, &mut gin[at(a)]);
                    }
                    if wants(b) {
                        kernels::matmul_grad_b(g, &values[at(a)], p, q, r, &mut gin[at(b)]);
                    }
                }
                Op::MatVec(a, x) => {
                    let da = nodes[a.index()].dims;
                    let (p, q) = (da.d[0], da.d[1]);
                    if wants(a) {
                        kernels::matvec_grad(g, &values[at(a)], &values[at(x)], p, q, Some(&mut gin[at(a)]), None);
                    }
                    if wants(x) {
                        kernels::matvec_grad(g, &values[at(a)], &values[at(x)], p, q, None, Some(&mut gin[at(x)]));
                    }
                }
                Op::TensorDot(w, h) => {
                    let dw = nodes[w.index()].dims;
                    let (n, p, k) = (dw.d[0], dw.d[1], dw.d[2]);
                    let (wv, hv) = (&values[at(w)], &values[at(h)]);
                    if wants(w) {
                        kernels::tensor_dot_grad(g, wv, hv, n, p, k, Some(&mut gin[at(w)]), None);
                    }
                    if wants(h) {
                        kernels::tensor_dot_grad(g, wv, hv, n, p, k, None, Some(&mut gin[at(h)]));
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -S::one() } else { S::one() };
                    if wants(a) {
                        accumulate(&mut gin[at(a)], g, S::one());
                    }
                    if wants(b) {
                        accumulate(&mut gin[at(b)], g, sign);
                    }
                }
                Op::Mul(a, b) => {
                    if wants(a) {
                        let bv = &values[at(b)];
                        for ((d, &gv), &y) in gin[at(a)].iter_mut().zip(g).zip(bv) {
                            *d += gv * y;
                        }
                    }
                    if wants(b) {
                        let av = &values[at(a)];
                        for ((d, &gv), &x) in gin[at(b)].iter_mut().zip(g).zip(av) {
                            *d += gv * x;
                        }
                    }
                }
                Op::AddRows(a, b) => {
                    if wants(a) {
                        accumulate(&mut gin[at(a)], g, S::one());
                    }
                    if wants(b) {
                        let db = &mut gin[at(b)];
                        let w = db.len();
                        for grow in g.chunks_exact(w) {
                            for (d, &gv) in db.iter_mut().zip(grow) {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::Affine(a, scale, _) => accumulate(&mut gin[at(a)], g, scale),
                Op::Sigmoid(a) => {
                    for ((d, &gv), &y) in gin[at(a)].iter_mut().zip(g).zip(out) {
                        *d += gv * y * (S::one() - y);
                    }
                }
                Op::Tanh(a) => {
                    for ((d, &gv), &y) in gin[at(a)].iter_mut().zip(g).zip(out) {
                        *d += gv * (S::one() - y * y);
                    }
                }
                Op::Softplus(a) => {
                    let xv = &values[at(a)];
                    for ((d, &gv), &x) in gin[at(a)].iter_mut().zip(g).zip(xv) {
                        *d += gv * sigmoid(x);
                    }
                }
                Op::Sum(a) => {
                    let gv = g[0];
                    gin[at(a)].iter_mut().for_each(|d| *d += gv);
                }
                Op::Softmax(a) => {
                    let w = node.dims.last();
                    let da = &mut gin[at(a)];
                    for ((drow, grow), yrow) in da.chunks_exact_mut(w).zip(g.chunks_exact(w)).zip(out.chunks_exact(w)) {
                        let dot: S = grow.iter().zip(yrow).map(|(&x, &y)| x * y).sum();
                        for ((d, &gv), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (gv - dot);
                        }
                    }
                }
                Op::LogSoftmax(a) => {
                    let w = node.dims.last();
                    let da = &mut gin[at(a)];
                    for ((drow, grow), yrow) in da.chunks_exact_mut(w).zip(g.chunks_exact(w)).zip(out.chunks_exact(w)) {
                        let total: S = grow.iter().copied().sum();
                        for ((d, &gv), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += gv - y.exp() * total;
                        }
                    }
                }
                Op::LogSumExp(a) => {
                    let (gv, lse) = (g[0], out[0]);
                    let xv = &values[at(a)];
                    for (d, &x) in gin[at(a)].iter_mut().zip(xv) {
                        *d += gv * (x - lse).exp();
                    }
                }
                Op::Concat { first, count, axis } => {
                    let parts = &operands[first..first + count];
                    let outer: usize = node.dims.as_slice()[..axis].iter().product();
                    let mut pos = 0;
                    for o in 0..outer {
                        for &p in parts {
                            let r = at(p);
                            let w = r.len() / outer;
                            if wants(p) {
                                let dst = &mut gin[r.start + o * w..r.start + (o + 1) * w];
                                accumulate(dst, &g[pos..pos + w], S::one());
                            }
                            pos += w;
                        }
                    }
                }
                Op::Reshape(a) => accumulate(&mut gin[at(a)], g, S::one()),
                Op::SliceLast(a, start) => {
                    let len = node.dims.last();
                    let w = nodes[a.index()].dims.last();
                    for (drow, grow) in gin[at(a)].chunks_exact_mut(w).zip(g.chunks_exact(len)) {
                        accumulate(&mut drow[start..start + len], grow, S::one());
                    }
                }
                Op::Vectorize(m) => {
                    let dm = nodes[m.index()].dims;
                    let (rows, cols) = (dm.d[0], dm.d[1]);
                    let dst = &mut gin[at(m)];
                    for n in 0..rows {
                        for j in 0..cols {
                            dst[n * cols + j] += g[j * rows + n];
                        }
                    }
                }
                Op::Matricize(x) => {
                    let (rows, cols) = (node.dims.d[0], node.dims.d[1]);
                    let dst = &mut gin[at(x)];
                    for n in 0..rows {
                        for j in 0..cols {
                            dst[j * rows + n] += g[n * cols + j];
                        }
                    }
                }
                Op::GaussLogPdf { mu, sigma, y } => {
                    let (rm, rs) = (at(mu), at(sigma));
                    for i in 0..node.len {
                        let (m, s) = (values[rm.start + i], values[rs.start + i]);
                        let z = (y - m) / s;
                        if wants(mu) {
                            gin[rm.start + i] += g[i] * z / s;
                        }
                        if wants(sigma) {
                            gin[rs.start + i] += g[i] * (z * z - S::one()) / s;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[inline]
fn accumulate<S: Scalar>(dst: &mut [S], src: &[S], scale: S) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}
