use serde::{Deserialize, Serialize};

use super::kernels;
use crate::error::{ImvError, Result};
use crate::scalar::Scalar;

/// Dense row-major array with shape metadata.
///
/// Every extent is positive and `shape.iter().product() == data.len()`.
/// A zero-dimensional shape holds exactly one value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NdArray<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> NdArray<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(ImvError::Argument(format!(
                "array extents must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(ImvError::dim("NdArray::new", &shape, &[data.len()]));
        }
        Ok(NdArray { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        assert!(shape.iter().all(|&e| e > 0), "zero extent in {shape:?}");
        NdArray {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: S) -> Self {
        NdArray {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Self::zeros(&[n, n]);
        for i in 0..n {
            a.data[i * n + i] = S::one();
        }
        a
    }

    /// Build from a function of the flat (row-major) index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let mut a = Self::zeros(shape);
        a.data.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
        a
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(ImvError::Argument("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Value at a multi-index.
    pub fn at(&self, idx: &[usize]) -> S {
        assert_eq!(idx.len(), self.shape.len(), "index rank");
        let mut flat = 0;
        for (&i, &e) in idx.iter().zip(&self.shape) {
            assert!(i < e, "index {idx:?} out of bounds for {:?}", self.shape);
            flat = flat * e + i;
        }
        self.data[flat]
    }

    /// Row `i` of a 2-D array, or block `i` of any array along its first axis.
    pub fn row(&self, i: usize) -> &[S] {
        let w = self.data.len() / self.shape[0];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        NdArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> NdArray<T> {
        NdArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| T::lit(v.to_f64_lossy())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> S {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), S::max)
    }
}

fn same_shape<S: Scalar>(op: &'static str, a: &NdArray<S>, b: &NdArray<S>) -> Result<()> {
    if a.shape != b.shape {
        return Err(ImvError::dim(op, &a.shape, &b.shape));
    }
    Ok(())
}

/// Matrix product of `[p×q]` and `[q×r]`.
pub fn matmul<S: Scalar>(a: &NdArray<S>, b: &NdArray<S>) -> Result<NdArray<S>> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0] {
        return Err(ImvError::dim("matmul", &a.shape, &b.shape));
    }
    let (p, q, r) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = NdArray::zeros(&[p, r]);
    kernels::matmul(&a.data, &b.data, p, q, r, &mut out.data);
    Ok(out)
}

/// Tensor-dot along the variable axis: `w [N×d×k]`, `h [N×k]` → `[N×d]`,
/// with output row `n` equal to `w[n] · h[n]`.
pub fn tensor_dot<S: Scalar>(w: &NdArray<S>, h: &NdArray<S>) -> Result<NdArray<S>> {
    if w.ndim() != 3 || h.ndim() != 2 || w.shape[0] != h.shape[0] || w.shape[2] != h.shape[1] {
        return Err(ImvError::dim("tensor_dot", &w.shape, &h.shape));
    }
    let (n, d, k) = (w.shape[0], w.shape[1], w.shape[2]);
    let mut out = NdArray::zeros(&[n, d]);
    kernels::tensor_dot(&w.data, &h.data, n, d, k, &mut out.data);
    Ok(out)
}

pub fn sigmoid<S: Scalar>(a: &NdArray<S>) -> NdArray<S> {
    let mut out = a.clone();
    kernels::sigmoid_map(&a.data, &mut out.data);
    out
}

pub fn tanh<S: Scalar>(a: &NdArray<S>) -> NdArray<S> {
    a.map(S::tanh)
}

pub fn add<S: Scalar>(a: &NdArray<S>, b: &NdArray<S>) -> Result<NdArray<S>> {
    same_shape("add", a, b)?;
    Ok(NdArray {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect(),
    })
}

pub fn mul<S: Scalar>(a: &NdArray<S>, b: &NdArray<S>) -> Result<NdArray<S>> {
    same_shape("mul", a, b)?;
    Ok(NdArray {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| x * y).collect(),
    })
}

/// Concatenate along `axis`; all other extents must agree.
pub fn concat<S: Scalar>(parts: &[&NdArray<S>], axis: usize) -> Result<NdArray<S>> {
    let first = parts
        .first()
        .ok_or_else(|| ImvError::Argument("concat of zero arrays".into()))?;
    let shapes: Vec<&[usize]> = parts.iter().map(|p| p.shape()).collect();
    let out_shape = concat_shape(&shapes, axis)?;
    let outer: usize = first.shape[..axis].iter().product();
    let inner: Vec<usize> = parts.iter().map(|p| p.len() / outer).collect();
    let datas: Vec<&[S]> = parts.iter().map(|p| p.data()).collect();
    let mut out = NdArray::zeros(&out_shape);
    kernels::concat(&datas, &inner, outer, &mut out.data);
    Ok(out)
}

pub(crate) fn concat_shape(shapes: &[&[usize]], axis: usize) -> Result<Vec<usize>> {
    let first = shapes[0];
    if axis >= first.len() {
        return Err(ImvError::Argument(format!(
            "concat axis {axis} out of range for rank {}",
            first.len()
        )));
    }
    let mut out = first.to_vec();
    out[axis] = 0;
    for s in shapes {
        let compatible = s.len() == first.len()
            && s.iter()
                .zip(first)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(ImvError::dim("concat", first, s));
        }
        out[axis] += s[axis];
    }
    Ok(out)
}

/// Stack the columns of an `N×d` matrix into one vector of length `N·d`
/// (column-major order: entry `(n, j)` lands at `j·N + n`).
pub fn vectorize<S: Scalar>(m: &NdArray<S>) -> Result<NdArray<S>> {
    if m.ndim() != 2 {
        return Err(ImvError::dim("vectorize", &m.shape, &[]));
    }
    let (rows, cols) = (m.shape[0], m.shape[1]);
    let mut out = NdArray::zeros(&[rows * cols]);
    kernels::vectorize(&m.data, rows, cols, &mut out.data);
    Ok(out)
}

/// Exact inverse of [`vectorize`].
pub fn matricize<S: Scalar>(v: &NdArray<S>, rows: usize, cols: usize) -> Result<NdArray<S>> {
    if v.ndim() != 1 || rows == 0 || cols == 0 || rows * cols != v.len() {
        return Err(ImvError::dim("matricize", &v.shape, &[rows, cols]));
    }
    let mut out = NdArray::zeros(&[rows, cols]);
    kernels::matricize(&v.data, rows, cols, &mut out.data);
    Ok(out)
}

/// Softmax of a logit vector, computed with max subtraction.
pub fn softmax<S: Scalar>(logits: &[S]) -> Result<Vec<S>> {
    if logits.is_empty() {
        return Err(ImvError::Argument("softmax of an empty vector".into()));
    }
    let mut out = vec![S::zero(); logits.len()];
    kernels::softmax_rows(logits, logits.len(), &mut out);
    Ok(out)
}

/// Softmax along the last axis.
pub fn softmax_last<S: Scalar>(a: &NdArray<S>) -> NdArray<S> {
    let width = a.shape.last().copied().unwrap_or(1);
    let mut out = a.clone();
    kernels::softmax_rows(&a.data, width, &mut out.data);
    out
}
