//! Slice-level forward/backward kernels shared by `NdArray` ops and the tape.
//! Callers validate shapes; kernels index blindly.

use crate::scalar::{sigmoid, softplus, Scalar};

/// `out[p×r] = a[p×q] · b[q×r]`
pub(crate) fn matmul<S: Scalar>(a: &[S], b: &[S], p: usize, q: usize, r: usize, out: &mut [S]) {
    out[..p * r].iter_mut().for_each(|o| *o = S::zero());
    for i in 0..p {
        let arow = &a[i * q..(i + 1) * q];
        let orow = &mut out[i * r..(i + 1) * r];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b[k * r..(k + 1) * r];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
}

/// `da += g · bᵀ`
pub(crate) fn matmul_grad_a<S: Scalar>(g: &[S], b: &[S], p: usize, q: usize, r: usize, da: &mut [S]) {
    for i in 0..p {
        let grow = &g[i * r..(i + 1) * r];
        let darow = &mut da[i * q..(i + 1) * q];
        for (k, d) in darow.iter_mut().enumerate() {
            let brow = &b[k * r..(k + 1) * r];
            let mut acc = S::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            *d += acc;
        }
    }
}

/// `db += aᵀ · g`
pub(crate) fn matmul_grad_b<S: Scalar>(g: &[S], a: &[S], p: usize, q: usize, r: usize, db: &mut [S]) {
    for i in 0..p {
        let grow = &g[i * r..(i + 1) * r];
        let arow = &a[i * q..(i + 1) * q];
        for (k, &aik) in arow.iter().enumerate() {
            let dbrow = &mut db[k * r..(k + 1) * r];
            for (d, &gv) in dbrow.iter_mut().zip(grow) {
                *d += aik * gv;
            }
        }
    }
}

/// `out[p] = a[p×q] · v[q]`
#[inline]
pub(crate) fn matvec<S: Scalar>(a: &[S], v: &[S], p: usize, q: usize, out: &mut [S]) {
    for (i, o) in out[..p].iter_mut().enumerate() {
        let row = &a[i * q..(i + 1) * q];
        let mut acc = S::zero();
        for (&x, &y) in row.iter().zip(v) {
            acc += x * y;
        }
        *o = acc;
    }
}

/// Adjoints of `matvec`: `da += g vᵀ`, `dv += aᵀ g`. Either side may be skipped.
#[inline]
pub(crate) fn matvec_grad<S: Scalar>(
    g: &[S],
    a: &[S],
    v: &[S],
    p: usize,
    q: usize,
    da: Option<&mut [S]>,
    dv: Option<&mut [S]>,
) {
    if let Some(da) = da {
        for (i, &gi) in g[..p].iter().enumerate() {
            let row = &mut da[i * q..(i + 1) * q];
            for (d, &vj) in row.iter_mut().zip(v) {
                *d += gi * vj;
            }
        }
    }
    if let Some(dv) = dv {
        for (i, &gi) in g[..p].iter().enumerate() {
            let row = &a[i * q..(i + 1) * q];
            for (d, &aij) in dv[..q].iter_mut().zip(row) {
                *d += aij * gi;
            }
        }
    }
}

/// Block-diagonal product: `out[n] = w[n] (p×k) · h[n] (k)` for each of `blocks` blocks.
pub(crate) fn tensor_dot<S: Scalar>(w: &[S], h: &[S], blocks: usize, p: usize, k: usize, out: &mut [S]) {
    for n in 0..blocks {
        matvec(
            &w[n * p * k..(n + 1) * p * k],
            &h[n * k..(n + 1) * k],
            p,
            k,
            &mut out[n * p..(n + 1) * p],
        );
    }
}

pub(crate) fn tensor_dot_grad<S: Scalar>(
    g: &[S],
    w: &[S],
    h: &[S],
    blocks: usize,
    p: usize,
    k: usize,
    mut dw: Option<&mut [S]>,
    mut dh: Option<&mut [S]>,
) {
    for n in 0..blocks {
        let wb = n * p * k..(n + 1) * p * k;
        let hb = n * k..(n + 1) * k;
        matvec_grad(
            &g[n * p..(n + 1) * p],
            &w[wb.clone()],
            &h[hb.clone()],
            p,
            k,
            dw.as_deref_mut().map(|d| &mut d[wb]),
            dh.as_deref_mut().map(|d| &mut d[hb]),
        );
    }
}

/// Softmax over consecutive rows of width `width`, with per-row max subtraction.
pub(crate) fn softmax_rows<S: Scalar>(x: &[S], width: usize, out: &mut [S]) {
    for (xr, or) in x.chunks_exact(width).zip(out.chunks_exact_mut(width)) {
        let m = xr.iter().copied().fold(S::neg_infinity(), S::max);
        let mut s = S::zero();
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = (v - m).exp();
            s += *o;
        }
        let inv = S::one() / s;
        or.iter_mut().for_each(|o| *o *= inv);
    }
}

pub(crate) fn log_softmax_rows<S: Scalar>(x: &[S], width: usize, out: &mut [S]) {
    for (xr, or) in x.chunks_exact(width).zip(out.chunks_exact_mut(width)) {
        let lse = crate::scalar::log_sum_exp(xr);
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = v - lse;
        }
    }
}

/// Column-major vectorization of an `rows×cols` row-major matrix.
pub(crate) fn vectorize<S: Scalar>(m: &[S], rows: usize, cols: usize, out: &mut [S]) {
    for n in 0..rows {
        for j in 0..cols {
            out[j * rows + n] = m[n * cols + j];
        }
    }
}

/// Inverse of [`vectorize`].
pub(crate) fn matricize<S: Scalar>(v: &[S], rows: usize, cols: usize, out: &mut [S]) {
    for n in 0..rows {
        for j in 0..cols {
            out[n * cols + j] = v[j * rows + n];
        }
    }
}

#[inline]
pub(crate) fn sigmoid_map<S: Scalar>(x: &[S], out: &mut [S]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = sigmoid(v);
    }
}

#[inline]
pub(crate) fn tanh_map<S: Scalar>(x: &[S], out: &mut [S]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v.tanh();
    }
}

#[inline]
pub(crate) fn softplus_map<S: Scalar>(x: &[S], out: &mut [S]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = softplus(v);
    }
}

/// Copy `count` contiguous chunks, interleaving inputs along `axis`.
/// `outer` is the product of extents before the axis; `inner[i]` the chunk size of input i.
pub(crate) fn concat<S: Scalar>(inputs: &[&[S]], inner: &[usize], outer: usize, out: &mut [S]) {
    let mut pos = 0;
    for o in 0..outer {
        for (src, &w) in inputs.iter().zip(inner) {
            out[pos..pos + w].copy_from_slice(&src[o * w..(o + 1) * w]);
            pos += w;
        }
    }
}
