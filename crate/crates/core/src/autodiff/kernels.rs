//! Dense kernels shared by the forward and backward passes.

use super::tensor::{numel, Tensor};
use crate::Scalar;

/// Numpy-style broadcast of two shapes, aligned at the trailing dimension.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for (i, o) in out.iter_mut().enumerate() {
        let da = dim_at(a, i, rank);
        let db = dim_at(b, i, rank);
        *o = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return None;
        };
    }
    Some(out)
}

fn dim_at(shape: &[usize], i: usize, rank: usize) -> usize {
    let offset = rank - shape.len();
    if i < offset {
        1
    } else {
        shape[i - offset]
    }
}

/// Strides of `shape` viewed in an output of shape `out`; broadcast axes get stride 0.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..rank).rev() {
        let d = dim_at(shape, i, rank);
        strides[i] = if d == 1 { 0 } else { acc };
        acc *= d;
    }
    strides
}

/// True when `small` (ignoring leading ones) is a trailing block of `big`,
/// i.e. `small` repeats contiguously through `big`.
fn is_trailing_block(small: &[usize], big: &[usize]) -> bool {
    let first = small.iter().position(|&d| d != 1).unwrap_or(small.len());
    let core = &small[first..];
    core.len() <= big.len() && big[big.len() - core.len()..] == *core
}

/// Visits every element of `out` in row-major order together with the
/// matching offsets into two broadcast operands.
fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut visit: impl FnMut(usize, usize, usize),
) {
    let rank = out.len();
    let n = numel(out);
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for k in 0..n {
        visit(k, oa, ob);
        let mut d = rank;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn broadcast_binary<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Option<Tensor<T>> {
    if a.shape() == b.shape() {
        return Some(a.zip_map(b, f));
    }
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let n = numel(&out_shape);
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(n);
    if a.shape() == out_shape.as_slice() && is_trailing_block(b.shape(), &out_shape) {
        let m = bd.len();
        for (i, &x) in ad.iter().enumerate() {
            out.push(f(x, bd[i % m]));
        }
    } else if b.shape() == out_shape.as_slice() && is_trailing_block(a.shape(), &out_shape) {
        let m = ad.len();
        for (i, &y) in bd.iter().enumerate() {
            out.push(f(ad[i % m], y));
        }
    } else {
        let sa = broadcast_strides(a.shape(), &out_shape);
        let sb = broadcast_strides(b.shape(), &out_shape);
        out.resize(n, T::zero());
        for_each_broadcast(&out_shape, &sa, &sb, |k, oa, ob| out[k] = f(ad[oa], bd[ob]));
    }
    Some(Tensor::from_vec(&out_shape, out))
}

/// Sums `g` down to `shape`, undoing a broadcast.
pub(crate) fn reduce_to_shape<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let m = numel(shape);
    let mut out = vec![T::zero(); m];
    if m == 1 {
        out[0] = g.sum();
    } else if is_trailing_block(shape, g.shape()) {
        for (i, &x) in g.data().iter().enumerate() {
            out[i % m] += x;
        }
    } else {
        let gs = g.shape().to_vec();
        let st = broadcast_strides(shape, &gs);
        let zero = vec![0; gs.len()];
        let gd = g.data();
        for_each_broadcast(&gs, &st, &zero, |k, o, _| out[o] += gd[k]);
    }
    Tensor::from_vec(shape, out)
}

/// `[m,k] x [k,n] -> [m,n]`
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `[m,n] x [k,n]^T -> [m,k]`
pub(crate) fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * k + p] = acc;
        }
    }
    out
}

/// `[m,k]^T x [m,n] -> [k,n]`
pub(crate) fn matmul_tn<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += aip * gv;
            }
        }
    }
    out
}

/// Splits a shape around `axis` into `(outer, len, inner)` extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut s = shape.to_vec();
    if keepdim {
        s[axis] = 1;
    } else {
        s.remove(axis);
    }
    s
}

pub(crate) fn softmax_rows<T: Scalar>(x: &[T], width: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (xr, or) in x.chunks(width).zip(out.chunks_mut(width)) {
        let m = xr.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = (v - m).exp();
            s += *o;
        }
        for o in or.iter_mut() {
            *o /= s;
        }
    }
    out
}

pub(crate) fn log_softmax_rows<T: Scalar>(x: &[T], width: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (xr, or) in x.chunks(width).zip(out.chunks_mut(width)) {
        let m = xr.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + xr.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = v - lse;
        }
    }
    out
}

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn huber<T: Scalar>(x: T, delta: T) -> T {
    let a = x.abs();
    if a <= delta {
        T::of(0.5) * x * x
    } else {
        delta * (a - T::of(0.5) * delta)
    }
}
