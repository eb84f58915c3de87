use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::kernels::{self, axis_split, broadcast_binary, reduce_to_shape, reduced_shape};
use super::params::{Bound, ParamStore};
use super::tensor::Tensor;
use super::AutodiffError;
use crate::Scalar;

static NEXT_TAPE: AtomicUsize = AtomicUsize::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: usize,
    index: usize,
}

impl Var {
    pub fn tape_id(self) -> usize {
        self.tape
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, T),
    AddScalar(usize),
    MatMul(usize, usize),
    Sum(usize),
    Mean(usize),
    SumAxis(usize, usize),
    MaxAxis(usize, Vec<usize>),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Sqrt(usize),
    Softplus(usize),
    Clip(usize, T, T),
    Huber(usize, T),
    Minimum(usize, usize),
    Softmax(usize),
    LogSoftmax(usize),
    GatherLast(usize, Vec<usize>),
    IndexRows(usize, Vec<usize>),
    Reshape(usize),
    ConcatLast(usize, usize),
    SliceLast(usize, usize),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run reverse-mode tape. Build one per forward pass.
///
/// Operations panic on shape errors and on mixing variables from different
/// tapes; [`Tape::backward`] reports the recoverable failures.
#[derive(Debug)]
pub struct Tape<T: Scalar> {
    id: usize,
    nodes: RefCell<Vec<Node<T>>>,
    first_nan: Cell<Option<&'static str>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of every gradient-requiring leaf reachable from a loss.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    tape: usize,
    leaves: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a leaf, `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        assert_eq!(v.tape, self.tape, "variable from a different tape");
        self.leaves.get(&v.index)
    }

    /// Gradients for every parameter of a bound store, in [`ParamId`](super::ParamId)
    /// order. Parameters the loss does not reach get zeros.
    pub fn for_bound(&self, bound: &Bound) -> Vec<Tensor<T>> {
        bound
            .vars()
            .iter()
            .zip(bound.shapes())
            .map(|(v, s)| {
                self.leaves
                    .get(&v.index)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(s))
            })
            .collect()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            first_nan: Cell::new(None),
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, v: Var) -> usize {
        assert_eq!(
            v.tape, self.id,
            "contract violation: variable belongs to tape {} not {}",
            v.tape, self.id
        );
        v.index
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &'static str) -> Var {
        if self.first_nan.get().is_none() && value.has_nan() {
            self.first_nan.set(Some(name));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: nodes.len() - 1,
        }
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes.borrow()[i].requires_grad
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true, "leaf")
    }

    /// A leaf treated as a constant.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false, "constant")
    }

    /// Binds every parameter of `store` as a gradient-requiring leaf.
    pub fn bind(&self, store: &ParamStore<T>) -> Bound {
        self.bind_with(store, true)
    }

    /// Binds parameters as constants (target networks, acting).
    pub fn bind_frozen(&self, store: &ParamStore<T>) -> Bound {
        self.bind_with(store, false)
    }

    fn bind_with(&self, store: &ParamStore<T>, trainable: bool) -> Bound {
        let mut vars = Vec::with_capacity(store.len());
        let mut shapes = Vec::with_capacity(store.len());
        for t in store.tensors() {
            shapes.push(t.shape().to_vec());
            vars.push(if trainable {
                self.leaf(t.clone())
            } else {
                self.constant(t.clone())
            });
        }
        Bound::new(vars, shapes)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        let i = self.check(v);
        Ref::map(self.nodes.borrow(), |n| &n[i].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    pub fn item(&self, v: Var) -> T {
        self.value(v).item()
    }

    fn unary(&self, x: Var, name: &'static str, f: impl Fn(T) -> T, op: fn(usize) -> Op<T>) -> Var {
        let i = self.check(x);
        let value = self.value(x).map(f);
        self.push(value, op(i), self.rg(i), name)
    }

    fn binary(&self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T, op: fn(usize, usize) -> Op<T>) -> Var {
        let (i, j) = (self.check(a), self.check(b));
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            broadcast_binary(&va, &vb, f).unwrap_or_else(|| {
                panic!(
                    "contract violation: {name} cannot broadcast {:?} with {:?}",
                    va.shape(),
                    vb.shape()
                )
            })
        };
        let rg = self.rg(i) || self.rg(j);
        self.push(value, op(i, j), rg, name)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, "div", |x, y| x / y, Op::Div)
    }

    pub fn neg(&self, x: Var) -> Var {
        self.unary(x, "neg", |v| -v, Op::Neg)
    }

    pub fn scale(&self, x: Var, c: T) -> Var {
        let i = self.check(x);
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale(i, c), self.rg(i), "scale")
    }

    pub fn add_scalar(&self, x: Var, c: T) -> Var {
        let i = self.check(x);
        let value = self.value(x).map(|v| v + c);
        self.push(value, Op::AddScalar(i), self.rg(i), "add_scalar")
    }

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (i, j) = (self.check(a), self.check(b));
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            let (sa, sb) = (va.shape(), vb.shape());
            assert!(
                sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
                "contract violation: matmul {sa:?} x {sb:?}"
            );
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            Tensor::from_vec(&[m, n], kernels::matmul(va.data(), vb.data(), m, k, n))
        };
        let rg = self.rg(i) || self.rg(j);
        self.push(value, Op::MatMul(i, j), rg, "matmul")
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self, x: Var) -> Var {
        let i = self.check(x);
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(i), self.rg(i), "sum")
    }

    pub fn mean(&self, x: Var) -> Var {
        let i = self.check(x);
        let value = {
            let v = self.value(x);
            Tensor::scalar(v.sum() / T::of(v.len() as f64))
        };
        self.push(value, Op::Mean(i), self.rg(i), "mean")
    }

    pub fn sum_axis(&self, x: Var, axis: usize, keepdim: bool) -> Var {
        let i = self.check(x);
        let value = {
            let v = self.value(x);
            let (outer, len, inner) = axis_split(v.shape(), axis);
            let mut out = vec![T::zero(); outer * inner];
            let d = v.data();
            for o in 0..outer {
                for k in 0..len {
                    let base = (o * len + k) * inner;
                    for (q, &xv) in d[base..base + inner].iter().enumerate() {
                        out[o * inner + q] += xv;
                    }
                }
            }
            Tensor::from_vec(&reduced_shape(v.shape(), axis, keepdim), out)
        };
        self.push(value, Op::SumAxis(i, axis), self.rg(i), "sum_axis")
    }

    pub fn mean_axis(&self, x: Var, axis: usize, keepdim: bool) -> Var {
        let len = self.value(x).shape()[axis];
        let s = self.sum_axis(x, axis, keepdim);
        self.scale(s, T::one() / T::of(len as f64))
    }

    /// Maximum along `axis`; the gradient flows to the first maximal element.
    pub fn max_axis(&self, x: Var, axis: usize, keepdim: bool) -> Var {
        let i = self.check(x);
        let (value, arg) = {
            let v = self.value(x);
            let (outer, len, inner) = axis_split(v.shape(), axis);
            let d = v.data();
            let mut out = Vec::with_capacity(outer * inner);
            let mut arg = Vec::with_capacity(outer * inner);
            for o in 0..outer {
                for q in 0..inner {
                    let mut best = o * len * inner + q;
                    for k in 1..len {
                        let idx = (o * len + k) * inner + q;
                        if d[idx] > d[best] {
                            best = idx;
                        }
                    }
                    out.push(d[best]);
                    arg.push(best);
                }
            }
            (Tensor::from_vec(&reduced_shape(v.shape(), axis, keepdim), out), arg)
        };
        self.push(value, Op::MaxAxis(i, arg), self.rg(i), "max_axis")
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, "relu", |v| if v > T::zero() { v } else { T::zero() }, Op::Relu)
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, "tanh", T::tanh, Op::Tanh)
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, "exp", T::exp, Op::Exp)
    }

    pub fn log(&self, x: Var) -> Var {
        self.unary(x, "log", T::ln, Op::Log)
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary(x, "square", |v| v * v, Op::Square)
    }

    pub fn sqrt(&self, x: Var) -> Var {
        self.unary(x, "sqrt", T::sqrt, Op::Sqrt)
    }

    pub fn softplus(&self, x: Var) -> Var {
        self.unary(x, "softplus", kernels::softplus, Op::Softplus)
    }

    pub fn clip(&self, x: Var, lo: T, hi: T) -> Var {
        let i = self.check(x);
        let value = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(value, Op::Clip(i, lo, hi), self.rg(i), "clip")
    }

    /// Elementwise Huber function with kink at `±delta`.
    pub fn huber(&self, x: Var, delta: T) -> Var {
        let i = self.check(x);
        let value = self.value(x).map(|v| kernels::huber(v, delta));
        self.push(value, Op::Huber(i, delta), self.rg(i), "huber")
    }

    /// Elementwise minimum of two same-shaped tensors.
    pub fn minimum(&self, a: Var, b: Var) -> Var {
        let (i, j) = (self.check(a), self.check(b));
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            assert_eq!(va.shape(), vb.shape(), "contract violation: minimum shape mismatch");
            va.zip_map(&vb, T::min)
        };
        let rg = self.rg(i) || self.rg(j);
        self.push(value, Op::Minimum(i, j), rg, "minimum")
    }

    /// Softmax over the last axis.
    pub fn softmax(&self, x: Var) -> Var {
        let i = self.check(x);
        let value = {
            let v = self.value(x);
            let w = *v.shape().last().expect("softmax of a scalar");
            Tensor::from_vec(v.shape(), kernels::softmax_rows(v.data(), w))
        };
        self.push(value, Op::Softmax(i), self.rg(i), "softmax")
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self, x: Var) -> Var {
        let i = self.check(x);
        let value = {
            let v = self.value(x);
            let w = *v.shape().last().expect("log_softmax of a scalar");
            Tensor::from_vec(v.shape(), kernels::log_softmax_rows(v.data(), w))
        };
        self.push(value, Op::LogSoftmax(i), self.rg(i), "log_softmax")
    }

    /// Picks `x[.., idx[r]]` for every row `r` of the leading dimensions.
    pub fn gather_last(&self, x: Var, idx: &[usize]) -> Var {
        let i = self.check(x);
        let (value, flat) = {
            let v = self.value(x);
            let w = *v.shape().last().expect("gather of a scalar");
            let rows = v.len() / w;
            assert_eq!(rows, idx.len(), "contract violation: gather index count");
            let mut flat = Vec::with_capacity(rows);
            let mut out = Vec::with_capacity(rows);
            for (r, &k) in idx.iter().enumerate() {
                assert!(k < w, "contract violation: gather index {k} out of range {w}");
                flat.push(r * w + k);
                out.push(v.data()[r * w + k]);
            }
            let shape = &v.shape()[..v.rank() - 1];
            (Tensor::from_vec(shape, out), flat)
        };
        self.push(value, Op::GatherLast(i, flat), self.rg(i), "gather")
    }

    /// Selects rows (first axis) by index; rows may repeat.
    pub fn index_rows(&self, x: Var, idx: &[usize]) -> Var {
        let i = self.check(x);
        let value = {
            let v = self.value(x);
            let n = v.shape()[0];
            let w = v.len() / n.max(1);
            let mut out = Vec::with_capacity(idx.len() * w);
            for &r in idx {
                assert!(r < n, "contract violation: row {r} out of range {n}");
                out.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
            let mut shape = v.shape().to_vec();
            shape[0] = idx.len();
            Tensor::from_vec(&shape, out)
        };
        self.push(value, Op::IndexRows(i, idx.to_vec()), self.rg(i), "index_rows")
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Var {
        let i = self.check(x);
        let value = self.value(x).clone().reshaped(shape);
        self.push(value, Op::Reshape(i), self.rg(i), "reshape")
    }

    /// Concatenates along the last axis; leading dimensions must match.
    pub fn concat_last(&self, a: Var, b: Var) -> Var {
        let (i, j) = (self.check(a), self.check(b));
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            let (wa, wb) = (*va.shape().last().unwrap(), *vb.shape().last().unwrap());
            assert_eq!(
                va.shape()[..va.rank() - 1],
                vb.shape()[..vb.rank() - 1],
                "contract violation: concat leading shapes"
            );
            let rows = va.len() / wa.max(1);
            let mut out = Vec::with_capacity(va.len() + vb.len());
            for r in 0..rows {
                out.extend_from_slice(&va.data()[r * wa..(r + 1) * wa]);
                out.extend_from_slice(&vb.data()[r * wb..(r + 1) * wb]);
            }
            let mut shape = va.shape().to_vec();
            *shape.last_mut().unwrap() = wa + wb;
            Tensor::from_vec(&shape, out)
        };
        let rg = self.rg(i) || self.rg(j);
        self.push(value, Op::ConcatLast(i, j), rg, "concat")
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&self, x: Var, start: usize, len: usize) -> Var {
        let i = self.check(x);
        let value = {
            let v = self.value(x);
            let w = *v.shape().last().unwrap();
            assert!(start + len <= w, "contract violation: slice out of range");
            let rows = v.len() / w.max(1);
            let mut out = Vec::with_capacity(rows * len);
            for r in 0..rows {
                out.extend_from_slice(&v.data()[r * w + start..r * w + start + len]);
            }
            let mut shape = v.shape().to_vec();
            *shape.last_mut().unwrap() = len;
            Tensor::from_vec(&shape, out)
        };
        self.push(value, Op::SliceLast(i, start), self.rg(i), "slice")
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        let root = self.check(loss);
        let nodes = self.nodes.borrow();
        if nodes[root].value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                shape: nodes[root].value.shape().to_vec(),
            });
        }
        if let Some(op) = self.first_nan.get() {
            return Err(AutodiffError::NonFinite { op });
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(root + 1, || None);
        grads[root] = Some(Tensor::ones(nodes[root].value.shape()));
        let mut leaves = HashMap::new();

        for idx in (0..=root).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let mut send = |target: usize, contrib: Tensor<T>| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            };
            let val = |k: usize| &nodes[k].value;
            match &node.op {
                Op::Leaf => {
                    leaves.insert(idx, g);
                }
                Op::Add(a, b) => {
                    send(*a, reduce_to_shape(&g, val(*a).shape()));
                    send(*b, reduce_to_shape(&g, val(*b).shape()));
                }
                Op::Sub(a, b) => {
                    send(*a, reduce_to_shape(&g, val(*a).shape()));
                    send(*b, reduce_to_shape(&g.map(|v| -v), val(*b).shape()));
                }
                Op::Mul(a, b) => {
                    if nodes[*a].requires_grad {
                        let ga = broadcast_binary(&g, val(*b), |x, y| x * y).unwrap();
                        send(*a, reduce_to_shape(&ga, val(*a).shape()));
                    }
                    if nodes[*b].requires_grad {
                        let gb = broadcast_binary(&g, val(*a), |x, y| x * y).unwrap();
                        send(*b, reduce_to_shape(&gb, val(*b).shape()));
                    }
                }
                Op::Div(a, b) => {
                    if nodes[*a].requires_grad {
                        let ga = broadcast_binary(&g, val(*b), |x, y| x / y).unwrap();
                        send(*a, reduce_to_shape(&ga, val(*a).shape()));
                    }
                    if nodes[*b].requires_grad {
                        // d(a/b)/db = -(a/b)/b
                        let t = g.zip_map(&node.value, |x, q| -x * q);
                        let gb = broadcast_binary(&t, val(*b), |x, y| x / y).unwrap();
                        send(*b, reduce_to_shape(&gb, val(*b).shape()));
                    }
                }
                Op::Neg(a) => send(*a, g.map(|v| -v)),
                Op::Scale(a, c) => {
                    let c = *c;
                    send(*a, g.map(|v| v * c));
                }
                Op::AddScalar(a) => send(*a, g),
                Op::MatMul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                    if nodes[*a].requires_grad {
                        let ga = kernels::matmul_nt(g.data(), vb.data(), m, n, k);
                        send(*a, Tensor::from_vec(&[m, k], ga));
                    }
                    if nodes[*b].requires_grad {
                        let gb = kernels::matmul_tn(va.data(), g.data(), m, k, n);
                        send(*b, Tensor::from_vec(&[k, n], gb));
                    }
                }
                Op::Sum(a) => send(*a, Tensor::full(val(*a).shape(), g.item())),
                Op::Mean(a) => {
                    let n = T::of(val(*a).len() as f64);
                    send(*a, Tensor::full(val(*a).shape(), g.item() / n));
                }
                Op::SumAxis(a, axis) => {
                    let shape = val(*a).shape();
                    let (outer, len, inner) = axis_split(shape, *axis);
                    let mut out = vec![T::zero(); outer * len * inner];
                    let gd = g.data();
                    for o in 0..outer {
                        for k in 0..len {
                            let base = (o * len + k) * inner;
                            out[base..base + inner].copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                        }
                    }
                    send(*a, Tensor::from_vec(shape, out));
                }
                Op::MaxAxis(a, arg) => {
                    let mut out = Tensor::zeros(val(*a).shape());
                    for (&pos, &gv) in arg.iter().zip(g.data()) {
                        out.data_mut()[pos] += gv;
                    }
                    send(*a, out);
                }
                Op::Relu(a) => send(*a, g.zip_map(val(*a), |gv, x| if x > T::zero() { gv } else { T::zero() })),
                Op::Tanh(a) => send(*a, g.zip_map(&node.value, |gv, y| gv * (T::one() - y * y))),
                Op::Exp(a) => send(*a, g.zip_map(&node.value, |gv, y| gv * y)),
                Op::Log(a) => send(*a, g.zip_map(val(*a), |gv, x| gv / x)),
                Op::Square(a) => send(*a, g.zip_map(val(*a), |gv, x| gv * (x + x))),
                Op::Sqrt(a) => send(*a, g.zip_map(&node.value, |gv, y| gv / (y + y))),
                Op::Softplus(a) => send(*a, g.zip_map(val(*a), |gv, x| gv * kernels::sigmoid(x))),
                Op::Clip(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    send(*a, g.zip_map(val(*a), |gv, x| if x >= lo && x <= hi { gv } else { T::zero() }));
                }
                Op::Huber(a, delta) => {
                    let d = *delta;
                    send(*a, g.zip_map(val(*a), |gv, x| gv * x.max(-d).min(d)));
                }
                Op::Minimum(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let mut ga = Tensor::zeros(va.shape());
                    let mut gb = Tensor::zeros(vb.shape());
                    for (k, &gv) in g.data().iter().enumerate() {
                        if va.data()[k] <= vb.data()[k] {
                            ga.data_mut()[k] = gv;
                        } else {
                            gb.data_mut()[k] = gv;
                        }
                    }
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let w = *y.shape().last().unwrap();
                    let mut out = vec![T::zero(); y.len()];
                    for ((yr, gr), or) in y.data().chunks(w).zip(g.data().chunks(w)).zip(out.chunks_mut(w)) {
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for ((o, &p), &q) in or.iter_mut().zip(yr).zip(gr) {
                            *o = p * (q - dot);
                        }
                    }
                    send(*a, Tensor::from_vec(y.shape(), out));
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let w = *y.shape().last().unwrap();
                    let mut out = vec![T::zero(); y.len()];
                    for ((yr, gr), or) in y.data().chunks(w).zip(g.data().chunks(w)).zip(out.chunks_mut(w)) {
                        let gs: T = gr.iter().copied().sum();
                        for ((o, &ly), &q) in or.iter_mut().zip(yr).zip(gr) {
                            *o = q - ly.exp() * gs;
                        }
                    }
                    send(*a, Tensor::from_vec(y.shape(), out));
                }
                Op::GatherLast(a, flat) => {
                    let mut out = Tensor::zeros(val(*a).shape());
                    for (&pos, &gv) in flat.iter().zip(g.data()) {
                        out.data_mut()[pos] += gv;
                    }
                    send(*a, out);
                }
                Op::IndexRows(a, idx) => {
                    let shape = val(*a).shape();
                    let w = val(*a).len() / shape[0].max(1);
                    let mut out = Tensor::zeros(shape);
                    for (r, &src) in idx.iter().enumerate() {
                        let dst = &mut out.data_mut()[src * w..(src + 1) * w];
                        for (d, &gv) in dst.iter_mut().zip(&g.data()[r * w..(r + 1) * w]) {
                            *d += gv;
                        }
                    }
                    send(*a, out);
                }
                Op::Reshape(a) => send(*a, g.reshaped(val(*a).shape())),
                Op::ConcatLast(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let (wa, wb) = (*va.shape().last().unwrap(), *vb.shape().last().unwrap());
                    let rows = va.len() / wa.max(1);
                    let mut ga = Vec::with_capacity(va.len());
                    let mut gb = Vec::with_capacity(vb.len());
                    for r in 0..rows {
                        let row = &g.data()[r * (wa + wb)..(r + 1) * (wa + wb)];
                        ga.extend_from_slice(&row[..wa]);
                        gb.extend_from_slice(&row[wa..]);
                    }
                    send(*a, Tensor::from_vec(va.shape(), ga));
                    send(*b, Tensor::from_vec(vb.shape(), gb));
                }
                Op::SliceLast(a, start) => {
                    let va = val(*a);
                    let w = *va.shape().last().unwrap();
                    let len = *g.shape().last().unwrap();
                    let rows = va.len() / w.max(1);
                    let mut out = Tensor::zeros(va.shape());
                    for r in 0..rows {
                        out.data_mut()[r * w + start..r * w + start + len]
                            .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                    }
                    send(*a, out);
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            leaves,
        })
    }
}
