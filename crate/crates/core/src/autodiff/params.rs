use serde::{Deserialize, Serialize};

use super::tape::Var;
use super::tensor::Tensor;
use super::AutodiffError;
use crate::Scalar;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Ordered, named parameter tensors of one network.
///
/// Layout (names, order, shapes) is fixed at construction, so a clone can
/// serve as a target network for the same model description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Overwrites one tensor, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<(), AutodiffError> {
        let cur = &mut self.tensors[id.0];
        if cur.shape() != value.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "set_param",
                expected: cur.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        *cur = value;
        Ok(())
    }

    /// Hard copy from a store with the same layout.
    pub fn copy_from(&mut self, other: &Self) {
        assert_eq!(self.names, other.names, "parameter layouts differ");
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            assert_eq!(dst.shape(), src.shape());
            dst.data_mut().copy_from_slice(src.data());
        }
    }

    /// Polyak averaging: `self <- tau * other + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, other: &Self, tau: T) {
        assert_eq!(self.names, other.names, "parameter layouts differ");
        if tau == T::one() {
            self.copy_from(other);
            return;
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = tau * s + (T::one() - tau) * *d;
            }
        }
    }

    /// All scalars concatenated in manifest order.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for t in &self.tensors {
            out.extend_from_slice(t.data());
        }
        out
    }
}

/// Parameters of one store recorded on a tape, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    shapes: Vec<Vec<usize>>,
}

impl Bound {
    pub(crate) fn new(vars: Vec<Var>, shapes: Vec<Vec<usize>>) -> Self {
        Self { vars, shapes }
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }
}
