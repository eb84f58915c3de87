//! Dense reverse-mode automatic differentiation and first-order optimizers.
//!
//! A [`Tape`] records operations on [`Tensor`]s as they execute. Parameters
//! live in a [`ParamStore`] outside the tape and are bound into each new
//! tape, so updates happen strictly between forward passes.

mod gradcheck;
pub(crate) mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{gradient_check, gradient_check_store};
pub use optim::{adam_step, clip_grad_norm, Adam, AdamConfig, OptimizerState};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("NaN produced by `{op}`")]
    NonFinite { op: &'static str },
    #[error("{op}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[cfg(test)]
mod tests;
