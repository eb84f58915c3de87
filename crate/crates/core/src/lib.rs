//! Building blocks for deep reinforcement learning: a reverse-mode autodiff
//! tape, network heads, replay buffers, explorers, environments, agents and
//! the training/evaluation loops that tie them together.

pub mod autodiff;
pub mod models;
pub mod envs;
pub mod exploration;
pub mod replay;
pub mod agents;
pub mod experiments;

mod action;
mod scalar;

pub use action::Action;
pub use scalar::Scalar;

/// Scalar type used by agents, environments and checkpoints.
pub type Real = f64;
pub type Tensor = autodiff::Tensor<Real>;
pub type Tape = autodiff::Tape<Real>;
pub type ParamStore = autodiff::ParamStore<Real>;
pub type Mlp = models::Mlp<Real>;
pub type PolicyDistribution = models::PolicyDistribution<Real>;
pub type ActionValue = models::ActionValue<Real>;
