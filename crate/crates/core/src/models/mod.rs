//! Network building blocks and typed model outputs.

mod distribution;
mod mlp;
mod noisy;
mod values;

pub use distribution::{
    gaussian_entropy, gaussian_log_prob, softmax_entropy, softmax_log_prob, squashed_rsample,
    PolicyDistribution, LOG_STD_MAX, LOG_STD_MIN,
};
pub use mlp::{Activation, HeadVars, Mlp, MlpSpec, ModelOutput, NoiseMode, OutputHead};
pub use noisy::{noise_transform, NoiseVectors, NoisyLinear};
pub use values::{
    argmax, categorical_mean, categorical_project, categorical_support, dueling_combine, greedy_action,
    quantile_huber_loss, quantile_huber_loss_tape, quantile_taus, ActionValue, CategoricalActionValue,
    DiscreteActionValue, QuantileActionValue,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),
    #[error("action dimension {found} does not match distribution dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("action {action} out of range for {n} actions")]
    ActionOutOfRange { action: usize, n: usize },
    #[error("action kind does not match the distribution")]
    ActionKind,
}
