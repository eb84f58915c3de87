//! Training objectives of the built-in agents as tape expressions over bound
//! network parameters. The agents build their updates from these, and they
//! are public so the gradients can be checked against finite differences.

use super::ddpg::critic_q;
use super::dqn::{categorical_td_loss, quantile_td_loss, scalar_td_loss};
use crate::autodiff::{Bound, Var};
use crate::models::{HeadVars, NoiseMode};
use crate::{Mlp, Tensor};
use crate::Tape;

pub use super::pg::reinforce_loss_with;
pub use super::ppo::{ppo_loss_with, PpoBatch, PpoLossVars};
pub use super::sac::{sac_actor_loss_with, temperature_loss};

/// Fixed regression targets for a value head, matching its kind.
#[derive(Clone, Debug)]
pub enum ValueTargets {
    /// One target per row, Huber loss with threshold `huber_delta`.
    Scalar { targets: Vec<f64>, huber_delta: f64 },
    /// Projected target distributions `[B, N]`, cross-entropy loss.
    Categorical { projected: Tensor },
    /// Target samples `[B, K']`, quantile Huber loss.
    Quantile { targets: Tensor, kappa: f64 },
}

/// Per-item loss `[B]` of a value head at the taken actions, and the
/// quantity whose magnitude becomes the new replay priority.
pub fn value_loss_terms(tape: &Tape, head: HeadVars, actions: &[usize], targets: &ValueTargets) -> (Var, Var) {
    match (head, targets) {
        (HeadVars::Q(q), ValueTargets::Scalar { targets, huber_delta }) => {
            scalar_td_loss(tape, q, actions, targets, *huber_delta)
        }
        (HeadVars::Categorical(logits), ValueTargets::Categorical { projected }) => {
            let l = categorical_td_loss(tape, logits, actions, projected);
            (l, l)
        }
        (HeadVars::Quantile(v), ValueTargets::Quantile { targets, kappa }) => {
            let l = quantile_td_loss(tape, v, actions, targets, *kappa);
            (l, l)
        }
        _ => panic!("contract violation: value targets do not match the network head"),
    }
}

/// Importance-weighted mean of the value loss over a batch.
#[allow(clippy::too_many_arguments)]
pub fn value_loss_with(
    tape: &Tape,
    model: &Mlp,
    bound: &Bound,
    obs: &Tensor,
    actions: &[usize],
    targets: &ValueTargets,
    weights: &[f64],
    mode: NoiseMode,
) -> Var {
    let x = tape.constant(obs.clone());
    let head = model.forward(tape, bound, x, mode);
    let (per_item, _) = value_loss_terms(tape, head, actions, targets);
    tape.mean(tape.mul(per_item, tape.constant(Tensor::vector(weights.to_vec()))))
}

/// Mean squared error of `Q(s, a)` against fixed targets.
pub fn critic_loss_with(tape: &Tape, critic: &Mlp, bound: &Bound, obs: &Tensor, actions: &Tensor, targets: &[f64]) -> Var {
    let o = tape.constant(obs.clone());
    let a = tape.constant(actions.clone());
    let q = critic_q(tape, critic, bound, o, a);
    let err = tape.sub(q, tape.constant(Tensor::vector(targets.to_vec())));
    tape.mean(tape.square(err))
}

/// `-mean Q(s, mu(s))` for a deterministic actor.
pub fn deterministic_actor_loss_with(
    tape: &Tape,
    actor: &Mlp,
    abound: &Bound,
    critic: &Mlp,
    cbound: &Bound,
    obs: &Tensor,
) -> Var {
    let o = tape.constant(obs.clone());
    let HeadVars::Deterministic(a) = actor.forward(tape, abound, o, NoiseMode::Mean) else {
        panic!("contract violation: actor needs a deterministic head")
    };
    tape.neg(tape.mean(critic_q(tape, critic, cbound, o, a)))
}
