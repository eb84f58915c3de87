//! The agent interface and the built-in agents.
//!
//! Every agent is batch-first: it acts on one observation per environment
//! and is then told what happened in each of them. The single-environment
//! methods are thin wrappers over the batch ones, so a one-environment
//! batch run and a plain run make identical calls.

mod checkpoint;
mod common;
mod ddpg;
mod dqn;
pub mod losses;
mod pg;
mod ppo;
mod sac;

pub use checkpoint::{load_agent, load_agent_for_eval, save_agent, Manifest, TensorEntry};
pub use common::{from_unit_action, to_unit_action};
pub use ddpg::{actor_loss, DdpgAgent, DdpgConfig, Td3Config};
pub use dqn::{
    make_rainbow, td_targets, weighted_huber, DqnAgent, DqnConfig, TargetKind, TargetUpdate, ValueDistribution,
};
pub use pg::{discounted_returns, EpisodeBuffer, ReinforceAgent, ReinforceConfig};
pub use ppo::{gae, gae_segments, ppo_surrogate, PpoAgent, PpoConfig, PpoStats};
pub use sac::{SacAgent, SacConfig, Temperature};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::OptimizerState;
use crate::envs::EnvSpec;
use crate::models::ModelError;
use crate::{Action, ParamStore, Real};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("{algo} does not support this action space")]
    UnsupportedSpace { algo: &'static str },
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint manifest: {0}")]
    Json(#[from] serde_json::Error),
}

/// Hyperparameters of any built-in agent, tagged by algorithm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algo", rename_all = "snake_case")]
pub enum AgentConfig {
    Dqn(DqnConfig),
    Reinforce(ReinforceConfig),
    Ppo(PpoConfig),
    Ddpg(DdpgConfig),
    Td3(Td3Config),
    Sac(SacConfig),
}

impl AgentConfig {
    pub fn algo(&self) -> &'static str {
        match self {
            AgentConfig::Dqn(_) => "dqn",
            AgentConfig::Reinforce(_) => "reinforce",
            AgentConfig::Ppo(_) => "ppo",
            AgentConfig::Ddpg(_) => "ddpg",
            AgentConfig::Td3(_) => "td3",
            AgentConfig::Sac(_) => "sac",
        }
    }

    /// Epsilon applied on top of [`Agent::batch_act`] during evaluation.
    pub fn eval_epsilon(&self) -> f64 {
        match self {
            AgentConfig::Dqn(c) => c.eval_epsilon,
            _ => 0.0,
        }
    }
}

pub fn make_agent(config: &AgentConfig, spec: &EnvSpec, seed: u64) -> Result<Box<dyn Agent>, AgentError> {
    Ok(match config {
        AgentConfig::Dqn(c) => Box::new(DqnAgent::new(c.clone(), spec, seed)?),
        AgentConfig::Reinforce(c) => Box::new(ReinforceAgent::new(c.clone(), spec, seed)?),
        AgentConfig::Ppo(c) => Box::new(PpoAgent::new(c.clone(), spec, seed)?),
        AgentConfig::Ddpg(c) => Box::new(DdpgAgent::new_ddpg(c.clone(), spec, seed)?),
        AgentConfig::Td3(c) => Box::new(DdpgAgent::new_td3(c.clone(), spec, seed)?),
        AgentConfig::Sac(c) => Box::new(SacAgent::new(c.clone(), spec, seed)?),
    })
}

/// What an agent believes about one observation, for inspection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentOutputs {
    QValues {
        q: Vec<f64>,
        action: usize,
        value: f64,
    },
    Categorical {
        support: Vec<f64>,
        probs: Vec<Vec<f64>>,
        q: Vec<f64>,
        action: usize,
        value: f64,
    },
    Quantile {
        taus: Vec<f64>,
        quantiles: Vec<Vec<f64>>,
        q: Vec<f64>,
        action: usize,
        value: f64,
    },
    Policy {
        /// Action probabilities of a discrete policy.
        #[serde(skip_serializing_if = "Option::is_none")]
        probs: Option<Vec<f64>>,
        /// Gaussian mean (pre-squash for squashed policies) or the deterministic action.
        #[serde(skip_serializing_if = "Option::is_none")]
        mean: Option<Vec<f64>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        std: Option<Vec<f64>>,
        /// The evaluation action in environment units.
        action: Action,
        #[serde(skip_serializing_if = "Option::is_none")]
        value: Option<f64>,
    },
}

impl AgentOutputs {
    pub fn kind(&self) -> &'static str {
        match self {
            AgentOutputs::QValues { .. } => "q_values",
            AgentOutputs::Categorical { .. } => "categorical",
            AgentOutputs::Quantile { .. } => "quantile",
            AgentOutputs::Policy { .. } => "policy",
        }
    }
}

/// Serializable snapshot of an agent's learnable and bookkeeping state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AgentState {
    pub counters: BTreeMap<String, u64>,
    pub networks: Vec<(String, ParamStore)>,
    pub optimizers: Vec<(String, OptimizerState<Real>)>,
    /// Binary replay payload, when requested and the agent has one.
    pub replay: Option<Vec<u8>>,
}

impl AgentState {
    pub fn counter(&self, name: &str) -> Result<u64, AgentError> {
        self.counters
            .get(name)
            .copied()
            .ok_or_else(|| AgentError::Checkpoint(format!("missing counter {name:?}")))
    }

    /// Takes the network called `name`, checking its layout against `like`.
    pub fn take_network(&mut self, name: &str, like: &ParamStore) -> Result<ParamStore, AgentError> {
        let pos = self
            .networks
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| AgentError::Checkpoint(format!("missing network {name:?}")))?;
        let (_, store) = self.networks.remove(pos);
        if store.names() != like.names() {
            return Err(AgentError::Checkpoint(format!("network {name:?} has a different parameter layout")));
        }
        for ((pname, a), b) in like.names().iter().zip(store.tensors()).zip(like.tensors()) {
            if a.shape() != b.shape() {
                return Err(AgentError::Checkpoint(format!(
                    "tensor {name}/{pname}: stored shape {:?}, model expects {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(store)
    }

    pub fn take_optimizer(&mut self, name: &str, like: &ParamStore) -> Result<OptimizerState<Real>, AgentError> {
        let pos = self
            .optimizers
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| AgentError::Checkpoint(format!("missing optimizer {name:?}")))?;
        let (_, opt) = self.optimizers.remove(pos);
        let ok = opt.first_moment.len() == like.len()
            && opt
                .first_moment
                .iter()
                .zip(&opt.second_moment)
                .zip(like.tensors())
                .all(|((m, v), p)| m.shape() == p.shape() && v.shape() == p.shape());
        if !ok {
            return Err(AgentError::Checkpoint(format!("optimizer {name:?} does not match its network")));
        }
        Ok(opt)
    }
}

/// A learning agent driven by the training loops.
pub trait Agent: Send {
    fn config(&self) -> AgentConfig;

    fn env_spec(&self) -> &EnvSpec;

    /// Exploration actions for one observation per environment. The
    /// observations and actions are remembered until the matching
    /// [`Agent::batch_observe_and_train`].
    fn batch_act_and_train(&mut self, obs: &[Vec<f64>]) -> Vec<Action>;

    /// Reports the outcome of the last actions and runs any due updates.
    /// `terminals[i]` means the environment ended the episode; `resets[i]`
    /// means the episode is cut there (step cap or end of training) and
    /// its value is still bootstrapped.
    fn batch_observe_and_train(&mut self, next_obs: &[Vec<f64>], rewards: &[f64], terminals: &[bool], resets: &[bool]);

    /// Evaluation actions. Never changes the agent.
    fn batch_act(&self, obs: &[Vec<f64>]) -> Vec<Action>;

    /// True between acting and observing.
    fn has_pending(&self) -> bool;

    fn outputs(&self, obs: &[f64]) -> AgentOutputs;

    /// The scalar whose observation gradient forms the saliency map:
    /// `max_a Q` for value-based agents, `log pi(mode)` for discrete
    /// policies and the summed mode action for continuous ones.
    fn saliency_target(&self, obs: &[f64]) -> f64;

    /// Gradient of [`Agent::saliency_target`] with respect to `obs`.
    fn saliency(&self, obs: &[f64]) -> Vec<f64>;

    /// Environment steps seen and gradient updates made.
    fn counters(&self) -> (u64, u64);

    fn state(&self, include_replay: bool) -> AgentState;

    fn load_state(&mut self, state: AgentState) -> Result<(), AgentError>;

    /// Records the previous step's reward (if any) and returns the next action.
    fn act_and_train(&mut self, obs: &[f64], reward: f64) -> Action {
        if self.has_pending() {
            self.batch_observe_and_train(&[obs.to_vec()], &[reward], &[false], &[false]);
        }
        self.batch_act_and_train(&[obs.to_vec()]).remove(0)
    }

    /// Closes the episode after the final step.
    fn stop_episode_and_train(&mut self, obs: &[f64], reward: f64, terminal: bool) {
        assert!(self.has_pending(), "contract violation: no action awaiting its outcome");
        self.batch_observe_and_train(&[obs.to_vec()], &[reward], &[terminal], &[true]);
    }

    fn act(&self, obs: &[f64]) -> Action {
        self.batch_act(&[obs.to_vec()]).remove(0)
    }

    /// Hash of every parameter bit, for purity checks.
    fn param_fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (name, store) in self.state(false).networks {
            name.hash(&mut h);
            for x in store.flatten() {
                x.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}
