//! Environment contract, the built-in environments and a synchronous vector
//! environment.

mod cartpole;
mod gridworld;
mod pendulum;
mod vec_env;

pub use cartpole::{CartPole, CartPoleState};
pub use gridworld::{gridworld_value_iteration, GridAction, GridWorld, ValueIteration, GRID_SIZE, GRID_WALLS};
pub use pendulum::Pendulum;
pub use vec_env::{VecEnv, VecStep};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::Action;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown environment id {0:?}")]
    UnknownEnv(String),
    #[error("episode is over; reset before stepping")]
    EpisodeOver,
    #[error("invalid action: {0}")]
    InvalidAction(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionSpace {
    Discrete { n: usize },
    Box { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete { .. })
    }

    /// Number of discrete actions or box dimensions.
    pub fn size(&self) -> usize {
        match self {
            ActionSpace::Discrete { n } => *n,
            ActionSpace::Box { low, .. } => low.len(),
        }
    }

    pub fn is_valid(&self) -> bool {
        match self {
            ActionSpace::Discrete { n } => *n >= 2,
            ActionSpace::Box { low, high } => {
                !low.is_empty() && low.len() == high.len() && low.iter().zip(high).all(|(l, h)| l < h)
            }
        }
    }

    /// Checks kind and arity of an action.
    pub fn check(&self, action: &Action) -> Result<(), EnvError> {
        match (self, action) {
            (ActionSpace::Discrete { n }, Action::Discrete(a)) if a < n => Ok(()),
            (ActionSpace::Discrete { n }, Action::Discrete(a)) => {
                Err(EnvError::InvalidAction(format!("action {a} out of range for {n} actions")))
            }
            (ActionSpace::Box { low, .. }, Action::Continuous(v)) if v.len() == low.len() => {
                if v.iter().all(|x| x.is_finite()) {
                    Ok(())
                } else {
                    Err(EnvError::InvalidAction("non-finite continuous action".into()))
                }
            }
            (ActionSpace::Box { low, .. }, Action::Continuous(v)) => Err(EnvError::InvalidAction(format!(
                "expected {} action dimensions, got {}",
                low.len(),
                v.len()
            ))),
            _ => Err(EnvError::InvalidAction("action kind does not match the action space".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: String,
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub max_episode_steps: u32,
    pub reward_range: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// The episode ended only because of the step cap.
    pub timeout: bool,
    #[serde(default)]
    pub info: Map<String, Value>,
}

impl StepResult {
    /// Ended for a reason other than the step cap.
    pub fn is_terminal(&self) -> bool {
        self.done && !self.timeout
    }
}

/// A Gym-style environment. Observations are flat `f64` vectors.
pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode. `Some(seed)` reseeds the environment's generator,
    /// `None` continues its current stream.
    fn reset(&mut self, seed: Option<u64>) -> Vec<f64>;

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError>;

    /// True once the current episode has ended and no reset followed.
    fn is_done(&self) -> bool;

    /// JSON snapshot for visualization.
    fn render(&self) -> Value;

    fn box_clone(&self) -> Box<dyn Env>;
}

impl Clone for Box<dyn Env> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

pub const ENV_IDS: [&str; 3] = ["gridworld5", "cartpole", "pendulum"];

pub fn make_env(id: &str) -> Result<Box<dyn Env>, EnvError> {
    match id {
        "gridworld5" => Ok(Box::new(GridWorld::new())),
        "cartpole" => Ok(Box::new(CartPole::new())),
        "pendulum" => Ok(Box::new(Pendulum::new())),
        other => Err(EnvError::UnknownEnv(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_id_builds_a_valid_spec() {
        for id in ENV_IDS {
            let env = make_env(id).unwrap();
            assert_eq!(env.spec().id, id);
            assert!(env.spec().action_space.is_valid());
        }
        assert_eq!(make_env("pong").err(), Some(EnvError::UnknownEnv("pong".into())));
    }

    #[test]
    fn action_checks() {
        let d = ActionSpace::Discrete { n: 2 };
        assert!(d.check(&Action::Discrete(1)).is_ok());
        assert!(d.check(&Action::Discrete(2)).is_err());
        assert!(d.check(&Action::Continuous(vec![0.0])).is_err());
        let b = ActionSpace::Box {
            low: vec![-2.0],
            high: vec![2.0],
        };
        assert!(b.check(&Action::Continuous(vec![5.0])).is_ok());
        assert!(b.check(&Action::Continuous(vec![f64::NAN])).is_err());
        assert!(b.check(&Action::Continuous(vec![0.0, 0.0])).is_err());
        assert!(!ActionSpace::Box { low: vec![1.0], high: vec![1.0] }.is_valid());
        assert!(!ActionSpace::Discrete { n: 1 }.is_valid());
    }
}
