use serde::{Deserialize, Serialize};

use crate::Action;

/// One stored interaction, possibly compressed from `n_used` raw steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Action,
    /// Discounted sum of the compressed rewards.
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// The environment terminated; targets must not bootstrap.
    pub is_terminal: bool,
    /// The episode cap was hit; targets still bootstrap.
    pub is_timeout: bool,
    pub n_used: u32,
    /// Action actually taken at `next_obs`, for SARSA-style targets.
    pub next_action: Option<Action>,
}

impl Transition {
    pub fn new(obs: Vec<f64>, action: Action, reward: f64, next_obs: Vec<f64>, is_terminal: bool, is_timeout: bool) -> Self {
        assert!(
            !(is_terminal && is_timeout),
            "contract violation: a transition cannot be both terminal and a timeout"
        );
        Self {
            obs,
            action,
            reward,
            next_obs,
            is_terminal,
            is_timeout,
            n_used: 1,
            next_action: None,
        }
    }

    /// `discount^n_used`, or 0 when the transition is terminal.
    pub fn bootstrap_discount(&self, gamma: f64) -> f64 {
        if self.is_terminal {
            0.0
        } else {
            gamma.powi(self.n_used as i32)
        }
    }
}
