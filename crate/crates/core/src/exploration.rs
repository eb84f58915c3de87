//! Training-time action selection: epsilon-greedy, Boltzmann, additive
//! Gaussian and Ornstein-Uhlenbeck noise.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::argmax;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid explorer config: {0}")]
pub struct ExplorerConfigError(pub String);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExplorerConfig {
    /// No exploration (noisy networks or on-policy sampling supply it).
    Greedy,
    EpsilonConstant { epsilon: f64 },
    EpsilonLinearDecay {
        start: f64,
        end: f64,
        decay_steps: u64,
    },
    Boltzmann { temperature: f64 },
    AdditiveGaussian { sigma: f64, low: Vec<f64>, high: Vec<f64> },
    OrnsteinUhlenbeck {
        theta: f64,
        sigma: f64,
        mu: f64,
        low: Vec<f64>,
        high: Vec<f64>,
    },
}

impl ExplorerConfig {
    pub fn validate(&self) -> Result<(), ExplorerConfigError> {
        let err = |m: &str| Err(ExplorerConfigError(m.to_string()));
        let eps_ok = |e: f64| (0.0..=1.0).contains(&e);
        let bounds_ok = |lo: &[f64], hi: &[f64]| lo.len() == hi.len() && lo.iter().zip(hi).all(|(l, h)| l < h);
        match self {
            ExplorerConfig::Greedy => Ok(()),
            ExplorerConfig::EpsilonConstant { epsilon } if !eps_ok(*epsilon) => err("epsilon must be in [0, 1]"),
            ExplorerConfig::EpsilonLinearDecay { start, end, decay_steps } => {
                if !eps_ok(*start) || !eps_ok(*end) {
                    err("epsilon must be in [0, 1]")
                } else if *decay_steps < 1 {
                    err("decay_steps must be at least 1")
                } else {
                    Ok(())
                }
            }
            ExplorerConfig::Boltzmann { temperature } if !(*temperature > 0.0) => err("temperature must be positive"),
            ExplorerConfig::AdditiveGaussian { sigma, low, high } => {
                if !(*sigma >= 0.0) {
                    err("sigma must be non-negative")
                } else if !bounds_ok(low, high) {
                    err("bounds need low < high per dimension")
                } else {
                    Ok(())
                }
            }
            ExplorerConfig::OrnsteinUhlenbeck {
                theta, sigma, low, high, ..
            } => {
                if !(0.0..2.0).contains(theta) || !(*sigma >= 0.0) {
                    err("OU needs theta in [0, 2) and sigma >= 0")
                } else if !bounds_ok(low, high) {
                    err("bounds need low < high per dimension")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Linear interpolation from `start` to `end` over `decay_steps`, then constant.
pub fn epsilon_at(step: u64, start: f64, end: f64, decay_steps: u64) -> f64 {
    if step >= decay_steps {
        end
    } else {
        start + (end - start) * step as f64 / decay_steps as f64
    }
}

/// With probability `epsilon` a uniform random action, else `greedy()`.
///
/// Always consumes exactly one uniform draw for the coin, plus one more
/// when exploring, so trajectories replay identically for any `epsilon`.
pub fn select_epsilon_greedy<R: Rng + ?Sized>(
    greedy: impl FnOnce() -> usize,
    epsilon: f64,
    n_actions: usize,
    rng: &mut R,
) -> usize {
    assert!(n_actions >= 1, "contract violation: no actions to choose from");
    let coin: f64 = rng.random();
    if coin < epsilon {
        rng.random_range(0..n_actions)
    } else {
        greedy()
    }
}

/// Below this temperature Boltzmann selection is plain argmax.
pub const BOLTZMANN_ARGMAX_BELOW: f64 = 1e-12;

/// Samples from `softmax(q / temperature)`.
pub fn select_boltzmann<R: Rng + ?Sized>(q: &[f64], temperature: f64, rng: &mut R) -> usize {
    assert!(temperature > 0.0, "contract violation: temperature must be positive");
    if temperature < BOLTZMANN_ARGMAX_BELOW {
        return argmax(q);
    }
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = q.iter().map(|&v| ((v - m) / temperature).exp()).collect();
    let total: f64 = w.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, wi) in w.iter().enumerate() {
        acc += wi;
        if u < acc {
            return i;
        }
    }
    q.len() - 1
}

pub fn add_gaussian<R: Rng + ?Sized>(action: &[f64], sigma: f64, low: &[f64], high: &[f64], rng: &mut R) -> Vec<f64> {
    action
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let xi: f64 = StandardNormal.sample(rng);
            (a + sigma * xi).clamp(low[i], high[i])
        })
        .collect()
}

/// Discrete-time Ornstein-Uhlenbeck process with unit time step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuProcess {
    pub theta: f64,
    pub sigma: f64,
    pub mu: f64,
    pub state: Vec<f64>,
}

impl OuProcess {
    pub fn new(theta: f64, sigma: f64, mu: f64, dim: usize) -> Self {
        Self {
            theta,
            sigma,
            mu,
            state: vec![mu; dim],
        }
    }

    pub fn reset(&mut self) {
        self.state.fill(self.mu);
    }

    /// `x' = x + theta (mu - x) + sigma xi`
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[f64] {
        for x in &mut self.state {
            let xi: f64 = StandardNormal.sample(rng);
            *x += self.theta * (self.mu - *x) + self.sigma * xi;
        }
        &self.state
    }
}

/// Stateful explorer with independent noise per environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explorer {
    config: ExplorerConfig,
    ou: Vec<OuProcess>,
}

impl Explorer {
    pub fn new(config: ExplorerConfig, n_envs: usize, action_dim: usize) -> Result<Self, ExplorerConfigError> {
        config.validate()?;
        let ou = match &config {
            ExplorerConfig::OrnsteinUhlenbeck { theta, sigma, mu, .. } => {
                (0..n_envs).map(|_| OuProcess::new(*theta, *sigma, *mu, action_dim)).collect()
            }
            _ => Vec::new(),
        };
        Ok(Self { config, ou })
    }

    pub fn config(&self) -> &ExplorerConfig {
        &self.config
    }

    /// Current epsilon for epsilon-greedy variants, otherwise `None`.
    pub fn epsilon(&self, step: u64) -> Option<f64> {
        match self.config {
            ExplorerConfig::EpsilonConstant { epsilon } => Some(epsilon),
            ExplorerConfig::EpsilonLinearDecay { start, end, decay_steps } => {
                Some(epsilon_at(step, start, end, decay_steps))
            }
            _ => None,
        }
    }

    pub fn select_discrete<R: Rng + ?Sized>(&self, step: u64, q: &[f64], rng: &mut R) -> usize {
        match &self.config {
            ExplorerConfig::Boltzmann { temperature } => select_boltzmann(q, *temperature, rng),
            ExplorerConfig::Greedy => argmax(q),
            _ => match self.epsilon(step) {
                Some(eps) => select_epsilon_greedy(|| argmax(q), eps, q.len(), rng),
                None => argmax(q),
            },
        }
    }

    pub fn perturb_continuous<R: Rng + ?Sized>(&mut self, env: usize, action: &[f64], rng: &mut R) -> Vec<f64> {
        match &self.config {
            ExplorerConfig::AdditiveGaussian { sigma, low, high } => add_gaussian(action, *sigma, low, high, rng),
            ExplorerConfig::OrnsteinUhlenbeck { low, high, .. } => {
                let noise = self.ou[env].step(rng);
                action
                    .iter()
                    .zip(noise)
                    .enumerate()
                    .map(|(i, (a, n))| (a + n).clamp(low[i], high[i]))
                    .collect()
            }
            _ => action.to_vec(),
        }
    }

    /// Restarts per-episode noise state for one environment.
    pub fn reset_env(&mut self, env: usize) {
        if let Some(p) = self.ou.get_mut(env) {
            p.reset();
        }
    }
}
