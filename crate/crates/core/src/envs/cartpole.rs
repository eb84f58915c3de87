use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ActionSpace, Env, EnvError, EnvSpec, StepResult};
use crate::Action;

const GRAVITY: f64 = 9.8;
const CART_MASS: f64 = 1.0;
const POLE_MASS: f64 = 0.1;
const TOTAL_MASS: f64 = CART_MASS + POLE_MASS;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = POLE_MASS * HALF_LENGTH;
const FORCE: f64 = 10.0;
const DT: f64 = 0.02;
const X_LIMIT: f64 = 2.4;
const THETA_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
const MAX_STEPS: u32 = 500;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    pub fn to_vec(self) -> Vec<f64> {
        vec![self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn failed(&self) -> bool {
        self.x.abs() > X_LIMIT || self.theta.abs() > THETA_LIMIT
    }

    /// One explicit-Euler step. Action 0 pushes left, 1 pushes right.
    pub fn advance(self, push_right: bool) -> Self {
        let force = if push_right { FORCE } else { -FORCE };
        let (sin, cos) = self.theta.sin_cos();
        let temp = (force + POLE_MASS_LENGTH * self.theta_dot * self.theta_dot * sin) / TOTAL_MASS;
        let theta_acc =
            (GRAVITY * sin - cos * temp) / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
        Self {
            x: self.x + DT * self.x_dot,
            x_dot: self.x_dot + DT * x_acc,
            theta: self.theta + DT * self.theta_dot,
            theta_dot: self.theta_dot + DT * theta_acc,
        }
    }
}

/// Classic cart-pole balancing with two discrete pushes.
#[derive(Clone, Debug)]
pub struct CartPole {
    spec: EnvSpec,
    state: CartPoleState,
    rng: ChaCha8Rng,
    steps: u32,
    done: bool,
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl CartPole {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                id: "cartpole".into(),
                obs_dim: 4,
                action_space: ActionSpace::Discrete { n: 2 },
                max_episode_steps: MAX_STEPS,
                reward_range: (0.0, 1.0),
            },
            state: CartPoleState::default(),
            rng: ChaCha8Rng::seed_from_u64(0),
            steps: 0,
            done: false,
        }
    }

    pub fn state(&self) -> CartPoleState {
        self.state
    }

    /// Overwrites the physical state and starts a fresh episode count.
    pub fn set_state(&mut self, state: CartPoleState) {
        self.state = state;
        self.steps = 0;
        self.done = false;
    }
}

impl Env for CartPole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: Option<u64>) -> Vec<f64> {
        if let Some(s) = seed {
            self.rng = ChaCha8Rng::seed_from_u64(s);
        }
        let mut u = || self.rng.random_range(-0.05..0.05);
        let state = CartPoleState {
            x: u(),
            x_dot: u(),
            theta: u(),
            theta_dot: u(),
        };
        self.set_state(state);
        state.to_vec()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        self.spec.action_space.check(action)?;
        self.state = self.state.advance(action.as_discrete() == Some(1));
        self.steps += 1;
        let failed = self.state.failed();
        let timeout = !failed && self.steps >= MAX_STEPS;
        self.done = failed || timeout;
        Ok(StepResult {
            obs: self.state.to_vec(),
            reward: 1.0,
            done: self.done,
            timeout,
            info: Default::default(),
        })
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn render(&self) -> Value {
        json!({
            "kind": "cartpole",
            "x": self.state.x,
            "x_dot": self.state.x_dot,
            "theta": self.state.theta,
            "theta_dot": self.state.theta_dot,
            "x_limit": X_LIMIT,
            "theta_limit": THETA_LIMIT,
            "steps": self.steps,
            "done": self.done,
        })
    }

    fn box_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One Euler step written out term by term for the zero state.
    fn zero_state_push(force: f64) -> [f64; 4] {
        let total = 1.0 + 0.1;
        let temp = force / total;
        let theta_acc = -temp / (0.5 * (4.0 / 3.0 - 0.1 / total));
        let x_acc = temp - 0.1 * 0.5 * theta_acc / total;
        [0.0, 0.02 * x_acc, 0.0, 0.02 * theta_acc]
    }

    #[test]
    fn push_from_rest() {
        let mut env = CartPole::new();
        env.set_state(CartPoleState::default());
        let r = env.step(&Action::Discrete(1)).unwrap();
        let want = zero_state_push(10.0);
        for (a, b) in r.obs.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((r.obs[1] - 0.19512).abs() < 1e-5);
        assert!((r.obs[3] + 0.29268).abs() < 1e-5);
        assert_eq!(r.reward, 1.0);

        env.set_state(CartPoleState::default());
        let l = env.step(&Action::Discrete(0)).unwrap();
        assert_eq!(l.obs[1], -r.obs[1]);
        assert_eq!(l.obs[3], -r.obs[3]);
    }

    #[test]
    fn reset_is_seeded_and_small() {
        let mut a = CartPole::new();
        let mut b = CartPole::new();
        for seed in 0..50 {
            let oa = a.reset(Some(seed));
            assert_eq!(oa, b.reset(Some(seed)));
            assert!(oa.iter().all(|v| v.abs() <= 0.05));
        }
        assert_ne!(a.reset(Some(1)), a.reset(Some(2)));
    }

    #[test]
    fn cap_and_step_after_done() {
        let mut env = CartPole::new();
        env.reset(Some(0));
        // Hold the state still so the pole never falls.
        let mut ret = 0.0;
        for i in 0..500 {
            let s = env.state();
            let r = env.step(&Action::Discrete(i % 2)).unwrap();
            ret += r.reward;
            if i < 499 {
                assert!(!r.done);
                env.state = s;
            } else {
                assert!(r.done && r.timeout);
            }
        }
        assert_eq!(ret, 500.0);
        assert_eq!(env.step(&Action::Discrete(0)), Err(EnvError::EpisodeOver));
    }

    #[test]
    fn random_play_stays_finite() {
        let mut env = CartPole::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        env.reset(Some(5));
        for _ in 0..1_000_000 {
            let r = env.step(&Action::Discrete(rng.random_range(0..2))).unwrap();
            assert!(r.obs.iter().all(|v| v.is_finite()));
            if !r.done {
                assert!(r.obs[0].abs() <= X_LIMIT && r.obs[2].abs() <= THETA_LIMIT);
            } else {
                env.reset(None);
            }
        }
    }
}
