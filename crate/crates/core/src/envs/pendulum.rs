use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::f64::consts::PI;

use super::{ActionSpace, Env, EnvError, EnvSpec, StepResult};
use crate::Action;

const G: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const DT: f64 = 0.05;
const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 2.0;
const MAX_STEPS: u32 = 200;

/// Angle wrapped into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// Torque-limited pendulum swing-up; `theta = 0` is upright. Never terminal.
#[derive(Clone, Debug)]
pub struct Pendulum {
    spec: EnvSpec,
    theta: f64,
    theta_dot: f64,
    last_u: f64,
    rng: ChaCha8Rng,
    steps: u32,
    done: bool,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Pendulum {
    pub fn new() -> Self {
        let worst = PI * PI + 0.1 * MAX_SPEED * MAX_SPEED + 0.001 * MAX_TORQUE * MAX_TORQUE;
        Self {
            spec: EnvSpec {
                id: "pendulum".into(),
                obs_dim: 3,
                action_space: ActionSpace::Box {
                    low: vec![-MAX_TORQUE],
                    high: vec![MAX_TORQUE],
                },
                max_episode_steps: MAX_STEPS,
                reward_range: (-worst, 0.0),
            },
            theta: 0.0,
            theta_dot: 0.0,
            last_u: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
            steps: 0,
            done: false,
        }
    }

    pub fn state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
        self.steps = 0;
        self.done = false;
    }

    /// Torque actually applied by the last step.
    pub fn last_torque(&self) -> f64 {
        self.last_u
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Env for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: Option<u64>) -> Vec<f64> {
        if let Some(s) = seed {
            self.rng = ChaCha8Rng::seed_from_u64(s);
        }
        let theta = self.rng.random_range(-PI..PI);
        let theta_dot = self.rng.random_range(-1.0..1.0);
        self.set_state(theta, theta_dot);
        self.last_u = 0.0;
        self.obs()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        self.spec.action_space.check(action)?;
        let u = action.as_continuous().expect("checked")[0].clamp(-MAX_TORQUE, MAX_TORQUE);
        let (th, thd) = (self.theta, self.theta_dot);
        let cost = wrap_angle(th).powi(2) + 0.1 * thd * thd + 0.001 * u * u;
        let acc = 3.0 * G / (2.0 * LENGTH) * th.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u;
        self.theta_dot = (thd + acc * DT).clamp(-MAX_SPEED, MAX_SPEED);
        self.theta = th + self.theta_dot * DT;
        self.last_u = u;
        self.steps += 1;
        let timeout = self.steps >= MAX_STEPS;
        self.done = timeout;
        Ok(StepResult {
            obs: self.obs(),
            reward: -cost,
            done: timeout,
            timeout,
            info: Default::default(),
        })
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn render(&self) -> Value {
        json!({
            "kind": "pendulum",
            "theta": self.theta,
            "theta_dot": self.theta_dot,
            "torque": self.last_u,
            "steps": self.steps,
            "done": self.done,
        })
    }

    fn box_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}
