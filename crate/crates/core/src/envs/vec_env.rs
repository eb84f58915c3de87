use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Env, EnvError, EnvSpec, StepResult};
use crate::Action;

/// One environment's outcome from a vector step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VecStep {
    /// Next observation, or the fresh initial observation after an auto-reset.
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub timeout: bool,
    /// The observation that ended the episode, present only when `done`.
    pub final_obs: Option<Vec<f64>>,
    #[serde(default)]
    pub info: Map<String, Value>,
}

impl VecStep {
    pub fn is_terminal(&self) -> bool {
        self.done && !self.timeout
    }

    /// Observation reached by this step, before any auto-reset.
    pub fn next_obs(&self) -> &[f64] {
        self.final_obs.as_deref().unwrap_or(&self.obs)
    }
}

/// Several environments stepped in lockstep with automatic resets.
pub struct VecEnv {
    envs: Vec<Box<dyn Env>>,
    threaded: bool,
}

impl VecEnv {
    pub fn new(envs: Vec<Box<dyn Env>>) -> Self {
        assert!(!envs.is_empty(), "contract violation: empty vector env");
        let id = &envs[0].spec().id;
        assert!(
            envs.iter().all(|e| &e.spec().id == id),
            "contract violation: mixed environment kinds"
        );
        Self { envs, threaded: false }
    }

    /// Steps environments on scoped threads. Results are identical to
    /// sequential stepping since each environment owns its generator.
    pub fn threaded(mut self, on: bool) -> Self {
        self.threaded = on;
        self
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn spec(&self) -> &EnvSpec {
        self.envs[0].spec()
    }

    pub fn envs(&self) -> &[Box<dyn Env>] {
        &self.envs
    }

    /// Resets every environment; environment `i` gets `seed + i` when seeded.
    pub fn reset(&mut self, seed: Option<u64>) -> Vec<Vec<f64>> {
        self.envs
            .iter_mut()
            .enumerate()
            .map(|(i, e)| e.reset(seed.map(|s| s.wrapping_add(i as u64))))
            .collect()
    }

    pub fn step(&mut self, actions: &[Action]) -> Result<Vec<VecStep>, EnvError> {
        assert_eq!(
            actions.len(),
            self.envs.len(),
            "contract violation: one action per environment"
        );
        let results: Vec<Result<VecStep, EnvError>> = if self.threaded && self.envs.len() > 1 {
            std::thread::scope(|s| {
                let handles: Vec<_> = self
                    .envs
                    .iter_mut()
                    .zip(actions)
                    .map(|(env, a)| s.spawn(move || step_one(env.as_mut(), a)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("env worker panicked")).collect()
            })
        } else {
            self.envs.iter_mut().zip(actions).map(|(env, a)| step_one(env.as_mut(), a)).collect()
        };
        results.into_iter().collect()
    }
}

fn step_one(env: &mut dyn Env, action: &Action) -> Result<VecStep, EnvError> {
    let StepResult {
        obs,
        reward,
        done,
        timeout,
        info,
    } = env.step(action)?;
    let (obs, final_obs) = if done { (env.reset(None), Some(obs)) } else { (obs, None) };
    Ok(VecStep {
        obs,
        reward,
        done,
        timeout,
        final_obs,
        info,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_env, GridWorld};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn many(id: &str, n: usize) -> VecEnv {
        VecEnv::new((0..n).map(|_| make_env(id).unwrap()).collect())
    }

    #[test]
    fn single_env_matches_direct_stepping() {
        let mut direct = make_env("cartpole").unwrap();
        let mut v = many("cartpole", 1);
        assert_eq!(direct.reset(Some(3)), v.reset(Some(3))[0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..300 {
            let a = Action::Discrete(rng.random_range(0..2));
            let d = direct.step(&a).unwrap();
            let s = v.step(std::slice::from_ref(&a)).unwrap().remove(0);
            assert_eq!((d.reward, d.done, d.timeout), (s.reward, s.done, s.timeout));
            assert_eq!(d.obs, s.next_obs());
            if d.done {
                assert_eq!(direct.reset(None), s.obs);
            }
        }
    }

    #[test]
    fn finished_env_is_reset_in_place() {
        let mut envs: Vec<Box<dyn Env>> = Vec::new();
        for p in [(0, 0), (3, 4), (2, 2)] {
            let mut g = GridWorld::new();
            g.set_position(p);
            envs.push(Box::new(g));
        }
        let mut v = VecEnv::new(envs);
        let right = Action::Discrete(3);
        let out = v.step(&[right.clone(), right.clone(), right]).unwrap();
        assert_eq!(out[0].obs, vec![1.0, 0.0]);
        assert!(!out[0].done && out[0].final_obs.is_none());
        assert!(out[1].done && out[1].is_terminal());
        assert_eq!(out[1].obs, vec![0.0, 0.0]);
        assert_eq!(out[1].final_obs, Some(vec![4.0, 4.0]));
        assert_eq!(out[1].reward, 1.0);
        assert_eq!(out[2].obs, vec![3.0, 2.0]);
    }

    fn stream(threaded: bool, seed: u64) -> Vec<VecStep> {
        let mut v = many("pendulum", 4).threaded(threaded);
        v.reset(Some(seed));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut all = Vec::new();
        for _ in 0..450 {
            let acts: Vec<Action> = (0..4).map(|_| Action::Continuous(vec![rng.random_range(-2.0..2.0)])).collect();
            all.extend(v.step(&acts).unwrap());
        }
        all
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let a = stream(false, 7);
        assert_eq!(a, stream(false, 7));
        assert_eq!(a, stream(true, 7));
        assert!(a.iter().any(|s| s.done));
    }

    #[test]
    fn identical_copies_give_identical_results() {
        let mut v = many("cartpole", 3);
        for e in v.envs.iter_mut() {
            e.reset(Some(11));
        }
        for t in 0..200 {
            let a = Action::Discrete(t % 2);
            let out = v.step(&[a.clone(), a.clone(), a]).unwrap();
            assert!(out.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    #[should_panic(expected = "contract violation")]
    fn action_count_mismatch_panics() {
        let mut v = many("gridworld5", 2);
        v.reset(None);
        let _ = v.step(&[Action::Discrete(0)]);
    }
}
