use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::agents::{load_agent_for_eval, Agent, AgentConfig};
use crate::envs::{ActionSpace, Env};
use crate::Action;

/// Length of one evaluation phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseBudget {
    Episodes { n: usize },
    /// Whole episodes until `n` steps have passed; an episode still running
    /// when the budget runs out is dropped, unless it is the first.
    Timesteps { n: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalPolicy {
    /// Uniformly random action with probability `epsilon`, else the agent's action.
    GreedyWithEpsilon { epsilon: f64 },
    /// The agent's evaluation action (greedy or distribution mode).
    DistributionMode,
}

impl EvalPolicy {
    pub fn for_agent(config: &AgentConfig) -> Self {
        match config.eval_epsilon() {
            e if e > 0.0 => EvalPolicy::GreedyWithEpsilon { epsilon: e },
            _ => EvalPolicy::DistributionMode,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reporting {
    BestEval,
    ReEval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Training steps between evaluation phases.
    pub eval_interval: u64,
    pub budget: PhaseBudget,
    /// Step cap per evaluation episode, on top of the environment's own.
    #[serde(default)]
    pub episode_cap: Option<u32>,
    /// `None` uses the agent's own evaluation policy.
    #[serde(default)]
    pub policy: Option<EvalPolicy>,
    pub reporting: Reporting,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            eval_interval: 5000,
            budget: PhaseBudget::Episodes { n: 10 },
            episode_cap: None,
            policy: None,
            reporting: Reporting::BestEval,
        }
    }
}

/// Agent steps per second of emulator time (60 frames, action repeat 4).
const ATARI_STEPS_PER_SECOND: u32 = 15;

impl EvalConfig {
    /// The DQN column of the standard Atari protocol: evaluate every 250K
    /// steps for 125K steps, five-minute episodes, epsilon 0.05.
    pub fn atari_protocol() -> Self {
        Self {
            eval_interval: 250_000,
            budget: PhaseBudget::Timesteps { n: 125_000 },
            episode_cap: Some(5 * 60 * ATARI_STEPS_PER_SECOND),
            policy: Some(EvalPolicy::GreedyWithEpsilon { epsilon: 0.05 }),
            reporting: Reporting::BestEval,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let budget_ok = match self.budget {
            PhaseBudget::Episodes { n } => n > 0,
            PhaseBudget::Timesteps { n } => n > 0,
        };
        let eps_ok = match self.policy {
            Some(EvalPolicy::GreedyWithEpsilon { epsilon }) => (0.0..=1.0).contains(&epsilon),
            _ => true,
        };
        if self.eval_interval == 0 || !budget_ok || self.episode_cap == Some(0) || !eps_ok {
            return Err(ExperimentError::InvalidConfig(
                "eval_interval, budget and episode_cap must be positive and epsilon in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Statistics of one evaluation phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    /// Training steps taken when the phase ran.
    pub step: u64,
    /// Training episodes completed when the phase ran.
    pub train_episodes: u64,
    pub scores: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (zero for a single episode).
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub checkpoint: Option<PathBuf>,
}

impl EvaluationRecord {
    pub fn from_scores(step: u64, train_episodes: u64, scores: Vec<f64>) -> Self {
        assert!(!scores.is_empty(), "contract violation: an evaluation phase has at least one episode");
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let std = if scores.len() > 1 {
            (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            step,
            train_episodes,
            scores,
            mean,
            std,
            min,
            max,
            checkpoint: None,
        }
    }
}

fn random_action<R: Rng + ?Sized>(space: &ActionSpace, rng: &mut R) -> Action {
    match space {
        ActionSpace::Discrete { n } => Action::Discrete(rng.random_range(0..*n)),
        ActionSpace::Box { low, high } => {
            Action::Continuous(low.iter().zip(high).map(|(l, h)| rng.random_range(*l..=*h)).collect())
        }
    }
}

/// Runs one offline evaluation phase. The agent is only read; each episode
/// resets `env` with a seed drawn from `rng`.
pub fn run_evaluation_phase<R: Rng + ?Sized>(
    agent: &dyn Agent,
    env: &mut dyn Env,
    eval: &EvalConfig,
    rng: &mut R,
) -> Result<EvaluationRecord, ExperimentError> {
    let policy = eval.policy.unwrap_or_else(|| EvalPolicy::for_agent(&agent.config()));
    let cap = eval.episode_cap.map_or(u64::MAX, u64::from);
    let space = env.spec().action_space.clone();
    let mut scores = Vec::new();
    let mut total: u64 = 0;
    loop {
        let mut obs = env.reset(Some(rng.random()));
        let mut ret = 0.0;
        let mut len = 0;
        let finished = loop {
            let action = match policy {
                EvalPolicy::GreedyWithEpsilon { epsilon } => {
                    if rng.random::<f64>() < epsilon {
                        random_action(&space, rng)
                    } else {
                        agent.act(&obs)
                    }
                }
                EvalPolicy::DistributionMode => agent.act(&obs),
            };
            let r = env.step(&action)?;
            ret += r.reward;
            len += 1;
            total += 1;
            if r.done || len >= cap {
                break true;
            }
            if let PhaseBudget::Timesteps { n } = eval.budget {
                if total >= n && !scores.is_empty() {
                    break false;
                }
            }
            obs = r.obs;
        };
        if !finished {
            break;
        }
        scores.push(ret);
        let done = match eval.budget {
            PhaseBudget::Episodes { n } => scores.len() >= n,
            PhaseBudget::Timesteps { n } => total >= n,
        };
        if done {
            break;
        }
    }
    Ok(EvaluationRecord::from_scores(0, 0, scores))
}

/// Highest phase mean and its step; ties go to the earliest phase.
pub fn report_best_eval(records: &[EvaluationRecord]) -> (f64, u64) {
    assert!(!records.is_empty(), "contract violation: no evaluation records");
    let mut best = &records[0];
    for r in &records[1..] {
        if r.mean > best.mean {
            best = r;
        }
    }
    (best.mean, best.step)
}

pub(crate) fn best_index(records: &[EvaluationRecord]) -> usize {
    let (_, step) = report_best_eval(records);
    records.iter().position(|r| r.step == step).expect("best record present")
}

/// Reloads the snapshot behind the best-eval record and evaluates it afresh.
pub fn report_re_eval<R: Rng + ?Sized>(
    records: &[EvaluationRecord],
    env: &mut dyn Env,
    eval: &EvalConfig,
    rng: &mut R,
) -> Result<f64, ExperimentError> {
    let best = &records[best_index(records)];
    let path = match &best.checkpoint {
        Some(p) if p.exists() => p,
        other => return Err(ExperimentError::MissingCheckpoint(other.clone())),
    };
    let agent = load_agent_for_eval(path)?;
    Ok(run_evaluation_phase(agent.as_ref(), env, eval, rng)?.mean)
}
