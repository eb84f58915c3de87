use std::fs;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::eval::best_index;
use super::{run_evaluation_phase, EvalConfig, EvaluationRecord, ExperimentError, ScoreLog};
use crate::agents::{save_agent, Agent};
use crate::envs::{Env, VecEnv};

/// Called after every evaluation phase; returning true ends training early.
pub type StopCondition<'a> = Box<dyn FnMut(&dyn Agent, &EvaluationRecord) -> bool + 'a>;

pub struct TrainOptions<'a> {
    /// Where `scores.txt`, `episodes.txt` and checkpoints go; `None` keeps
    /// everything in memory and disables re-evaluation.
    pub out_dir: Option<PathBuf>,
    /// Seeds the first training reset and the evaluation stream.
    pub seed: u64,
    /// Include the replay buffer in evaluation snapshots.
    pub save_replay: bool,
    pub stop_when: Option<StopCondition<'a>>,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        Self {
            out_dir: None,
            seed: 0,
            save_replay: false,
            stop_when: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainResult {
    pub records: Vec<EvaluationRecord>,
    /// Training environment steps actually taken.
    pub steps: u64,
    pub episodes: u64,
    pub stopped_early: bool,
}

/// Seed of the evaluation stream, kept apart from the training resets.
fn eval_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Evaluation bookkeeping shared by both loops.
struct Evaluator<'a, 'o> {
    env: &'a mut dyn Env,
    eval: &'a EvalConfig,
    rng: ChaCha8Rng,
    log: Option<ScoreLog>,
    opts: TrainOptions<'o>,
    records: Vec<EvaluationRecord>,
}

impl<'a, 'o> Evaluator<'a, 'o> {
    fn new(env: &'a mut dyn Env, eval: &'a EvalConfig, opts: TrainOptions<'o>) -> Result<Self, ExperimentError> {
        eval.validate()?;
        let log = opts.out_dir.as_deref().map(ScoreLog::create).transpose()?;
        Ok(Self {
            env,
            eval,
            rng: ChaCha8Rng::seed_from_u64(eval_seed(opts.seed)),
            log,
            opts,
            records: Vec::new(),
        })
    }

    fn episode(&mut self, steps: u64, env: usize, ret: f64, len: u64) -> Result<(), ExperimentError> {
        if let Some(log) = &mut self.log {
            log.episode(steps, env, ret, len)?;
        }
        Ok(())
    }

    /// Runs a phase, snapshots the agent and logs the row. Returns true to stop.
    fn phase(&mut self, agent: &dyn Agent, step: u64, episodes: u64) -> Result<bool, ExperimentError> {
        let mut rec = run_evaluation_phase(agent, self.env, self.eval, &mut self.rng)?;
        rec.step = step;
        rec.train_episodes = episodes;
        log::info!("step {step}: eval mean {:.3} over {} episodes", rec.mean, rec.scores.len());
        if let Some(dir) = &self.opts.out_dir {
            let path = dir.join("checkpoints").join(format!("step_{step}"));
            save_agent(agent, &path, self.opts.save_replay)?;
            rec.checkpoint = Some(path);
        }
        if let Some(log) = &mut self.log {
            log.append(&rec)?;
        }
        self.records.push(rec);
        self.prune()?;
        let rec = self.records.last().expect("just pushed");
        Ok(self.opts.stop_when.as_mut().is_some_and(|f| f(agent, rec)))
    }

    /// Keeps only the best and the latest snapshot on disk.
    fn prune(&mut self) -> Result<(), ExperimentError> {
        let best = best_index(&self.records);
        let last = self.records.len() - 1;
        for (i, r) in self.records.iter_mut().enumerate() {
            if i != best && i != last {
                if let Some(p) = r.checkpoint.take() {
                    if p.exists() {
                        fs::remove_dir_all(p)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Trains on one environment for `total_steps` steps, evaluating on
/// `eval_env` after every multiple of `eval.eval_interval`.
pub fn train_agent_with_evaluation(
    agent: &mut dyn Agent,
    env: &mut dyn Env,
    eval_env: &mut dyn Env,
    total_steps: u64,
    eval: &EvalConfig,
    opts: TrainOptions<'_>,
) -> Result<TrainResult, ExperimentError> {
    let mut ev = Evaluator::new(eval_env, eval, opts)?;
    let mut obs = env.reset(Some(ev.opts.seed));
    let mut reward = 0.0;
    let (mut ret, mut len) = (0.0, 0u64);
    let mut episodes = 0;
    let mut stopped_early = false;
    let mut t = 0;
    while t < total_steps {
        t += 1;
        let action = agent.act_and_train(&obs, reward);
        let r = env.step(&action)?;
        ret += r.reward;
        len += 1;
        let stop = if t % eval.eval_interval == 0 {
            ev.phase(agent, t, episodes)?
        } else {
            false
        };
        if r.done {
            agent.stop_episode_and_train(&r.obs, r.reward, r.is_terminal());
            episodes += 1;
            ev.episode(t, 0, ret, len)?;
            (ret, len) = (0.0, 0);
            reward = 0.0;
            if t < total_steps && !stop {
                obs = env.reset(None);
            }
        } else {
            obs = r.obs;
            reward = r.reward;
            if t == total_steps || stop {
                agent.stop_episode_and_train(&obs, reward, false);
            }
        }
        if stop {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainResult {
        records: ev.records,
        steps: t,
        episodes,
        stopped_early,
    })
}

/// Synchronous training on every environment of `envs`. `total_steps`
/// counts steps summed over environments; the loop runs
/// `ceil(total_steps / n)` iterations and evaluates once per iteration that
/// crosses a multiple of `eval.eval_interval` (within `total_steps`).
pub fn train_agent_batch_with_evaluation(
    agent: &mut dyn Agent,
    envs: &mut VecEnv,
    eval_env: &mut dyn Env,
    total_steps: u64,
    eval: &EvalConfig,
    opts: TrainOptions<'_>,
) -> Result<TrainResult, ExperimentError> {
    let n = envs.len() as u64;
    assert!(n > 0, "contract violation: empty vector environment");
    let mut ev = Evaluator::new(eval_env, eval, opts)?;
    let mut obs = envs.reset(Some(ev.opts.seed));
    let mut rets = vec![0.0; n as usize];
    let mut lens = vec![0u64; n as usize];
    let mut episodes = 0;
    let mut steps = 0;
    let mut stopped_early = false;
    let iterations = total_steps.div_ceil(n);
    for it in 1..=iterations {
        let actions = agent.batch_act_and_train(&obs);
        let results = envs.step(&actions)?;
        let before = steps;
        steps += n;
        let crossed = (steps.min(total_steps) / eval.eval_interval) > (before / eval.eval_interval);
        let stop = if crossed { ev.phase(agent, steps, episodes)? } else { false };
        let last = it == iterations || stop;
        let mut next = Vec::with_capacity(results.len());
        let mut rewards = Vec::with_capacity(results.len());
        let mut terminals = Vec::with_capacity(results.len());
        let mut resets = Vec::with_capacity(results.len());
        for (i, r) in results.iter().enumerate() {
            rets[i] += r.reward;
            lens[i] += 1;
            if r.done {
                episodes += 1;
                ev.episode(steps, i, rets[i], lens[i])?;
                (rets[i], lens[i]) = (0.0, 0);
            }
            next.push(r.next_obs().to_vec());
            rewards.push(r.reward);
            terminals.push(r.is_terminal());
            resets.push(r.done || last);
        }
        agent.batch_observe_and_train(&next, &rewards, &terminals, &resets);
        obs = results.into_iter().map(|r| r.obs).collect();
        if stop {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainResult {
        records: ev.records,
        steps,
        episodes,
        stopped_early,
    })
}
