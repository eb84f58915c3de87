use std::fs;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    report_best_eval, report_re_eval, train_agent_batch_with_evaluation, train_agent_with_evaluation, EvalConfig,
    EvaluationRecord, ExperimentError, PhaseBudget, Reporting, StopCondition, TrainOptions,
};
use crate::agents::{
    make_agent, make_rainbow, Agent, AgentConfig, DdpgConfig, DqnConfig, PpoConfig, ReinforceConfig, SacConfig,
    Td3Config, TargetUpdate, ValueDistribution,
};
use crate::envs::{make_env, VecEnv};
use crate::exploration::ExplorerConfig;
use crate::replay::PrioritizedConfig;

pub const ALGORITHMS: [&str; 7] = ["dqn", "rainbow", "reinforce", "ppo", "ddpg", "td3", "sac"];

pub const PRESETS: [&str; 9] = [
    "dqn-gridworld",
    "dqn-cartpole",
    "rainbow-cartpole",
    "ppo-cartpole",
    "reinforce-cartpole",
    "ddpg-pendulum",
    "td3-pendulum",
    "sac-pendulum",
    "atari-protocol",
];

/// Everything needed to reproduce one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: String,
    pub seed: u64,
    pub steps: u64,
    #[serde(default = "one")]
    pub n_envs: usize,
    pub agent: AgentConfig,
    pub eval: EvalConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Stop once a phase mean reaches this score.
    #[serde(default)]
    pub stop_at_score: Option<f64>,
    #[serde(default)]
    pub save_replay: bool,
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        make_env(&self.env)?;
        self.eval.validate()?;
        if self.n_envs == 0 || self.steps == 0 {
            return Err(ExperimentError::InvalidConfig("steps and n_envs must be positive".into()));
        }
        Ok(())
    }
}

fn eval_every(interval: u64, episodes: usize) -> EvalConfig {
    EvalConfig {
        eval_interval: interval,
        budget: PhaseBudget::Episodes { n: episodes },
        ..EvalConfig::default()
    }
}

fn dqn_gridworld() -> DqnConfig {
    DqnConfig {
        gamma: 0.9,
        hidden: vec![32, 32],
        replay_start: 200,
        target_update: TargetUpdate::Hard { interval: 100 },
        explorer: ExplorerConfig::EpsilonLinearDecay {
            start: 1.0,
            end: 0.1,
            decay_steps: 5000,
        },
        ..DqnConfig::default()
    }
}

fn dqn_cartpole() -> DqnConfig {
    DqnConfig {
        lr: 1e-3,
        batch_size: 64,
        replay_capacity: 50_000,
        replay_start: 1000,
        target_update: TargetUpdate::Hard { interval: 200 },
        explorer: ExplorerConfig::EpsilonLinearDecay {
            start: 1.0,
            end: 0.02,
            decay_steps: 10_000,
        },
        ..DqnConfig::default()
    }
}

fn rainbow_cartpole() -> DqnConfig {
    let base = DqnConfig {
        distribution: ValueDistribution::Categorical {
            v_min: 0.0,
            v_max: 100.0,
            n_atoms: 51,
        },
        ..dqn_cartpole()
    };
    DqnConfig {
        prioritized: Some(PrioritizedConfig {
            beta_steps: 100_000,
            ..PrioritizedConfig::default()
        }),
        ..make_rainbow(base)
    }
}

fn pendulum_ddpg() -> DdpgConfig {
    DdpgConfig::default()
}

/// The named desk-scale presets, without an output directory.
pub fn preset(name: &str) -> Option<RunConfig> {
    let run = |env: &str, steps, agent, eval| RunConfig {
        env: env.into(),
        seed: 0,
        steps,
        n_envs: 1,
        agent,
        eval,
        out_dir: None,
        stop_at_score: None,
        save_replay: false,
    };
    Some(match name {
        "dqn-gridworld" => run("gridworld5", 50_000, AgentConfig::Dqn(dqn_gridworld()), eval_every(1000, 10)),
        "dqn-cartpole" => run("cartpole", 100_000, AgentConfig::Dqn(dqn_cartpole()), eval_every(1000, 10)),
        "rainbow-cartpole" => run("cartpole", 100_000, AgentConfig::Dqn(rainbow_cartpole()), eval_every(1000, 10)),
        "ppo-cartpole" => run("cartpole", 200_000, AgentConfig::Ppo(PpoConfig::default()), eval_every(4096, 10)),
        "reinforce-cartpole" => run(
            "cartpole",
            200_000,
            AgentConfig::Reinforce(ReinforceConfig::default()),
            eval_every(5000, 10),
        ),
        "ddpg-pendulum" => run("pendulum", 100_000, AgentConfig::Ddpg(pendulum_ddpg()), eval_every(5000, 10)),
        "td3-pendulum" => run(
            "pendulum",
            100_000,
            AgentConfig::Td3(Td3Config {
                base: pendulum_ddpg(),
                ..Td3Config::default()
            }),
            eval_every(5000, 10),
        ),
        "sac-pendulum" => run("pendulum", 100_000, AgentConfig::Sac(SacConfig::default()), eval_every(5000, 10)),
        "atari-protocol" => run("cartpole", 1_000_000, AgentConfig::Dqn(dqn_cartpole()), EvalConfig::atari_protocol()),
        _ => return None,
    })
}

/// Agent hyperparameters for `algo` on `env`: the matching preset's when
/// there is one, otherwise the algorithm defaults.
pub fn algorithm_config(algo: &str, env: &str) -> Option<AgentConfig> {
    if let Some(p) = preset(&format!("{algo}-{env}")) {
        return Some(p.agent);
    }
    Some(match algo {
        "dqn" => AgentConfig::Dqn(DqnConfig::default()),
        "rainbow" => AgentConfig::Dqn(make_rainbow(DqnConfig::default())),
        "reinforce" => AgentConfig::Reinforce(ReinforceConfig::default()),
        "ppo" => AgentConfig::Ppo(PpoConfig::default()),
        "ddpg" => AgentConfig::Ddpg(DdpgConfig::default()),
        "td3" => AgentConfig::Td3(Td3Config::default()),
        "sac" => AgentConfig::Sac(SacConfig::default()),
        _ => return None,
    })
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    seed: u64,
    version: String,
    config: &'a RunConfig,
}

pub struct RunOutcome {
    pub records: Vec<EvaluationRecord>,
    pub steps: u64,
    pub episodes: u64,
    pub stopped_early: bool,
    /// `(score, step)` of the best phase, if any phase ran.
    pub best_eval: Option<(f64, u64)>,
    /// Set when the config asks for the re-eval protocol.
    pub re_eval: Option<f64>,
    pub agent: Box<dyn Agent>,
}

impl RunOutcome {
    /// The score the configured reporting protocol asks for.
    pub fn reported_score(&self) -> Option<f64> {
        self.re_eval.or(self.best_eval.map(|b| b.0))
    }
}

/// Trains as configured, writing `run.json`, `scores.txt` and checkpoints
/// when `out_dir` is set. `stop_when` is checked after every phase in
/// addition to `stop_at_score`.
pub fn run(cfg: &RunConfig, mut stop_when: Option<StopCondition<'_>>) -> Result<RunOutcome, ExperimentError> {
    cfg.validate()?;
    let mut eval_env = make_env(&cfg.env)?;
    let mut agent = make_agent(&cfg.agent, eval_env.spec(), cfg.seed)?;
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        let meta = RunMetadata {
            seed: cfg.seed,
            version: format!("v{}", env!("CARGO_PKG_VERSION")),
            config: cfg,
        };
        fs::write(dir.join("run.json"), serde_json::to_string_pretty(&meta)?)?;
    }
    let threshold = cfg.stop_at_score;
    let stop: Option<StopCondition<'_>> = if threshold.is_some() || stop_when.is_some() {
        Some(Box::new(move |a: &dyn Agent, r: &EvaluationRecord| {
            let by_score = threshold.is_some_and(|t| r.mean >= t);
            let by_hook = stop_when.as_mut().is_some_and(|f| f(a, r));
            by_score || by_hook
        }))
    } else {
        None
    };
    let opts = TrainOptions {
        out_dir: cfg.out_dir.clone(),
        seed: cfg.seed,
        save_replay: cfg.save_replay,
        stop_when: stop,
    };
    let result = if cfg.n_envs == 1 {
        let mut env = make_env(&cfg.env)?;
        train_agent_with_evaluation(agent.as_mut(), env.as_mut(), eval_env.as_mut(), cfg.steps, &cfg.eval, opts)?
    } else {
        let envs = (0..cfg.n_envs).map(|_| make_env(&cfg.env)).collect::<Result<Vec<_>, _>>()?;
        let mut vec = VecEnv::new(envs);
        train_agent_batch_with_evaluation(agent.as_mut(), &mut vec, eval_env.as_mut(), cfg.steps, &cfg.eval, opts)?
    };
    let best_eval = (!result.records.is_empty()).then(|| report_best_eval(&result.records));
    let re_eval = if cfg.eval.reporting == Reporting::ReEval && best_eval.is_some() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        Some(report_re_eval(&result.records, eval_env.as_mut(), &cfg.eval, &mut rng)?)
    } else {
        None
    };
    Ok(RunOutcome {
        records: result.records,
        steps: result.steps,
        episodes: result.episodes,
        stopped_early: result.stopped_early,
        best_eval,
        re_eval,
        agent,
    })
}

