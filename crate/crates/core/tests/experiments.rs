use std::fs;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use rlforge::agents::{make_agent, save_agent, Agent, AgentConfig, DqnConfig, PpoConfig};
use rlforge::envs::{make_env, ActionSpace, Env, EnvError, EnvSpec, StepResult, VecEnv};
use rlforge::experiments::{
    preset, read_scores, report_best_eval, report_re_eval, run, run_evaluation_phase, train_agent_batch_with_evaluation,
    train_agent_with_evaluation, write_scores, EvalConfig, EvalPolicy, EvaluationRecord, ExperimentError, PhaseBudget,
    Reporting, RunConfig, TrainOptions, EPISODES_FILE, PRESETS, SCORES_FILE, SCORES_HEADER,
};
use rlforge::Action;

/// Fixed-length episodes paying `reward` per step, counting every step taken.
#[derive(Clone)]
struct Scripted {
    spec: EnvSpec,
    len: u32,
    reward: f64,
    t: u32,
    done: bool,
    counter: Arc<AtomicU64>,
}

impl Scripted {
    fn new(len: u32, reward: f64) -> Self {
        Self {
            spec: EnvSpec {
                id: "scripted".into(),
                obs_dim: 2,
                action_space: ActionSpace::Discrete { n: 2 },
                max_episode_steps: len,
                reward_range: (reward.min(0.0), reward.max(0.0)),
            },
            len,
            reward,
            t: 0,
            done: false,
            counter: Arc::new(AtomicU64::new(0)),
        }
    }

    fn steps(&self) -> u64 {
        self.counter.load(Ordering::SeqCst)
    }
}

impl Env for Scripted {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: Option<u64>) -> Vec<f64> {
        self.t = 0;
        self.done = false;
        vec![0.0, 1.0]
    }

    fn step(&mut self, _action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        self.counter.fetch_add(1, Ordering::SeqCst);
        self.t += 1;
        self.done = self.len > 0 && self.t >= self.len;
        Ok(StepResult {
            obs: vec![self.t as f64 / 10.0, 1.0],
            reward: self.reward,
            done: self.done,
            timeout: false,
            info: Default::default(),
        })
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn render(&self) -> Value {
        json!({ "t": self.t })
    }

    fn box_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}

fn small_dqn() -> AgentConfig {
    AgentConfig::Dqn(DqnConfig {
        hidden: vec![8],
        replay_start: 20,
        batch_size: 8,
        ..DqnConfig::default()
    })
}

fn episodes(n: usize) -> EvalConfig {
    EvalConfig {
        eval_interval: 100,
        budget: PhaseBudget::Episodes { n },
        policy: Some(EvalPolicy::DistributionMode),
        ..EvalConfig::default()
    }
}

fn agent_for(env: &dyn Env, seed: u64) -> Box<dyn Agent> {
    make_agent(&small_dqn(), env.spec(), seed).unwrap()
}

#[test]
fn phases_at_every_interval_multiple() {
    let mut env = Scripted::new(7, 1.0);
    let mut eval_env = Scripted::new(7, 1.0);
    let mut agent = agent_for(&env, 0);
    let res = train_agent_with_evaluation(agent.as_mut(), &mut env, &mut eval_env, 300, &episodes(2), TrainOptions::default())
        .unwrap();
    let steps: Vec<u64> = res.records.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![100, 200, 300]);
}

#[test]
fn deterministic_return_gives_zero_spread() {
    let mut env = Scripted::new(7, 1.0);
    let mut eval_env = Scripted::new(7, 1.0);
    let mut agent = agent_for(&env, 0);
    let res = train_agent_with_evaluation(agent.as_mut(), &mut env, &mut eval_env, 300, &episodes(3), TrainOptions::default())
        .unwrap();
    for r in &res.records {
        assert_eq!((r.mean, r.std, r.scores.len()), (7.0, 0.0, 3));
    }
}

#[test]
fn evaluation_steps_do_not_count_as_training() {
    let mut env = Scripted::new(9, 1.0);
    let mut eval_env = Scripted::new(9, 1.0);
    let mut agent = agent_for(&env, 0);
    let res = train_agent_with_evaluation(agent.as_mut(), &mut env, &mut eval_env, 1234, &episodes(5), TrainOptions::default())
        .unwrap();
    assert_eq!(env.steps(), 1234);
    assert_eq!(res.steps, 1234);
    assert_eq!(agent.counters().0, 1234);
    assert_eq!(eval_env.steps(), 12 * 5 * 9);
    assert!(!agent.has_pending());
}

#[test]
fn batch_steps_are_summed_over_envs() {
    let envs: Vec<Scripted> = (0..4).map(|_| Scripted::new(13, 1.0)).collect();
    let boxed: Vec<Box<dyn Env>> = envs.iter().map(|e| Box::new(e.clone()) as Box<dyn Env>).collect();
    let mut vec = VecEnv::new(boxed);
    let mut eval_env = Scripted::new(13, 1.0);
    let mut agent = agent_for(&eval_env, 0);
    let res =
        train_agent_batch_with_evaluation(agent.as_mut(), &mut vec, &mut eval_env, 400, &episodes(1), TrainOptions::default())
            .unwrap();
    for e in &envs {
        assert_eq!(e.steps(), 100);
    }
    assert_eq!(res.steps, 400);
    assert_eq!(agent.counters().0, 400);
    assert_eq!(res.records.iter().map(|r| r.step).collect::<Vec<_>>(), vec![100, 200, 300, 400]);
    assert!(!agent.has_pending());
}

#[test]
fn single_env_vector_matches_single_env_loop() {
    for config in [small_dqn(), AgentConfig::Ppo(PpoConfig { hidden: vec![8], rollout_steps: 64, minibatch_size: 16, epochs: 2, ..PpoConfig::default() })] {
        let eval = EvalConfig {
            eval_interval: 250,
            budget: PhaseBudget::Episodes { n: 3 },
            ..EvalConfig::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();

        let mut env = make_env("cartpole").unwrap();
        let mut eval_env = make_env("cartpole").unwrap();
        let mut agent = make_agent(&config, env.spec(), 3).unwrap();
        let opts = TrainOptions {
            out_dir: Some(a.path().into()),
            seed: 11,
            ..TrainOptions::default()
        };
        let single = train_agent_with_evaluation(agent.as_mut(), env.as_mut(), eval_env.as_mut(), 1000, &eval, opts).unwrap();

        let mut vec = VecEnv::new(vec![make_env("cartpole").unwrap()]);
        let mut eval_env = make_env("cartpole").unwrap();
        let mut batch_agent = make_agent(&config, vec.spec(), 3).unwrap();
        let opts = TrainOptions {
            out_dir: Some(b.path().into()),
            seed: 11,
            ..TrainOptions::default()
        };
        let batch =
            train_agent_batch_with_evaluation(batch_agent.as_mut(), &mut vec, eval_env.as_mut(), 1000, &eval, opts).unwrap();

        let read = |d: &tempfile::TempDir, f| fs::read_to_string(d.path().join(f)).unwrap();
        assert_eq!(read(&a, SCORES_FILE), read(&b, SCORES_FILE));
        assert_eq!(read(&a, EPISODES_FILE), read(&b, EPISODES_FILE));
        assert_eq!(single.episodes, batch.episodes);
        assert_eq!(agent.param_fingerprint(), batch_agent.param_fingerprint());
    }
}

#[test]
fn episode_log_separates_envs() {
    let boxed: Vec<Box<dyn Env>> = vec![Box::new(Scripted::new(5, 1.0)), Box::new(Scripted::new(8, 2.0))];
    let mut vec = VecEnv::new(boxed);
    let mut eval_env = Scripted::new(5, 1.0);
    let mut agent = agent_for(&eval_env, 0);
    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions {
        out_dir: Some(dir.path().into()),
        ..TrainOptions::default()
    };
    train_agent_batch_with_evaluation(agent.as_mut(), &mut vec, &mut eval_env, 80, &episodes(1), opts).unwrap();
    let text = fs::read_to_string(dir.path().join(EPISODES_FILE)).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    let env0: Vec<_> = rows.iter().filter(|r| r[1] == "0").collect();
    let env1: Vec<_> = rows.iter().filter(|r| r[1] == "1").collect();
    assert_eq!(env0.len(), 8);
    assert_eq!(env1.len(), 5);
    assert!(env0.iter().all(|r| r[2] == "5" && r[3] == "5"));
    assert!(env1.iter().all(|r| r[2] == "16" && r[3] == "8"));
}

#[test]
fn episode_budget_counts_exactly() {
    let mut env = Scripted::new(4, 0.75);
    let agent = agent_for(&env, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = run_evaluation_phase(agent.as_ref(), &mut env, &episodes(10), &mut rng).unwrap();
    assert_eq!(r.scores.len(), 10);
    assert_eq!(r.mean, 3.0);
}

#[test]
fn timestep_budget_discards_partial_episode() {
    let mut env = Scripted::new(100, 1.0);
    let agent = agent_for(&env, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let eval = EvalConfig {
        budget: PhaseBudget::Timesteps { n: 250 },
        ..episodes(1)
    };
    let r = run_evaluation_phase(agent.as_ref(), &mut env, &eval, &mut rng).unwrap();
    assert_eq!(r.scores, vec![100.0, 100.0]);
    assert_eq!(env.steps(), 250);

    // The first episode always completes, however long.
    let eval = EvalConfig {
        budget: PhaseBudget::Timesteps { n: 30 },
        ..episodes(1)
    };
    let r = run_evaluation_phase(agent.as_ref(), &mut env, &eval, &mut rng).unwrap();
    assert_eq!(r.scores, vec![100.0]);
}

#[test]
fn episode_cap_bounds_endless_episodes() {
    let mut env = Scripted::new(0, 1.0);
    let agent = agent_for(&env, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let eval = EvalConfig {
        episode_cap: Some(50),
        ..episodes(4)
    };
    let r = run_evaluation_phase(agent.as_ref(), &mut env, &eval, &mut rng).unwrap();
    assert_eq!(r.scores, vec![50.0; 4]);
}

#[test]
fn epsilon_policy_is_reproducible() {
    let mut env = make_env("cartpole").unwrap();
    let agent = make_agent(&small_dqn(), env.spec(), 1).unwrap();
    let eval = EvalConfig {
        policy: Some(EvalPolicy::GreedyWithEpsilon { epsilon: 0.3 }),
        ..episodes(5)
    };
    let run_once = |env: &mut dyn Env| {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        run_evaluation_phase(agent.as_ref(), env, &eval, &mut rng).unwrap().scores
    };
    assert_eq!(run_once(env.as_mut()), run_once(env.as_mut()));
}

#[test]
fn evaluation_leaves_agent_untouched() {
    let mut env = make_env("cartpole").unwrap();
    let agent = make_agent(&small_dqn(), env.spec(), 1).unwrap();
    let before = agent.param_fingerprint();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    run_evaluation_phase(agent.as_ref(), env.as_mut(), &EvalConfig::default(), &mut rng).unwrap();
    assert_eq!(before, agent.param_fingerprint());
    assert_eq!(agent.counters(), (0, 0));
}

fn record(step: u64, mean: f64) -> EvaluationRecord {
    EvaluationRecord::from_scores(step, 0, vec![mean])
}

#[test]
fn best_eval_examples() {
    assert_eq!(report_best_eval(&[record(10, 1.0), record(20, 5.0), record(30, 3.0)]), (5.0, 20));
    assert_eq!(report_best_eval(&[record(10, -2.0)]), (-2.0, 10));
    assert_eq!(report_best_eval(&[record(10, 5.0), record(20, 5.0)]), (5.0, 10));
}

#[test]
#[should_panic(expected = "contract violation")]
fn best_eval_of_nothing_panics() {
    report_best_eval(&[]);
}

#[test]
fn re_eval_needs_a_checkpoint() {
    let mut env = Scripted::new(3, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = report_re_eval(&[record(10, 1.0)], &mut env, &episodes(1), &mut rng).unwrap_err();
    assert!(matches!(err, ExperimentError::MissingCheckpoint(None)));
    let mut rec = record(10, 1.0);
    rec.checkpoint = Some("/nonexistent/step_10".into());
    assert!(report_re_eval(&[rec], &mut env, &episodes(1), &mut rng).is_err());
}

#[test]
fn re_eval_loads_the_argmax_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let mut env = make_env("cartpole").unwrap();
    let eval = episodes(3);
    let mut records = Vec::new();
    let mut own_scores = Vec::new();
    for (i, planted) in [10.0, 90.0, 40.0].into_iter().enumerate() {
        let agent = make_agent(&small_dqn(), env.spec(), 100 + i as u64).unwrap();
        let path = dir.path().join(format!("step_{i}"));
        save_agent(agent.as_ref(), &path, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        own_scores.push(run_evaluation_phase(agent.as_ref(), env.as_mut(), &eval, &mut rng).unwrap().mean);
        let mut rec = record(i as u64, planted);
        rec.checkpoint = Some(path);
        records.push(rec);
    }
    assert!(own_scores[1] != own_scores[0] || own_scores[1] != own_scores[2]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let score = report_re_eval(&records, env.as_mut(), &eval, &mut rng).unwrap();
    assert_eq!(score, own_scores[1]);
}

#[test]
fn scores_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let records: Vec<EvaluationRecord> = (1..=3)
        .map(|i| EvaluationRecord::from_scores(i * 100, i * 7, vec![1.0 / i as f64, 0.3, -2.5 * i as f64]))
        .collect();
    write_scores(dir.path(), &records).unwrap();
    let text = fs::read_to_string(dir.path().join(SCORES_FILE)).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert_eq!(text.lines().next().unwrap(), SCORES_HEADER);
    let rows = read_scores(&dir.path().join(SCORES_FILE)).unwrap();
    for (row, rec) in rows.iter().zip(&records) {
        assert_eq!((row.steps, row.episodes, row.mean, row.stdev, row.max, row.min), (rec.step, rec.train_episodes, rec.mean, rec.std, rec.max, rec.min));
        let n = rec.scores.len() as f64;
        let mean = rec.scores.iter().sum::<f64>() / n;
        let var = rec.scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
        assert!((row.mean - mean).abs() < 1e-9 && (row.stdev - var.sqrt()).abs() < 1e-9);
    }
}

#[test]
fn snapshots_are_pruned_to_best_and_latest() {
    let dir = tempfile::tempdir().unwrap();
    let mut env = make_env("cartpole").unwrap();
    let mut eval_env = make_env("cartpole").unwrap();
    let mut agent = make_agent(&small_dqn(), env.spec(), 0).unwrap();
    let opts = TrainOptions {
        out_dir: Some(dir.path().into()),
        ..TrainOptions::default()
    };
    let res = train_agent_with_evaluation(agent.as_mut(), env.as_mut(), eval_env.as_mut(), 600, &episodes(2), opts).unwrap();
    let kept: Vec<_> = fs::read_dir(dir.path().join("checkpoints")).unwrap().collect();
    let (_, best_step) = report_best_eval(&res.records);
    let expected = if best_step == 600 { 1 } else { 2 };
    assert_eq!(kept.len(), expected);
    for r in &res.records {
        assert_eq!(r.checkpoint.is_some(), r.step == best_step || r.step == 600);
    }
}

#[test]
fn stop_condition_ends_training() {
    let mut env = Scripted::new(5, 1.0);
    let mut eval_env = Scripted::new(5, 1.0);
    let mut agent = agent_for(&env, 0);
    let opts = TrainOptions {
        stop_when: Some(Box::new(|_, r| r.step >= 200)),
        ..TrainOptions::default()
    };
    let res = train_agent_with_evaluation(agent.as_mut(), &mut env, &mut eval_env, 1000, &episodes(1), opts).unwrap();
    assert!(res.stopped_early);
    assert_eq!(res.steps, 200);
    assert_eq!(env.steps(), 200);
    assert!(!agent.has_pending());
}

#[test]
fn every_preset_runs_briefly() {
    for name in PRESETS {
        let mut cfg = preset(name).unwrap();
        cfg.steps = 300;
        cfg.eval.eval_interval = 150;
        cfg.eval.budget = PhaseBudget::Timesteps { n: 50 };
        let out = run(&cfg, None).unwrap();
        assert_eq!(out.steps, 300, "{name}");
        assert_eq!(out.records.len(), 2, "{name}");
    }
}

#[test]
fn run_json_reproduces_scores() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("dqn-gridworld").unwrap();
    cfg.steps = 2000;
    cfg.eval.eval_interval = 500;
    cfg.eval.reporting = Reporting::ReEval;
    cfg.out_dir = Some(dir.path().join("a"));
    let first = run(&cfg, None).unwrap();
    assert!(first.re_eval.is_some());

    let meta: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a/run.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 0);
    assert!(meta["version"].as_str().unwrap().starts_with('v'));
    let mut echoed: RunConfig = serde_json::from_value(meta["config"].clone()).unwrap();
    assert_eq!(echoed, cfg);
    echoed.out_dir = Some(dir.path().join("b"));
    run(&echoed, None).unwrap();
    let a = fs::read(dir.path().join("a").join(SCORES_FILE)).unwrap();
    let b = fs::read(dir.path().join("b").join(SCORES_FILE)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn invalid_eval_config_is_rejected() {
    let mut cfg = preset("dqn-gridworld").unwrap();
    cfg.eval.eval_interval = 0;
    assert!(matches!(run(&cfg, None), Err(ExperimentError::InvalidConfig(_))));
    let mut cfg = preset("dqn-gridworld").unwrap();
    cfg.env = "nowhere".into();
    assert!(matches!(run(&cfg, None), Err(ExperimentError::Env(EnvError::UnknownEnv(_)))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn phase_count_is_floor_of_ratio(total in 1u64..400, interval in 1u64..120) {
        let mut env = Scripted::new(6, 1.0);
        let mut eval_env = Scripted::new(6, 1.0);
        let mut agent = agent_for(&env, 0);
        let eval = EvalConfig { eval_interval: interval, ..episodes(1) };
        let res = train_agent_with_evaluation(agent.as_mut(), &mut env, &mut eval_env, total, &eval, TrainOptions::default()).unwrap();
        prop_assert_eq!(res.records.len() as u64, total / interval);
        let (best, _) = report_best_eval(&res.records.iter().cloned().chain([record(0, f64::NEG_INFINITY)]).collect::<Vec<_>>());
        prop_assert!(res.records.iter().all(|r| r.mean <= best));
    }
}
