use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::common::{batch_tensor, box_bounds, check_batch, input_gradient, var_rows, Net, Replay};
use super::losses::{critic_loss_with, deterministic_actor_loss_with};
use super::pg::{distributions, policy_outputs};
use super::{Agent, AgentConfig, AgentError, AgentOutputs, AgentState};
use crate::autodiff::{AdamConfig, Bound, Var};
use crate::envs::EnvSpec;
use crate::exploration::{Explorer, ExplorerConfig};
use crate::models::{Activation, HeadVars, MlpSpec, NoiseMode, OutputHead};
use crate::replay::{PrioritizedBatch, Transition};
use crate::{Action, Mlp, Tape, Tensor};

use super::common::from_unit_action;

/// Deterministic policy-gradient objective: `-mean Q(s, mu(s))`.
pub fn actor_loss(q: &[f64]) -> f64 {
    -q.iter().sum::<f64>() / q.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub replay_start: usize,
    /// Uniformly random actions for this many initial steps.
    pub random_steps: u64,
    pub update_interval: u64,
    pub tau: f64,
    /// Exploration noise, in the normalized `[-1, 1]` action space.
    pub explorer: ExplorerConfig,
    pub max_grad_norm: Option<f64>,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            batch_size: 128,
            replay_capacity: 100_000,
            replay_start: 1000,
            random_steps: 1000,
            update_interval: 1,
            tau: 0.005,
            explorer: ExplorerConfig::AdditiveGaussian {
                sigma: 0.1,
                low: vec![-1.0],
                high: vec![1.0],
            },
            max_grad_norm: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Td3Config {
    #[serde(flatten)]
    pub base: DdpgConfig,
    /// Critic updates per actor and target update.
    pub policy_delay: u64,
    /// Std of the target-policy smoothing noise.
    pub target_noise: f64,
    pub noise_clip: f64,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            base: DdpgConfig::default(),
            policy_delay: 2,
            target_noise: 0.2,
            noise_clip: 0.5,
        }
    }
}

/// Explorer bounds are given per dimension; a single entry is broadcast.
pub(crate) fn explorer_for(config: &ExplorerConfig, n_envs: usize, dim: usize) -> Result<Explorer, AgentError> {
    let widen = |v: &Vec<f64>| if v.len() == 1 { vec![v[0]; dim] } else { v.clone() };
    let config = match config {
        ExplorerConfig::AdditiveGaussian { sigma, low, high } => ExplorerConfig::AdditiveGaussian {
            sigma: *sigma,
            low: widen(low),
            high: widen(high),
        },
        ExplorerConfig::OrnsteinUhlenbeck {
            theta,
            sigma,
            mu,
            low,
            high,
        } => ExplorerConfig::OrnsteinUhlenbeck {
            theta: *theta,
            sigma: *sigma,
            mu: *mu,
            low: widen(low),
            high: widen(high),
        },
        other => other.clone(),
    };
    Explorer::new(config, n_envs, dim).map_err(|e| AgentError::InvalidConfig(e.to_string()))
}

pub(crate) fn critic_spec(spec: &EnvSpec, hidden: &[usize], activation: Activation, dim: usize) -> MlpSpec {
    MlpSpec::new(spec.obs_dim + dim, hidden, activation, OutputHead::Raw { out: 1 })
}

/// `Q(s, a)` as `[B]`.
pub(crate) fn critic_q(tape: &Tape, critic: &Mlp, bound: &Bound, obs: Var, action: Var) -> Var {
    let x = tape.concat_last(obs, action);
    let HeadVars::Raw(q) = critic.forward(tape, bound, x, NoiseMode::Mean) else {
        unreachable!("critic head")
    };
    let b = tape.shape(q)[0];
    tape.reshape(q, &[b])
}

/// Tensors of a sampled batch: observations, unit actions, rewards,
/// next observations and bootstrap discounts.
pub(crate) struct OffPolicyBatch {
    pub obs: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_obs: Tensor,
    pub discounts: Vec<f64>,
}

impl OffPolicyBatch {
    pub fn from_sample(batch: &PrioritizedBatch, gamma: f64) -> Self {
        let ts = &batch.transitions;
        let rows = |f: &dyn Fn(&Transition) -> &[f64]| batch_tensor(&ts.iter().map(f).collect::<Vec<_>>());
        Self {
            obs: rows(&|t| t.obs.as_slice()),
            actions: rows(&|t| t.action.as_continuous().expect("continuous action")),
            rewards: ts.iter().map(|t| t.reward).collect(),
            next_obs: rows(&|t| t.next_obs.as_slice()),
            discounts: ts.iter().map(|t| t.bootstrap_discount(gamma)).collect(),
        }
    }
}

/// Mean squared error of each critic against fixed targets; one step each.
pub(crate) fn critic_step(critics: &mut [Net], batch: &OffPolicyBatch, targets: &[f64]) -> f64 {
    let mut total = 0.0;
    for critic in critics.iter_mut() {
        let tape = Tape::new();
        let bound = tape.bind(critic.model.params());
        let loss = critic_loss_with(&tape, &critic.model, &bound, &batch.obs, &batch.actions, targets);
        total += tape.item(loss);
        let grads = tape.backward(loss).expect("scalar loss");
        critic.step(grads.for_bound(&bound));
    }
    total / critics.len() as f64
}

/// Row-wise `min_i Q_i(s, a)` from frozen networks.
pub(crate) fn min_q(critics: &[&Mlp], obs: &Tensor, actions: &Tensor) -> Vec<f64> {
    let tape = Tape::new();
    let o = tape.constant(obs.clone());
    let a = tape.constant(actions.clone());
    let mut out: Option<Vec<f64>> = None;
    for c in critics {
        let bound = tape.bind_frozen(c.params());
        let q = tape.value(critic_q(&tape, c, &bound, o, a)).data().to_vec();
        out = Some(match out {
            None => q,
            Some(m) => m.iter().zip(q).map(|(x, y)| x.min(y)).collect(),
        });
    }
    out.expect("at least one critic")
}

/// Deterministic actor in `[-1, 1]` with one or two critics.
#[derive(Clone, Debug)]
pub struct DdpgAgent {
    cfg: DdpgConfig,
    td3: Option<Td3Config>,
    spec: EnvSpec,
    low: Vec<f64>,
    high: Vec<f64>,
    actor: Net,
    target_actor: Mlp,
    critics: Vec<Net>,
    target_critics: Vec<Mlp>,
    replay: Replay,
    explorer: Explorer,
    pending: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    rng: ChaCha8Rng,
    steps: u64,
    updates: u64,
    actor_updates: u64,
    last_critic_loss: f64,
}

impl DdpgAgent {
    pub fn new_ddpg(cfg: DdpgConfig, spec: &EnvSpec, seed: u64) -> Result<Self, AgentError> {
        Self::build(cfg, None, spec, seed, "ddpg")
    }

    pub fn new_td3(cfg: Td3Config, spec: &EnvSpec, seed: u64) -> Result<Self, AgentError> {
        if cfg.policy_delay == 0 || !(cfg.target_noise >= 0.0) || !(cfg.noise_clip >= 0.0) {
            return Err(AgentError::InvalidConfig(
                "TD3 needs policy_delay >= 1 and non-negative smoothing noise".into(),
            ));
        }
        Self::build(cfg.base.clone(), Some(cfg), spec, seed, "td3")
    }

    fn build(cfg: DdpgConfig, td3: Option<Td3Config>, spec: &EnvSpec, seed: u64, algo: &'static str) -> Result<Self, AgentError> {
        let (low, high) = box_bounds(spec, algo)?;
        if cfg.batch_size == 0 || cfg.update_interval == 0 || !(0.0..=1.0).contains(&cfg.tau) {
            return Err(AgentError::InvalidConfig(
                "batch_size and update_interval must be positive and tau in [0, 1]".into(),
            ));
        }
        let dim = low.len();
        let explorer = explorer_for(&cfg.explorer, 1, dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let aspec = MlpSpec::new(spec.obs_dim, &cfg.hidden, cfg.activation, OutputHead::DeterministicPolicy { action_dim: dim });
        let actor = Net::new(aspec, AdamConfig::with_lr(cfg.actor_lr), cfg.max_grad_norm, &mut rng)?;
        let n_critics = if td3.is_some() { 2 } else { 1 };
        let critics = (0..n_critics)
            .map(|_| {
                let cspec = critic_spec(spec, &cfg.hidden, cfg.activation, dim);
                Net::new(cspec, AdamConfig::with_lr(cfg.critic_lr), cfg.max_grad_norm, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            target_actor: actor.model.clone(),
            target_critics: critics.iter().map(|c| c.model.clone()).collect(),
            replay: Replay::new(cfg.replay_capacity, None),
            cfg,
            td3,
            spec: spec.clone(),
            low,
            high,
            actor,
            critics,
            explorer,
            pending: Vec::new(),
            rng,
            steps: 0,
            updates: 0,
            actor_updates: 0,
            last_critic_loss: f64::NAN,
        })
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor.model
    }

    pub fn critics(&self) -> Vec<&Mlp> {
        self.critics.iter().map(|c| &c.model).collect()
    }

    pub fn target_critics(&self) -> &[Mlp] {
        &self.target_critics
    }

    pub fn actor_updates(&self) -> u64 {
        self.actor_updates
    }

    pub fn last_critic_loss(&self) -> f64 {
        self.last_critic_loss
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    /// Greedy actions in the normalized space.
    fn unit_actions(&self, obs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let tape = Tape::new();
        let bound = tape.bind_frozen(self.actor.model.params());
        let x = tape.constant(batch_tensor(obs));
        let HeadVars::Deterministic(a) = self.actor.model.forward(&tape, &bound, x, NoiseMode::Mean) else {
            unreachable!("deterministic head")
        };
        var_rows(&tape, a)
    }

    fn target_actions(&mut self, next_obs: &Tensor) -> Tensor {
        let tape = Tape::new();
        let bound = tape.bind_frozen(self.target_actor.params());
        let HeadVars::Deterministic(a) = self.target_actor.forward(&tape, &bound, tape.constant(next_obs.clone()), NoiseMode::Mean) else {
            unreachable!("deterministic head")
        };
        let mut a = tape.value(a).clone();
        if let Some(t) = &self.td3 {
            for x in a.data_mut() {
                let n: f64 = self.rng.sample::<f64, _>(StandardNormal) * t.target_noise;
                *x = (*x + n.clamp(-t.noise_clip, t.noise_clip)).clamp(-1.0, 1.0);
            }
        }
        a
    }

    /// One critic step, plus an actor and target step when due.
    pub fn update(&mut self) {
        let sample = self.replay.sample(self.cfg.batch_size, self.steps, &mut self.rng);
        let batch = OffPolicyBatch::from_sample(&sample, self.cfg.gamma);
        let next_a = self.target_actions(&batch.next_obs);
        let targets_ref: Vec<&Mlp> = self.target_critics.iter().collect();
        let next_q = min_q(&targets_ref, &batch.next_obs, &next_a);
        let y: Vec<f64> = (0..next_q.len())
            .map(|i| batch.rewards[i] + batch.discounts[i] * next_q[i])
            .collect();
        self.last_critic_loss = critic_step(&mut self.critics, &batch, &y);
        self.updates += 1;

        let delay = self.td3.as_ref().map_or(1, |t| t.policy_delay);
        if self.updates % delay == 0 {
            let tape = Tape::new();
            let ab = tape.bind(self.actor.model.params());
            let cb = tape.bind_frozen(self.critics[0].model.params());
            let loss = deterministic_actor_loss_with(&tape, &self.actor.model, &ab, &self.critics[0].model, &cb, &batch.obs);
            let grads = tape.backward(loss).expect("scalar loss");
            self.actor.step(grads.for_bound(&ab));
            self.actor_updates += 1;
            let tau = self.cfg.tau;
            self.target_actor.params_mut().soft_update_from(self.actor.model.params(), tau);
            for (t, c) in self.target_critics.iter_mut().zip(&self.critics) {
                t.params_mut().soft_update_from(c.model.params(), tau);
            }
        }
    }

    fn ensure_envs(&mut self, n: usize) -> bool {
        if self.pending.len() >= n {
            return false;
        }
        self.pending.resize(n, None);
        true
    }
}

impl Agent for DdpgAgent {
    fn config(&self) -> AgentConfig {
        match &self.td3 {
            Some(t) => AgentConfig::Td3(t.clone()),
            None => AgentConfig::Ddpg(self.cfg.clone()),
        }
    }

    fn env_spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn batch_act_and_train(&mut self, obs: &[Vec<f64>]) -> Vec<Action> {
        if self.ensure_envs(obs.len()) {
            self.explorer = explorer_for(&self.cfg.explorer, obs.len(), self.low.len()).expect("validated explorer");
        }
        let greedy = self.unit_actions(obs);
        greedy
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                assert!(self.pending[i].is_none(), "contract violation: previous action not yet observed");
                let a = if self.steps < self.cfg.random_steps {
                    (0..g.len()).map(|_| self.rng.random_range(-1.0..=1.0)).collect()
                } else {
                    self.explorer.perturb_continuous(i, &g, &mut self.rng)
                };
                let env_a = Action::Continuous(from_unit_action(&a, &self.low, &self.high));
                self.pending[i] = Some((obs[i].clone(), a));
                env_a
            })
            .collect()
    }

    fn batch_observe_and_train(&mut self, next_obs: &[Vec<f64>], rewards: &[f64], terminals: &[bool], resets: &[bool]) {
        check_batch(next_obs.len(), &[rewards.len(), terminals.len(), resets.len()]);
        for i in 0..next_obs.len() {
            let (obs, a) = self.pending[i]
                .take()
                .expect("contract violation: observe called before act");
            let cut = resets[i] && !terminals[i];
            self.replay.append(Transition::new(obs, Action::Continuous(a), rewards[i], next_obs[i].clone(), terminals[i], cut));
            if terminals[i] || resets[i] {
                self.explorer.reset_env(i);
            }
            self.steps += 1;
            if self.replay.len() >= self.cfg.replay_start.max(self.cfg.batch_size) && self.steps % self.cfg.update_interval == 0 {
                self.update();
            }
        }
    }

    fn batch_act(&self, obs: &[Vec<f64>]) -> Vec<Action> {
        self.unit_actions(obs)
            .iter()
            .map(|a| Action::Continuous(from_unit_action(a, &self.low, &self.high)))
            .collect()
    }

    fn has_pending(&self) -> bool {
        self.pending.iter().any(Option::is_some)
    }

    fn outputs(&self, obs: &[f64]) -> AgentOutputs {
        let d = distributions(&self.actor.model, &[obs.to_vec()]).remove(0);
        let a = batch_tensor(&self.unit_actions(&[obs.to_vec()]));
        let v = min_q(&[&self.critics[0].model], &batch_tensor(&[obs]), &a)[0];
        policy_outputs(&d, &self.spec.action_space, Some(v))
    }

    fn saliency_target(&self, obs: &[f64]) -> f64 {
        self.unit_actions(&[obs.to_vec()])[0].iter().sum()
    }

    fn saliency(&self, obs: &[f64]) -> Vec<f64> {
        input_gradient(&self.actor.model, obs, |tape, head| match head {
            HeadVars::Deterministic(a) => tape.sum(a),
            _ => unreachable!("deterministic head"),
        })
        .1
    }

    fn counters(&self) -> (u64, u64) {
        (self.steps, self.updates)
    }

    fn state(&self, include_replay: bool) -> AgentState {
        let mut s = AgentState::default();
        s.counters.insert("steps".into(), self.steps);
        s.counters.insert("updates".into(), self.updates);
        s.counters.insert("actor_updates".into(), self.actor_updates);
        s.networks.push(("actor".into(), self.actor.model.params().clone()));
        s.networks.push(("target_actor".into(), self.target_actor.params().clone()));
        s.optimizers.push(("actor".into(), self.actor.optimizer_state()));
        for (i, (c, t)) in self.critics.iter().zip(&self.target_critics).enumerate() {
            s.networks.push((format!("critic{i}"), c.model.params().clone()));
            s.networks.push((format!("target_critic{i}"), t.params().clone()));
            s.optimizers.push((format!("critic{i}"), c.optimizer_state()));
        }
        if include_replay {
            s.replay = Some(self.replay.to_bytes());
        }
        s
    }

    fn load_state(&mut self, mut state: AgentState) -> Result<(), AgentError> {
        let actor = state.take_network("actor", self.actor.model.params())?;
        let target_actor = state.take_network("target_actor", self.target_actor.params())?;
        let actor_opt = state.take_optimizer("actor", self.actor.model.params())?;
        let mut critics = Vec::new();
        for i in 0..self.critics.len() {
            let like = self.critics[i].model.params();
            critics.push((
                state.take_network(&format!("critic{i}"), like)?,
                state.take_network(&format!("target_critic{i}"), like)?,
                state.take_optimizer(&format!("critic{i}"), like)?,
            ));
        }
        self.steps = state.counter("steps")?;
        self.updates = state.counter("updates")?;
        self.actor_updates = state.counter("actor_updates")?;
        if let Some(bytes) = &state.replay {
            self.replay.restore(bytes)?;
        }
        *self.actor.model.params_mut() = actor;
        *self.target_actor.params_mut() = target_actor;
        self.actor.opt.state = actor_opt;
        for (i, (c, t, o)) in critics.into_iter().enumerate() {
            *self.critics[i].model.params_mut() = c;
            *self.target_critics[i].params_mut() = t;
            self.critics[i].opt.state = o;
        }
        Ok(())
    }
}
