use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::common::{batch_tensor, box_bounds, check_batch, from_unit_action, input_gradient, Net, Replay};
use super::ddpg::{critic_q, critic_spec, critic_step, min_q, OffPolicyBatch};
use super::pg::{distributions, policy_outputs};
use super::{Agent, AgentConfig, AgentError, AgentOutputs, AgentState};
use crate::autodiff::{Adam, AdamConfig, Bound, Var};
use crate::envs::EnvSpec;
use crate::models::{squashed_rsample, Activation, HeadVars, MlpSpec, NoiseMode, OutputHead};
use crate::replay::Transition;
use crate::{Action, Mlp, ParamStore, Tape, Tensor};

/// Entropy temperature `alpha`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Temperature {
    Fixed { alpha: f64 },
    /// Learned `log alpha`; the target entropy defaults to `-action_dim`.
    Auto {
        initial: f64,
        #[serde(default)]
        target_entropy: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temperature_lr: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub replay_start: usize,
    pub random_steps: u64,
    pub update_interval: u64,
    pub tau: f64,
    pub temperature: Temperature,
    pub max_grad_norm: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            temperature_lr: 1e-3,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            batch_size: 128,
            replay_capacity: 100_000,
            replay_start: 1000,
            random_steps: 1000,
            update_interval: 1,
            tau: 0.005,
            temperature: Temperature::Auto {
                initial: 1.0,
                target_entropy: None,
            },
            max_grad_norm: None,
        }
    }
}

/// Actor objective `mean(alpha log pi(a|s) - min_i Q_i(s, a))` with a
/// reparameterized `a`; returns the loss and `log pi` `[B]`.
pub fn sac_actor_loss_with(
    tape: &Tape,
    actor: &Mlp,
    abound: &Bound,
    critics: &[(&Mlp, &Bound)],
    obs: &Tensor,
    noise: &Tensor,
    alpha: f64,
) -> (Var, Var) {
    let o = tape.constant(obs.clone());
    let HeadVars::SquashedGaussian { mean, log_std } = actor.forward(tape, abound, o, NoiseMode::Mean) else {
        unreachable!("squashed gaussian head")
    };
    let (a, logp) = squashed_rsample(tape, mean, log_std, noise);
    let mut q: Option<Var> = None;
    for (c, b) in critics {
        let qi = critic_q(tape, c, b, o, a);
        q = Some(match q {
            None => qi,
            Some(m) => tape.minimum(m, qi),
        });
    }
    let loss = tape.mean(tape.sub(tape.scale(logp, alpha), q.expect("a critic")));
    (loss, logp)
}

/// `-alpha * mean(log pi + target_entropy)` as a function of `log alpha`.
pub fn temperature_loss(tape: &Tape, log_alpha: Var, log_probs: &[f64], target_entropy: f64) -> Var {
    let gap = log_probs.iter().map(|l| l + target_entropy).sum::<f64>() / log_probs.len() as f64;
    tape.scale(tape.exp(log_alpha), -gap)
}

/// Soft actor-critic with twin critics and a squashed Gaussian actor.
#[derive(Clone, Debug)]
pub struct SacAgent {
    cfg: SacConfig,
    spec: EnvSpec,
    low: Vec<f64>,
    high: Vec<f64>,
    actor: Net,
    critics: Vec<Net>,
    target_critics: Vec<Mlp>,
    log_alpha: ParamStore,
    alpha_opt: Option<Adam<f64>>,
    target_entropy: f64,
    replay: Replay,
    pending: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    rng: ChaCha8Rng,
    steps: u64,
    updates: u64,
    last_critic_loss: f64,
}

impl SacAgent {
    pub fn new(cfg: SacConfig, spec: &EnvSpec, seed: u64) -> Result<Self, AgentError> {
        let (low, high) = box_bounds(spec, "sac")?;
        if cfg.batch_size == 0 || cfg.update_interval == 0 || !(0.0..=1.0).contains(&cfg.tau) {
            return Err(AgentError::InvalidConfig(
                "batch_size and update_interval must be positive and tau in [0, 1]".into(),
            ));
        }
        let dim = low.len();
        let (alpha0, target_entropy, learn) = match cfg.temperature {
            Temperature::Fixed { alpha } => (alpha, -(dim as f64), false),
            Temperature::Auto { initial, target_entropy } => (initial, target_entropy.unwrap_or(-(dim as f64)), true),
        };
        if !(alpha0 > 0.0 || (!learn && alpha0 == 0.0)) {
            return Err(AgentError::InvalidConfig("temperature must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let aspec = MlpSpec::new(
            spec.obs_dim,
            &cfg.hidden,
            cfg.activation,
            OutputHead::SquashedGaussianPolicy { action_dim: dim },
        );
        let actor = Net::new(aspec, AdamConfig::with_lr(cfg.actor_lr), cfg.max_grad_norm, &mut rng)?;
        let critics = (0..2)
            .map(|_| {
                let cspec = critic_spec(spec, &cfg.hidden, cfg.activation, dim);
                Net::new(cspec, AdamConfig::with_lr(cfg.critic_lr), cfg.max_grad_norm, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut log_alpha = ParamStore::new();
        log_alpha.add("log_alpha", Tensor::scalar(alpha0.ln()));
        let alpha_opt = learn.then(|| Adam::new(AdamConfig::with_lr(cfg.temperature_lr), &log_alpha));
        Ok(Self {
            target_critics: critics.iter().map(|c| c.model.clone()).collect(),
            replay: Replay::new(cfg.replay_capacity, None),
            cfg,
            spec: spec.clone(),
            low,
            high,
            actor,
            critics,
            log_alpha,
            alpha_opt,
            target_entropy,
            pending: Vec::new(),
            rng,
            steps: 0,
            updates: 0,
            last_critic_loss: f64::NAN,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.tensors()[0].item().exp()
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor.model
    }

    pub fn last_critic_loss(&self) -> f64 {
        self.last_critic_loss
    }

    fn noise(&mut self, rows: usize) -> Tensor {
        let dim = self.low.len();
        let data = (0..rows * dim).map(|_| self.rng.sample(StandardNormal)).collect();
        Tensor::from_vec(&[rows, dim], data)
    }

    /// Squashed samples and their log-densities from the current actor.
    fn sample_actions(&mut self, obs: &Tensor) -> (Tensor, Vec<f64>) {
        let noise = self.noise(obs.shape()[0]);
        let tape = Tape::new();
        let bound = tape.bind_frozen(self.actor.model.params());
        let HeadVars::SquashedGaussian { mean, log_std } =
            self.actor.model.forward(&tape, &bound, tape.constant(obs.clone()), NoiseMode::Mean)
        else {
            unreachable!("squashed gaussian head")
        };
        let (a, logp) = squashed_rsample(&tape, mean, log_std, &noise);
        let a = tape.value(a).clone();
        let logp = tape.value(logp).data().to_vec();
        (a, logp)
    }

    fn mode_actions(&self, obs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        distributions(&self.actor.model, obs)
            .iter()
            .map(|d| d.mode().as_continuous().expect("continuous action").to_vec())
            .collect()
    }

    pub fn update(&mut self) {
        let sample = self.replay.sample(self.cfg.batch_size, self.steps, &mut self.rng);
        let batch = OffPolicyBatch::from_sample(&sample, self.cfg.gamma);
        let alpha = self.alpha();

        let (next_a, next_logp) = self.sample_actions(&batch.next_obs);
        let targets: Vec<&Mlp> = self.target_critics.iter().collect();
        let next_q = min_q(&targets, &batch.next_obs, &next_a);
        let y: Vec<f64> = (0..next_q.len())
            .map(|i| batch.rewards[i] + batch.discounts[i] * (next_q[i] - alpha * next_logp[i]))
            .collect();
        self.last_critic_loss = critic_step(&mut self.critics, &batch, &y);

        let noise = self.noise(batch.rewards.len());
        let tape = Tape::new();
        let ab = tape.bind(self.actor.model.params());
        let cb: Vec<Bound> = self.critics.iter().map(|c| tape.bind_frozen(c.model.params())).collect();
        let pairs: Vec<(&Mlp, &Bound)> = self.critics.iter().map(|c| &c.model).zip(&cb).collect();
        let (loss, logp) = sac_actor_loss_with(&tape, &self.actor.model, &ab, &pairs, &batch.obs, &noise, alpha);
        let logp = tape.value(logp).data().to_vec();
        let grads = tape.backward(loss).expect("scalar loss");
        self.actor.step(grads.for_bound(&ab));

        if let Some(opt) = &mut self.alpha_opt {
            let tape = Tape::new();
            let b = tape.bind(&self.log_alpha);
            let l = temperature_loss(&tape, b.vars()[0], &logp, self.target_entropy);
            let grads = tape.backward(l).expect("scalar loss");
            opt.step(&mut self.log_alpha, grads.for_bound(&b)).expect("matching gradients");
        }

        for (t, c) in self.target_critics.iter_mut().zip(&self.critics) {
            t.params_mut().soft_update_from(c.model.params(), self.cfg.tau);
        }
        self.updates += 1;
    }
}

impl Agent for SacAgent {
    fn config(&self) -> AgentConfig {
        AgentConfig::Sac(self.cfg.clone())
    }

    fn env_spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn batch_act_and_train(&mut self, obs: &[Vec<f64>]) -> Vec<Action> {
        if self.pending.len() < obs.len() {
            self.pending.resize(obs.len(), None);
        }
        let sampled = if self.steps < self.cfg.random_steps {
            let dim = self.low.len();
            (0..obs.len())
                .map(|_| (0..dim).map(|_| self.rng.random_range(-1.0..=1.0)).collect())
                .collect()
        } else {
            let (a, _) = self.sample_actions(&batch_tensor(obs));
            (0..obs.len()).map(|i| a.row(i).to_vec()).collect::<Vec<Vec<f64>>>()
        };
        sampled
            .into_iter()
            .enumerate()
            .map(|(i, a)| {
                assert!(self.pending[i].is_none(), "contract violation: previous action not yet observed");
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
            self.steps += 1;
            if self.replay.len() >= self.cfg.replay_start.max(self.cfg.batch_size) && self.steps % self.cfg.update_interval == 0 {
                self.update();
            }
        }
    }

    fn batch_act(&self, obs: &[Vec<f64>]) -> Vec<Action> {
        self.mode_actions(obs)
            .iter()
            .map(|a| Action::Continuous(from_unit_action(a, &self.low, &self.high)))
            .collect()
    }

    fn has_pending(&self) -> bool {
        self.pending.iter().any(Option::is_some)
    }

    fn outputs(&self, obs: &[f64]) -> AgentOutputs {
        let d = distributions(&self.actor.model, &[obs.to_vec()]).remove(0);
        let a = batch_tensor(&self.mode_actions(&[obs.to_vec()]));
        let critics: Vec<&Mlp> = self.critics.iter().map(|c| &c.model).collect();
        let v = min_q(&critics, &batch_tensor(&[obs]), &a)[0];
        policy_outputs(&d, &self.spec.action_space, Some(v))
    }

    fn saliency_target(&self, obs: &[f64]) -> f64 {
        self.mode_actions(&[obs.to_vec()])[0].iter().sum()
    }

    fn saliency(&self, obs: &[f64]) -> Vec<f64> {
        input_gradient(&self.actor.model, obs, |tape, head| match head {
            HeadVars::SquashedGaussian { mean, .. } => tape.sum(tape.tanh(mean)),
            _ => unreachable!("squashed gaussian head"),
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
        s.networks.push(("actor".into(), self.actor.model.params().clone()));
        s.optimizers.push(("actor".into(), self.actor.optimizer_state()));
        for (i, (c, t)) in self.critics.iter().zip(&self.target_critics).enumerate() {
            s.networks.push((format!("critic{i}"), c.model.params().clone()));
            s.networks.push((format!("target_critic{i}"), t.params().clone()));
            s.optimizers.push((format!("critic{i}"), c.optimizer_state()));
        }
        s.networks.push(("temperature".into(), self.log_alpha.clone()));
        if let Some(opt) = &self.alpha_opt {
            s.optimizers.push(("temperature".into(), opt.state.clone()));
        }
        if include_replay {
            s.replay = Some(self.replay.to_bytes());
        }
        s
    }

    fn load_state(&mut self, mut state: AgentState) -> Result<(), AgentError> {
        let actor = state.take_network("actor", self.actor.model.params())?;
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
        let log_alpha = state.take_network("temperature", &self.log_alpha)?;
        let alpha_opt = match &self.alpha_opt {
            Some(_) => Some(state.take_optimizer("temperature", &self.log_alpha)?),
            None => None,
        };
        self.steps = state.counter("steps")?;
        self.updates = state.counter("updates")?;
        if let Some(bytes) = &state.replay {
            self.replay.restore(bytes)?;
        }
        *self.actor.model.params_mut() = actor;
        self.actor.opt.state = actor_opt;
        for (i, (c, t, o)) in critics.into_iter().enumerate() {
            *self.critics[i].model.params_mut() = c;
            *self.target_critics[i].params_mut() = t;
            self.critics[i].opt.state = o;
        }
        self.log_alpha = log_alpha;
        if let (Some(opt), Some(s)) = (&mut self.alpha_opt, alpha_opt) {
            opt.state = s;
        }
        Ok(())
    }
}
