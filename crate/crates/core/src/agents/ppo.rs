use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::common::{batch_tensor, box_bounds, check_batch, var_rows, Net};
use super::pg::{
    distributions, env_action, log_prob_var, mean_entropy_var, policy_head, policy_outputs, policy_saliency,
};
use super::{Agent, AgentConfig, AgentError, AgentOutputs, AgentState};
use crate::autodiff::{AdamConfig, Bound, Var};
use crate::envs::{ActionSpace, EnvSpec};
use crate::models::{Activation, HeadVars, MlpSpec, NoiseMode, OutputHead};
use crate::{Action, Mlp, Tape, Tensor};

/// Generalized advantage estimation over one trajectory.
///
/// `values` holds one more entry than `rewards`: the bootstrap value of the
/// state after the last step. `dones[t]` stops both bootstrapping and the
/// recursion at step `t`. Returns `(advantages, returns)`.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64, dones: &[bool]) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(values.len(), rewards.len() + 1, "contract violation: values need a bootstrap entry");
    assert_eq!(dones.len(), rewards.len(), "contract violation: one done flag per reward");
    gae_segments(rewards, &values[..rewards.len()], &values[1..], dones, dones, gamma, lambda)
}

/// GAE with explicit next-state values. `terminals[t]` zeroes the bootstrap
/// of step `t`; `episode_ends[t]` (terminal or cut) stops the recursion, so
/// a cut episode still bootstraps from `next_values[t]`.
pub fn gae_segments(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    terminals: &[bool],
    episode_ends: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let boot = if terminals[t] { 0.0 } else { gamma * next_values[t] };
        let delta = rewards[t] + boot - values[t];
        let carry = if episode_ends[t] { 0.0 } else { gamma * lambda * next_adv };
        adv[t] = delta + carry;
        next_adv = adv[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// One clipped-surrogate term `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn ppo_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Environment steps (summed over environments) per rollout.
    pub rollout_steps: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub normalize_advantages: bool,
    pub max_grad_norm: Option<f64>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            lr: 3e-4,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            rollout_steps: 2048,
            epochs: 10,
            minibatch_size: 64,
            clip_eps: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.0,
            normalize_advantages: true,
            max_grad_norm: Some(0.5),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// Surrogate of the very first minibatch, before any step this update.
    pub first_surrogate: f64,
}

#[derive(Clone, Debug)]
struct Step {
    obs: Vec<f64>,
    action: Action,
    log_prob: f64,
    reward: f64,
    next_obs: Vec<f64>,
    terminal: bool,
    episode_end: bool,
}

/// Minibatch inputs of the PPO loss.
#[derive(Clone, Debug)]
pub struct PpoBatch {
    pub obs: Tensor,
    pub actions: Vec<Action>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

pub struct PpoLossVars {
    pub total: Var,
    pub surrogate: Var,
    pub value_loss: Var,
    pub entropy: Var,
    pub ratio: Var,
}

/// `-mean(surrogate) + c_v mean((V - R)^2) - c_e entropy` with parameters
/// from the two bounds.
pub fn ppo_loss_with(
    tape: &Tape,
    policy: &Mlp,
    pbound: &Bound,
    value: &Mlp,
    vbound: &Bound,
    batch: &PpoBatch,
    cfg: &PpoConfig,
) -> PpoLossVars {
    let x = tape.constant(batch.obs.clone());
    let head = policy.forward(tape, pbound, x, NoiseMode::Mean);
    let logp = log_prob_var(tape, &head, &batch.actions);
    let old = tape.constant(Tensor::vector(batch.old_log_probs.clone()));
    let ratio = tape.exp(tape.sub(logp, old));
    let adv = tape.constant(Tensor::vector(batch.advantages.clone()));
    let unclipped = tape.mul(ratio, adv);
    let surrogate = if cfg.clip_eps.is_finite() {
        let clipped = tape.mul(tape.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), adv);
        tape.mean(tape.minimum(unclipped, clipped))
    } else {
        tape.mean(unclipped)
    };
    let HeadVars::Raw(v) = value.forward(tape, vbound, x, NoiseMode::Mean) else {
        unreachable!("value head")
    };
    let v = tape.reshape(v, &[batch.returns.len()]);
    let err = tape.sub(v, tape.constant(Tensor::vector(batch.returns.clone())));
    let value_loss = tape.mean(tape.square(err));
    let entropy = mean_entropy_var(tape, &head);
    let mut total = tape.add(tape.neg(surrogate), tape.scale(value_loss, cfg.value_coef));
    if cfg.entropy_coef != 0.0 {
        total = tape.sub(total, tape.scale(entropy, cfg.entropy_coef));
    }
    PpoLossVars {
        total,
        surrogate,
        value_loss,
        entropy,
        ratio,
    }
}

/// Proximal policy optimization with a separate value network.
#[derive(Clone, Debug)]
pub struct PpoAgent {
    cfg: PpoConfig,
    spec: EnvSpec,
    policy: Net,
    value: Net,
    rollouts: Vec<Vec<Step>>,
    pending: Vec<Option<(Vec<f64>, Action, f64)>>,
    rng: ChaCha8Rng,
    steps: u64,
    updates: u64,
    last_stats: PpoStats,
}

impl PpoAgent {
    pub fn new(cfg: PpoConfig, spec: &EnvSpec, seed: u64) -> Result<Self, AgentError> {
        if cfg.rollout_steps == 0 || cfg.epochs == 0 || cfg.minibatch_size == 0 || cfg.minibatch_size > cfg.rollout_steps {
            return Err(AgentError::InvalidConfig(
                "PPO needs positive epochs and 1 <= minibatch_size <= rollout_steps".into(),
            ));
        }
        if !(cfg.clip_eps > 0.0) {
            return Err(AgentError::InvalidConfig("clip_eps must be positive".into()));
        }
        if let ActionSpace::Box { .. } = spec.action_space {
            box_bounds(spec, "ppo")?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adam = AdamConfig {
            lr: cfg.lr,
            eps: 1e-5,
            ..AdamConfig::default()
        };
        let pspec = MlpSpec::new(spec.obs_dim, &cfg.hidden, cfg.activation, policy_head(spec));
        let vspec = MlpSpec::new(spec.obs_dim, &cfg.hidden, cfg.activation, OutputHead::Raw { out: 1 });
        let policy = Net::new(pspec, adam, cfg.max_grad_norm, &mut rng)?;
        let value = Net::new(vspec, adam, cfg.max_grad_norm, &mut rng)?;
        Ok(Self {
            cfg,
            spec: spec.clone(),
            policy,
            value,
            rollouts: Vec::new(),
            pending: Vec::new(),
            rng,
            steps: 0,
            updates: 0,
            last_stats: PpoStats::default(),
        })
    }

    pub fn last_stats(&self) -> PpoStats {
        self.last_stats
    }

    pub fn policy(&self) -> &Mlp {
        &self.policy.model
    }

    fn values(&self, obs: &[Vec<f64>]) -> Vec<f64> {
        let tape = Tape::new();
        let bound = tape.bind_frozen(self.value.model.params());
        let x = tape.constant(batch_tensor(obs));
        let HeadVars::Raw(v) = self.value.model.forward(&tape, &bound, x, NoiseMode::Mean) else {
            unreachable!("value head")
        };
        var_rows(&tape, v).into_iter().map(|r| r[0]).collect()
    }

    fn collected(&self) -> usize {
        self.rollouts.iter().map(Vec::len).sum()
    }

    /// Advantages and returns for the stored rollouts, environment by environment.
    fn prepare(&self) -> PpoBatch {
        let mut obs = Vec::new();
        let mut actions = Vec::new();
        let mut old = Vec::new();
        let mut advantages = Vec::new();
        let mut returns = Vec::new();
        for r in self.rollouts.iter().filter(|r| !r.is_empty()) {
            let o: Vec<Vec<f64>> = r.iter().map(|s| s.obs.clone()).collect();
            let no: Vec<Vec<f64>> = r.iter().map(|s| s.next_obs.clone()).collect();
            let v = self.values(&o);
            let nv = self.values(&no);
            let rewards: Vec<f64> = r.iter().map(|s| s.reward).collect();
            let terminals: Vec<bool> = r.iter().map(|s| s.terminal).collect();
            let ends: Vec<bool> = r.iter().map(|s| s.episode_end).collect();
            let (a, ret) = gae_segments(&rewards, &v, &nv, &terminals, &ends, self.cfg.gamma, self.cfg.lambda);
            advantages.extend(a);
            returns.extend(ret);
            obs.extend(o);
            actions.extend(r.iter().map(|s| s.action.clone()));
            old.extend(r.iter().map(|s| s.log_prob));
        }
        if self.cfg.normalize_advantages && advantages.len() > 1 {
            let n = advantages.len() as f64;
            let mean = advantages.iter().sum::<f64>() / n;
            let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt() + 1e-8;
            advantages.iter_mut().for_each(|a| *a = (*a - mean) / std);
        }
        PpoBatch {
            obs: batch_tensor(&obs),
            actions,
            old_log_probs: old,
            advantages,
            returns,
        }
    }

    /// Several epochs of shuffled minibatch steps on the stored rollouts.
    pub fn ppo_update(&mut self) -> PpoStats {
        let full = self.prepare();
        let n = full.returns.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut stats = PpoStats::default();
        let mut count = 0.0;
        let mut first = None;
        for _ in 0..self.cfg.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.cfg.minibatch_size) {
                let rows: Vec<&[f64]> = chunk.iter().map(|&i| full.obs.row(i)).collect();
                let mb = PpoBatch {
                    obs: batch_tensor(&rows),
                    actions: chunk.iter().map(|&i| full.actions[i].clone()).collect(),
                    old_log_probs: chunk.iter().map(|&i| full.old_log_probs[i]).collect(),
                    advantages: chunk.iter().map(|&i| full.advantages[i]).collect(),
                    returns: chunk.iter().map(|&i| full.returns[i]).collect(),
                };
                let tape = Tape::new();
                let pb = tape.bind(self.policy.model.params());
                let vb = tape.bind(self.value.model.params());
                let l = ppo_loss_with(&tape, &self.policy.model, &pb, &self.value.model, &vb, &mb, &self.cfg);
                let grads = tape.backward(l.total).expect("scalar loss");
                self.policy.step(grads.for_bound(&pb));
                self.value.step(grads.for_bound(&vb));
                let ratios = tape.value(l.ratio).data().to_vec();
                let clipped = ratios.iter().filter(|r| (*r - 1.0).abs() > self.cfg.clip_eps).count();
                first.get_or_insert(tape.item(l.surrogate));
                stats.policy_loss -= tape.item(l.surrogate);
                stats.value_loss += tape.item(l.value_loss);
                stats.entropy += tape.item(l.entropy);
                stats.clip_fraction += clipped as f64 / ratios.len() as f64;
                count += 1.0;
            }
        }
        stats.policy_loss /= count;
        stats.value_loss /= count;
        stats.entropy /= count;
        stats.clip_fraction /= count;
        stats.first_surrogate = first.unwrap_or(0.0);
        self.updates += 1;
        self.rollouts.iter_mut().for_each(Vec::clear);
        self.last_stats = stats;
        stats
    }
}

impl Agent for PpoAgent {
    fn config(&self) -> AgentConfig {
        AgentConfig::Ppo(self.cfg.clone())
    }

    fn env_spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn batch_act_and_train(&mut self, obs: &[Vec<f64>]) -> Vec<Action> {
        while self.pending.len() < obs.len() {
            self.pending.push(None);
            self.rollouts.push(Vec::new());
        }
        distributions(&self.policy.model, obs)
            .iter()
            .enumerate()
            .map(|(i, d)| {
                assert!(self.pending[i].is_none(), "contract violation: previous action not yet observed");
                let a = d.sample(&mut self.rng);
                let lp = d.log_prob(&a).expect("stochastic policy");
                self.pending[i] = Some((obs[i].clone(), a.clone(), lp));
                env_action(&a, &self.spec.action_space)
            })
            .collect()
    }

    fn batch_observe_and_train(&mut self, next_obs: &[Vec<f64>], rewards: &[f64], terminals: &[bool], resets: &[bool]) {
        check_batch(next_obs.len(), &[rewards.len(), terminals.len(), resets.len()]);
        for i in 0..next_obs.len() {
            let (obs, action, log_prob) = self.pending[i]
                .take()
                .expect("contract violation: observe called before act");
            self.rollouts[i].push(Step {
                obs,
                action,
                log_prob,
                reward: rewards[i],
                next_obs: next_obs[i].clone(),
                terminal: terminals[i],
                episode_end: terminals[i] || resets[i],
            });
            self.steps += 1;
        }
        if self.collected() >= self.cfg.rollout_steps {
            self.ppo_update();
        }
    }

    fn batch_act(&self, obs: &[Vec<f64>]) -> Vec<Action> {
        distributions(&self.policy.model, obs)
            .iter()
            .map(|d| env_action(&d.mode(), &self.spec.action_space))
            .collect()
    }

    fn has_pending(&self) -> bool {
        self.pending.iter().any(Option::is_some)
    }

    fn outputs(&self, obs: &[f64]) -> AgentOutputs {
        let d = distributions(&self.policy.model, &[obs.to_vec()]).remove(0);
        let v = self.values(&[obs.to_vec()])[0];
        policy_outputs(&d, &self.spec.action_space, Some(v))
    }

    fn saliency_target(&self, obs: &[f64]) -> f64 {
        policy_saliency(&self.policy.model, obs).0
    }

    fn saliency(&self, obs: &[f64]) -> Vec<f64> {
        policy_saliency(&self.policy.model, obs).1
    }

    fn counters(&self) -> (u64, u64) {
        (self.steps, self.updates)
    }

    fn state(&self, _include_replay: bool) -> AgentState {
        let mut s = AgentState::default();
        s.counters.insert("steps".into(), self.steps);
        s.counters.insert("updates".into(), self.updates);
        s.networks.push(("policy".into(), self.policy.model.params().clone()));
        s.networks.push(("value".into(), self.value.model.params().clone()));
        s.optimizers.push(("policy".into(), self.policy.optimizer_state()));
        s.optimizers.push(("value".into(), self.value.optimizer_state()));
        s
    }

    fn load_state(&mut self, mut state: AgentState) -> Result<(), AgentError> {
        let p = state.take_network("policy", self.policy.model.params())?;
        let v = state.take_network("value", self.value.model.params())?;
        let po = state.take_optimizer("policy", self.policy.model.params())?;
        let vo = state.take_optimizer("value", self.value.model.params())?;
        self.steps = state.counter("steps")?;
        self.updates = state.counter("updates")?;
        *self.policy.model.params_mut() = p;
        *self.value.model.params_mut() = v;
        self.policy.opt.state = po;
        self.value.opt.state = vo;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn gae_examples() {
        let (a, r) = gae(&[1.0, 1.0], &[0.5, 0.5, 0.0], 0.9, 0.8, &[false, true]);
        assert!((a[0] - 1.31).abs() < 1e-12 && (a[1] - 0.5).abs() < 1e-12);
        assert!((r[0] - 1.81).abs() < 1e-12 && (r[1] - 1.0).abs() < 1e-12);

        let rewards = [0.3, -1.0, 2.0];
        let values = [0.1, 0.4, -0.2, 0.7];
        let (a, _) = gae(&rewards, &values, 0.95, 0.0, &[false; 3]);
        for t in 0..3 {
            let delta = rewards[t] + 0.95 * values[t + 1] - values[t];
            assert_eq!(a[t], delta);
        }
    }

    /// `A_t = sum_k (gamma lambda)^k delta_{t+k}` up to the first done.
    fn brute_force(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64, dones: &[bool]) -> Vec<f64> {
        let n = rewards.len();
        let delta: Vec<f64> = (0..n)
            .map(|t| rewards[t] + if dones[t] { 0.0 } else { gamma * values[t + 1] } - values[t])
            .collect();
        (0..n)
            .map(|t| {
                let mut sum = 0.0;
                let mut w = 1.0;
                for k in t..n {
                    sum += w * delta[k];
                    if dones[k] {
                        break;
                    }
                    w *= gamma * lambda;
                }
                sum
            })
            .collect()
    }

    #[test]
    fn gae_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let n = rng.random_range(1..40);
            let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let values: Vec<f64> = (0..=n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let dones: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
            let (g, l) = (rng.random_range(0.5..1.0), rng.random_range(0.0..1.0));
            let (a, _) = gae(&rewards, &values, g, l, &dones);
            for (x, y) in a.iter().zip(brute_force(&rewards, &values, g, l, &dones)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cut_episodes_still_bootstrap() {
        let (a, _) = gae_segments(&[1.0], &[0.0], &[10.0], &[false], &[true], 0.5, 0.9);
        assert_eq!(a, vec![6.0]);
        let (a, _) = gae_segments(&[1.0], &[0.0], &[10.0], &[true], &[true], 0.5, 0.9);
        assert_eq!(a, vec![1.0]);
    }

    #[test]
    fn surrogate_examples() {
        assert!((ppo_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert!((ppo_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-12);
        assert_eq!(ppo_surrogate(1.0, 0.7, 0.2), 0.7);
    }

    fn fixture_spec() -> EnvSpec {
        EnvSpec {
            id: "fixture".into(),
            obs_dim: 2,
            action_space: ActionSpace::Discrete { n: 3 },
            max_episode_steps: 10,
            reward_range: (0.0, 1.0),
        }
    }

    fn fill(agent: &mut PpoAgent, steps: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for t in 0..steps {
            let o = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            agent.act_and_train(&o, rng.random_range(0.0..1.0));
            if t % 7 == 6 {
                agent.stop_episode_and_train(&o, 1.0, t % 14 == 6);
            }
        }
    }

    #[test]
    fn first_pass_surrogate_is_zero_mean_advantage() {
        let cfg = PpoConfig {
            rollout_steps: 32,
            minibatch_size: 32,
            epochs: 3,
            hidden: vec![8],
            ..PpoConfig::default()
        };
        let mut agent = PpoAgent::new(cfg, &fixture_spec(), 1).unwrap();
        fill(&mut agent, 40);
        assert_eq!(agent.counters().1, 1);
        assert!(agent.last_stats().first_surrogate.abs() < 1e-9);
    }

    #[test]
    fn unclipped_single_epoch_is_plain_surrogate() {
        let cfg = PpoConfig {
            rollout_steps: 16,
            minibatch_size: 16,
            hidden: vec![8],
            ..PpoConfig::default()
        };
        let agent = PpoAgent::new(cfg.clone(), &fixture_spec(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs: Vec<Vec<f64>> = (0..16).map(|_| vec![rng.random_range(-1.0..1.0), 0.5]).collect();
        let batch = PpoBatch {
            obs: batch_tensor(&obs),
            actions: (0..16).map(|i| Action::Discrete(i % 3)).collect(),
            old_log_probs: (0..16).map(|_| rng.random_range(-2.0..-0.5)).collect(),
            advantages: (0..16).map(|_| rng.random_range(-1.0..1.0)).collect(),
            returns: vec![0.0; 16],
        };
        let unclipped = PpoConfig {
            clip_eps: f64::INFINITY,
            ..cfg
        };
        let tape = Tape::new();
        let pb = tape.bind(agent.policy.model.params());
        let vb = tape.bind(agent.value.model.params());
        let l = ppo_loss_with(&tape, &agent.policy.model, &pb, &agent.value.model, &vb, &batch, &unclipped);
        let ratios = tape.value(l.ratio).data().to_vec();
        let plain: f64 = ratios.iter().zip(&batch.advantages).map(|(r, a)| r * a).sum::<f64>() / 16.0;
        assert!((tape.item(l.surrogate) - plain).abs() < 1e-9);
        let clipped_mean: f64 = ratios
            .iter()
            .zip(&batch.advantages)
            .map(|(r, a)| ppo_surrogate(*r, *a, 1e9))
            .sum::<f64>()
            / 16.0;
        assert!((plain - clipped_mean).abs() < 1e-9);
    }

    #[test]
    fn gaussian_policy_runs() {
        let spec = EnvSpec {
            action_space: ActionSpace::Box {
                low: vec![-2.0],
                high: vec![2.0],
            },
            ..fixture_spec()
        };
        let cfg = PpoConfig {
            rollout_steps: 16,
            minibatch_size: 8,
            epochs: 2,
            hidden: vec![8],
            ..PpoConfig::default()
        };
        let mut agent = PpoAgent::new(cfg, &spec, 4).unwrap();
        let before = agent.param_fingerprint();
        let a = agent.act(&[0.1, 0.2]);
        assert_eq!(before, agent.param_fingerprint());
        assert!(a.as_continuous().unwrap()[0].abs() <= 2.0);
        fill(&mut agent, 20);
        assert_eq!(agent.counters().1, 1);
        assert!(agent.last_stats().value_loss.is_finite());
    }
}
