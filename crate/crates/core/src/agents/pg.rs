use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::common::{batch_tensor, box_bounds, check_batch, from_unit_action, input_gradient, Net};
use super::{Agent, AgentConfig, AgentError, AgentOutputs, AgentState};
use crate::autodiff::{AdamConfig, Bound, Var};
use crate::envs::{ActionSpace, EnvSpec};
use crate::models::{
    gaussian_entropy, gaussian_log_prob, softmax_entropy, softmax_log_prob, Activation, HeadVars, MlpSpec,
    ModelOutput, NoiseMode, OutputHead,
};
use crate::{Action, Mlp, PolicyDistribution, Tape, Tensor};

/// Discounted return-to-go `G_t = sum_k gamma^k r_{t+k}`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Per-step storage of one on-policy episode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeBuffer {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl EpisodeBuffer {
    pub fn push(&mut self, obs: Vec<f64>, action: Action, log_prob: f64, value: f64, reward: f64, done: bool) {
        self.obs.push(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.values.push(value);
        self.rewards.push(reward);
        self.dones.push(done);
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn is_aligned(&self) -> bool {
        let n = self.obs.len();
        [self.actions.len(), self.log_probs.len(), self.values.len(), self.rewards.len(), self.dones.len()]
            .iter()
            .all(|&l| l == n)
    }

    /// Ends with a done step.
    pub fn is_complete(&self) -> bool {
        self.dones.last() == Some(&true)
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }
}

pub(crate) fn policy_head(spec: &EnvSpec) -> OutputHead {
    match &spec.action_space {
        ActionSpace::Discrete { n } => OutputHead::SoftmaxPolicy { n_actions: *n },
        ActionSpace::Box { low, .. } => OutputHead::GaussianPolicy { action_dim: low.len() },
    }
}

pub(crate) fn distributions(model: &Mlp, obs: &[Vec<f64>]) -> Vec<PolicyDistribution> {
    model
        .evaluate(&batch_tensor(obs), NoiseMode::Mean)
        .into_iter()
        .map(|o| match o {
            ModelOutput::Policy(d) => d,
            _ => unreachable!("policy head"),
        })
        .collect()
}

/// `log pi(a|s)` `[B]` of recorded actions under a policy head.
pub(crate) fn log_prob_var(tape: &Tape, head: &HeadVars, actions: &[Action]) -> Var {
    match *head {
        HeadVars::Softmax(logits) => {
            let idx: Vec<usize> = actions.iter().map(|a| a.as_discrete().expect("discrete action")).collect();
            softmax_log_prob(tape, logits, &idx)
        }
        HeadVars::Gaussian { mean, log_std } => {
            let rows: Vec<&[f64]> = actions.iter().map(|a| a.as_continuous().expect("continuous action")).collect();
            gaussian_log_prob(tape, mean, log_std, &batch_tensor(&rows))
        }
        _ => unreachable!("stochastic policy heads only"),
    }
}

/// Mean policy entropy (a scalar).
pub(crate) fn mean_entropy_var(tape: &Tape, head: &HeadVars) -> Var {
    match *head {
        HeadVars::Softmax(logits) => tape.mean(softmax_entropy(tape, logits)),
        HeadVars::Gaussian { log_std, .. } => tape.mean(gaussian_entropy(tape, log_std)),
        _ => unreachable!("stochastic policy heads only"),
    }
}

/// Maps a policy action to the environment's units.
pub(crate) fn env_action(a: &Action, space: &ActionSpace) -> Action {
    match (a, space) {
        (Action::Continuous(v), ActionSpace::Box { low, high }) => Action::Continuous(from_unit_action(v, low, high)),
        _ => a.clone(),
    }
}

/// Outputs, saliency scalar and gradient for a stochastic or deterministic policy.
pub(crate) fn policy_outputs(dist: &PolicyDistribution, space: &ActionSpace, value: Option<f64>) -> AgentOutputs {
    let action = env_action(&dist.mode(), space);
    match dist {
        PolicyDistribution::Softmax { .. } => AgentOutputs::Policy {
            probs: dist.probs(),
            mean: None,
            std: None,
            action,
            value,
        },
        PolicyDistribution::DiagGaussian { mean, log_std } | PolicyDistribution::SquashedGaussian { mean, log_std } => {
            AgentOutputs::Policy {
                probs: None,
                mean: Some(mean.clone()),
                std: Some(log_std.iter().map(|s| s.exp()).collect()),
                action,
                value,
            }
        }
        PolicyDistribution::Deterministic { action: a } => AgentOutputs::Policy {
            probs: None,
            mean: Some(a.clone()),
            std: None,
            action,
            value,
        },
    }
}

pub(crate) fn policy_saliency(model: &Mlp, obs: &[f64]) -> (f64, Vec<f64>) {
    input_gradient(model, obs, |tape, head| match head {
        HeadVars::Softmax(logits) => {
            let logits_now = tape.value(logits).data().to_vec();
            let mode = crate::models::argmax(&logits_now);
            tape.sum(softmax_log_prob(tape, logits, &[mode]))
        }
        HeadVars::Gaussian { mean, .. } | HeadVars::Deterministic(mean) => tape.sum(mean),
        HeadVars::SquashedGaussian { mean, .. } => tape.sum(tape.tanh(mean)),
        _ => unreachable!("policy heads only"),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReinforceConfig {
    pub gamma: f64,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Completed episodes per update.
    pub batch_episodes: usize,
    /// Subtract the batch mean return.
    pub baseline: bool,
    pub entropy_coef: f64,
    pub max_grad_norm: Option<f64>,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 1e-3,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            batch_episodes: 4,
            baseline: true,
            entropy_coef: 0.0,
            max_grad_norm: None,
        }
    }
}

/// `-sum_t log pi(a_t|s_t) * adv_t / n_episodes`, parameters from `bound`.
pub fn reinforce_loss_with(
    tape: &Tape,
    model: &Mlp,
    bound: &Bound,
    obs: &Tensor,
    actions: &[Action],
    advantages: &[f64],
    n_episodes: usize,
    entropy_coef: f64,
) -> Var {
    let x = tape.constant(obs.clone());
    let head = model.forward(tape, bound, x, NoiseMode::Mean);
    let logp = log_prob_var(tape, &head, actions);
    let weighted = tape.mul(logp, tape.constant(Tensor::vector(advantages.to_vec())));
    let mut loss = tape.scale(tape.sum(weighted), -1.0 / n_episodes as f64);
    if entropy_coef != 0.0 {
        loss = tape.sub(loss, tape.scale(mean_entropy_var(tape, &head), entropy_coef));
    }
    loss
}

/// Monte Carlo policy gradient, updated after every `batch_episodes` episodes.
#[derive(Clone, Debug)]
pub struct ReinforceAgent {
    cfg: ReinforceConfig,
    spec: EnvSpec,
    policy: Net,
    running: Vec<EpisodeBuffer>,
    finished: Vec<EpisodeBuffer>,
    pending: Vec<Option<(Vec<f64>, Action)>>,
    rng: ChaCha8Rng,
    steps: u64,
    updates: u64,
    last_loss: f64,
}

impl ReinforceAgent {
    pub fn new(cfg: ReinforceConfig, spec: &EnvSpec, seed: u64) -> Result<Self, AgentError> {
        if cfg.batch_episodes == 0 || !(0.0..=1.0).contains(&cfg.gamma) {
            return Err(AgentError::InvalidConfig("batch_episodes >= 1 and gamma in [0, 1] required".into()));
        }
        if let ActionSpace::Box { .. } = spec.action_space {
            box_bounds(spec, "reinforce")?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = MlpSpec::new(spec.obs_dim, &cfg.hidden, cfg.activation, policy_head(spec));
        let policy = Net::new(mlp, AdamConfig::with_lr(cfg.lr), cfg.max_grad_norm, &mut rng)?;
        Ok(Self {
            cfg,
            spec: spec.clone(),
            policy,
            running: Vec::new(),
            finished: Vec::new(),
            pending: Vec::new(),
            rng,
            steps: 0,
            updates: 0,
            last_loss: 0.0,
        })
    }

    pub fn policy(&self) -> &Mlp {
        &self.policy.model
    }

    pub fn last_loss(&self) -> f64 {
        self.last_loss
    }

    /// One gradient step on complete episodes.
    pub fn reinforce_update(&mut self, episodes: &[EpisodeBuffer]) -> f64 {
        assert!(
            !episodes.is_empty() && episodes.iter().all(|e| e.is_complete() && e.is_aligned()),
            "contract violation: REINFORCE updates need complete episodes"
        );
        let mut obs = Vec::new();
        let mut actions = Vec::new();
        let mut adv = Vec::new();
        for e in episodes {
            obs.extend(e.obs.iter().cloned());
            actions.extend(e.actions.iter().cloned());
            adv.extend(discounted_returns(&e.rewards, self.cfg.gamma));
        }
        if self.cfg.baseline {
            let b = adv.iter().sum::<f64>() / adv.len() as f64;
            adv.iter_mut().for_each(|g| *g -= b);
        }
        let tape = Tape::new();
        let bound = tape.bind(self.policy.model.params());
        let loss = reinforce_loss_with(
            &tape,
            &self.policy.model,
            &bound,
            &batch_tensor(&obs),
            &actions,
            &adv,
            episodes.len(),
            self.cfg.entropy_coef,
        );
        let grads = tape.backward(loss).expect("scalar loss").for_bound(&bound);
        self.policy.step(grads);
        self.updates += 1;
        self.last_loss = tape.item(loss);
        self.last_loss
    }
}

impl Agent for ReinforceAgent {
    fn config(&self) -> AgentConfig {
        AgentConfig::Reinforce(self.cfg.clone())
    }

    fn env_spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn batch_act_and_train(&mut self, obs: &[Vec<f64>]) -> Vec<Action> {
        while self.pending.len() < obs.len() {
            self.pending.push(None);
            self.running.push(EpisodeBuffer::default());
        }
        let dists = distributions(&self.policy.model, obs);
        dists
            .iter()
            .enumerate()
            .map(|(i, d)| {
                assert!(self.pending[i].is_none(), "contract violation: previous action not yet observed");
                let a = d.sample(&mut self.rng);
                self.pending[i] = Some((obs[i].clone(), a.clone()));
                env_action(&a, &self.spec.action_space)
            })
            .collect()
    }

    fn batch_observe_and_train(&mut self, next_obs: &[Vec<f64>], rewards: &[f64], terminals: &[bool], resets: &[bool]) {
        check_batch(next_obs.len(), &[rewards.len(), terminals.len(), resets.len()]);
        for i in 0..next_obs.len() {
            let (obs, action) = self.pending[i]
                .take()
                .expect("contract violation: observe called before act");
            let done = terminals[i] || resets[i];
            self.running[i].push(obs, action, 0.0, 0.0, rewards[i], done);
            self.steps += 1;
            if done {
                self.finished.push(std::mem::take(&mut self.running[i]));
                if self.finished.len() >= self.cfg.batch_episodes {
                    let eps = std::mem::take(&mut self.finished);
                    self.reinforce_update(&eps);
                }
            }
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
        policy_outputs(&d, &self.spec.action_space, None)
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
        s.optimizers.push(("policy".into(), self.policy.optimizer_state()));
        s
    }

    fn load_state(&mut self, mut state: AgentState) -> Result<(), AgentError> {
        let p = state.take_network("policy", self.policy.model.params())?;
        let o = state.take_optimizer("policy", self.policy.model.params())?;
        self.steps = state.counter("steps")?;
        self.updates = state.counter("updates")?;
        *self.policy.model.params_mut() = p;
        self.policy.opt.state = o;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check;

    fn spec() -> EnvSpec {
        EnvSpec {
            id: "fixture".into(),
            obs_dim: 3,
            action_space: ActionSpace::Discrete { n: 2 },
            max_episode_steps: 10,
            reward_range: (0.0, 1.0),
        }
    }

    #[test]
    fn returns_to_go() {
        assert_eq!(discounted_returns(&[1.0, 1.0, 1.0], 1.0), vec![3.0, 2.0, 1.0]);
        let g = discounted_returns(&[1.0, 0.0, 2.0], 0.5);
        assert_eq!(g, vec![1.5, 1.0, 2.0]);
    }

    #[test]
    fn episode_buffer_alignment() {
        let mut e = EpisodeBuffer::default();
        e.push(vec![0.0], Action::Discrete(0), -0.1, 0.0, 1.0, false);
        assert!(e.is_aligned() && !e.is_complete());
        e.push(vec![1.0], Action::Discrete(1), -0.2, 0.0, 1.0, true);
        assert!(e.is_complete() && e.len() == 2);
    }

    #[test]
    fn softmax_policy_gradient_matches_closed_form() {
        let logits = Tensor::from_rows(&[[0.3, -0.7, 1.1]]);
        let (a, g) = (2usize, 1.7);
        let f = |tape: &Tape, x: Var| tape.scale(tape.sum(softmax_log_prob(tape, x, &[a])), -g);
        assert!(gradient_check(f, &logits, 1e-6) < 1e-6);
        let tape = Tape::new();
        let x = tape.leaf(logits.clone());
        let grads = tape.backward(f(&tape, x)).unwrap();
        let p = PolicyDistribution::softmax(logits.data().to_vec()).probs().unwrap();
        for (j, (&gj, pj)) in grads.wrt(x).unwrap().data().iter().zip(p).enumerate() {
            let onehot = if j == a { 1.0 } else { 0.0 };
            assert!((gj - (pj - onehot) * g).abs() < 1e-12);
        }
    }

    #[test]
    fn centered_constant_returns_give_zero_gradient() {
        let cfg = ReinforceConfig {
            gamma: 0.0,
            hidden: vec![4],
            ..ReinforceConfig::default()
        };
        let mut agent = ReinforceAgent::new(cfg, &spec(), 0).unwrap();
        let before = agent.policy().params().clone();
        let mut ep = EpisodeBuffer::default();
        for t in 0..4 {
            ep.push(vec![t as f64, 1.0, -1.0], Action::Discrete(t % 2), 0.0, 0.0, 1.0, t == 3);
        }
        agent.reinforce_update(&[ep]);
        assert_eq!(agent.last_loss(), 0.0);
        assert_eq!(&before, agent.policy().params());
    }

    #[test]
    #[should_panic(expected = "contract violation")]
    fn mid_episode_update_panics() {
        let mut agent = ReinforceAgent::new(ReinforceConfig::default(), &spec(), 0).unwrap();
        let mut ep = EpisodeBuffer::default();
        ep.push(vec![0.0; 3], Action::Discrete(0), 0.0, 0.0, 1.0, false);
        agent.reinforce_update(&[ep]);
    }

    #[test]
    fn updates_after_batches_of_episodes() {
        let cfg = ReinforceConfig {
            batch_episodes: 2,
            hidden: vec![4],
            ..ReinforceConfig::default()
        };
        let mut agent = ReinforceAgent::new(cfg, &spec(), 1).unwrap();
        for ep in 0..5 {
            for t in 0..3 {
                agent.act_and_train(&[t as f64, ep as f64, 0.0], 1.0);
            }
            agent.stop_episode_and_train(&[0.0; 3], 1.0, true);
        }
        assert_eq!(agent.counters(), (15, 2));
        let before = agent.param_fingerprint();
        let _ = agent.act(&[0.1, 0.2, 0.3]);
        assert_eq!(before, agent.param_fingerprint());
    }
}
