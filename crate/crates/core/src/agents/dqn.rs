use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{value_loss_terms, ValueTargets};
use super::common::{batch_tensor, check_batch, discrete_actions, input_gradient, var_rows, Net, Replay};
use super::{Agent, AgentConfig, AgentError, AgentOutputs, AgentState};
use crate::autodiff::{AdamConfig, Var};
use crate::envs::EnvSpec;
use crate::exploration::{Explorer, ExplorerConfig};
use crate::models::{
    argmax, categorical_project, categorical_support, quantile_huber_loss_tape, quantile_taus, Activation, HeadVars,
    MlpSpec, NoiseMode, OutputHead,
};
use crate::replay::{NStepAssembler, PrioritizedConfig, Transition};
use crate::{Action, Mlp, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetUpdate {
    /// Copy the online network every `interval` updates.
    Hard { interval: u64 },
    /// Polyak-average towards the online network after every update.
    Soft { tau: f64 },
}

/// How the bootstrap action at the next state is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// `max_a Q_target(s', a)`
    Max,
    /// Online network picks, target network evaluates.
    Double,
    /// The action actually taken at `s'`.
    Sarsa,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueDistribution {
    None,
    Categorical { v_min: f64, v_max: f64, n_atoms: usize },
    Quantile { n_quantiles: usize, kappa: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub gamma: f64,
    pub lr: f64,
    pub adam_eps: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Updates start once the buffer holds this many transitions.
    pub replay_start: usize,
    /// Environment steps between updates.
    pub update_interval: u64,
    pub target_update: TargetUpdate,
    pub target_kind: TargetKind,
    pub dueling: bool,
    pub distribution: ValueDistribution,
    pub noisy: bool,
    pub n_step: usize,
    pub prioritized: Option<PrioritizedConfig>,
    pub explorer: ExplorerConfig,
    pub eval_epsilon: f64,
    pub huber_delta: f64,
    pub max_grad_norm: Option<f64>,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 1e-3,
            adam_eps: 1e-8,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            batch_size: 32,
            replay_capacity: 100_000,
            replay_start: 500,
            update_interval: 1,
            target_update: TargetUpdate::Hard { interval: 100 },
            target_kind: TargetKind::Max,
            dueling: false,
            distribution: ValueDistribution::None,
            noisy: false,
            n_step: 1,
            prioritized: None,
            explorer: ExplorerConfig::EpsilonLinearDecay {
                start: 1.0,
                end: 0.1,
                decay_steps: 10_000,
            },
            eval_epsilon: 0.05,
            huber_delta: 1.0,
            max_grad_norm: None,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1]");
        }
        if self.batch_size == 0 || self.update_interval == 0 || self.n_step == 0 || self.replay_capacity == 0 {
            return bad("batch size, update interval, n-step and replay capacity must be positive");
        }
        if !(0.0..=1.0).contains(&self.eval_epsilon) {
            return bad("eval_epsilon must be in [0, 1]");
        }
        match self.target_update {
            TargetUpdate::Hard { interval } if interval == 0 => return bad("target sync interval must be positive"),
            TargetUpdate::Soft { tau } if !(tau > 0.0 && tau <= 1.0) => return bad("tau must be in (0, 1]"),
            _ => {}
        }
        if let ValueDistribution::Quantile { n_quantiles, kappa } = self.distribution {
            if n_quantiles == 0 || !(kappa > 0.0) {
                return bad("quantile head needs K >= 1 and kappa > 0");
            }
            if self.dueling {
                return bad("dueling is not available for the quantile head");
            }
        }
        self.explorer
            .validate()
            .map_err(|e| AgentError::InvalidConfig(e.to_string()))
    }

    /// Double, prioritized, n-step, dueling, categorical, noisy.
    pub fn rainbow_features(&self) -> [bool; 6] {
        [
            self.target_kind == TargetKind::Double,
            self.prioritized.is_some(),
            self.n_step > 1,
            self.dueling,
            matches!(self.distribution, ValueDistribution::Categorical { .. }),
            self.noisy,
        ]
    }

    fn head(&self, n_actions: usize) -> OutputHead {
        match self.distribution {
            ValueDistribution::None => OutputHead::Q {
                n_actions,
                dueling: self.dueling,
            },
            ValueDistribution::Categorical { v_min, v_max, n_atoms } => OutputHead::Categorical {
                n_actions,
                n_atoms,
                v_min,
                v_max,
                dueling: self.dueling,
            },
            ValueDistribution::Quantile { n_quantiles, .. } => OutputHead::Quantile { n_actions, n_quantiles },
        }
    }
}

/// Turns `base` into the six-component combination: double updates,
/// prioritized replay, 3-step returns, a dueling categorical head and noisy
/// layers, with noise as the only exploration.
pub fn make_rainbow(base: DqnConfig) -> DqnConfig {
    let distribution = match base.distribution {
        d @ ValueDistribution::Categorical { .. } => d,
        _ => ValueDistribution::Categorical {
            v_min: -10.0,
            v_max: 10.0,
            n_atoms: 51,
        },
    };
    DqnConfig {
        target_kind: TargetKind::Double,
        prioritized: Some(base.prioritized.unwrap_or_default()),
        n_step: 3,
        dueling: true,
        distribution,
        noisy: true,
        explorer: ExplorerConfig::Greedy,
        eval_epsilon: 0.0,
        ..base
    }
}

/// Bootstrapped targets `r + discount * Q_target(s', a*)` for scalar heads.
///
/// `discounts` already hold `gamma^n` (0 for terminal items). `next_online`
/// is needed for [`TargetKind::Double`], `next_actions` for
/// [`TargetKind::Sarsa`].
pub fn td_targets(
    rewards: &[f64],
    discounts: &[f64],
    next_target: &[Vec<f64>],
    next_online: Option<&[Vec<f64>]>,
    next_actions: Option<&[Option<usize>]>,
    kind: TargetKind,
) -> Vec<f64> {
    (0..rewards.len())
        .map(|i| {
            if discounts[i] == 0.0 {
                return rewards[i];
            }
            let q = &next_target[i];
            let boot = match kind {
                TargetKind::Max => q[argmax(q)],
                TargetKind::Double => {
                    let online = next_online.expect("contract violation: double targets need online values");
                    q[argmax(&online[i])]
                }
                TargetKind::Sarsa => {
                    let a = next_actions
                        .and_then(|a| a[i])
                        .expect("contract violation: sarsa targets need the next action");
                    q[a]
                }
            };
            rewards[i] + discounts[i] * boot
        })
        .collect()
}

/// Importance-weighted mean Huber loss and the TD errors `q - y`.
pub fn weighted_huber(q_sa: &[f64], targets: &[f64], weights: &[f64], delta: f64) -> (f64, Vec<f64>) {
    let td: Vec<f64> = q_sa.iter().zip(targets).map(|(q, y)| q - y).collect();
    let loss = td
        .iter()
        .zip(weights)
        .map(|(&d, &w)| {
            let a = d.abs();
            let h = if a <= delta { 0.5 * d * d } else { delta * (a - 0.5 * delta) };
            w * h
        })
        .sum::<f64>()
        / td.len() as f64;
    (loss, td)
}

/// Row-wise Huber TD loss `[B]` and TD errors `[B]` of a scalar Q head.
pub(crate) fn scalar_td_loss(tape: &Tape, q: Var, actions: &[usize], targets: &[f64], delta: f64) -> (Var, Var) {
    let q_sa = tape.gather_last(q, actions);
    let td = tape.sub(q_sa, tape.constant(Tensor::vector(targets.to_vec())));
    (tape.huber(td, delta), td)
}

/// Selects the `[B, N]` slice of a `[B, A, N]` head at the taken actions.
fn select_action_rows(tape: &Tape, x: Var, actions: &[usize]) -> Var {
    let s = tape.shape(x);
    let (b, a, n) = (s[0], s[1], s[2]);
    let flat = tape.reshape(x, &[b * a, n]);
    let idx: Vec<usize> = actions.iter().enumerate().map(|(i, &act)| i * a + act).collect();
    tape.index_rows(flat, &idx)
}

/// Cross-entropy `-sum_j m_j log p_j` `[B]` between projected targets `m`
/// `[B, N]` and the predicted distributions of the taken actions.
pub(crate) fn categorical_td_loss(tape: &Tape, logits: Var, actions: &[usize], projected: &Tensor) -> Var {
    let logp = tape.log_softmax(logits);
    let chosen = select_action_rows(tape, logp, actions);
    tape.neg(tape.sum_axis(tape.mul(chosen, tape.constant(projected.clone())), 1, false))
}

/// Quantile Huber loss `[B]` of the taken actions against `targets` `[B, K']`.
pub(crate) fn quantile_td_loss(tape: &Tape, quantiles: Var, actions: &[usize], targets: &Tensor, kappa: f64) -> Var {
    let chosen = select_action_rows(tape, quantiles, actions);
    let k = tape.shape(chosen)[1];
    quantile_huber_loss_tape(tape, chosen, targets, &quantile_taus(k), kappa)
}

enum HeadValues {
    Q(Vec<Vec<f64>>),
    /// `[B][A][N]` probabilities.
    Categorical(Vec<Vec<Vec<f64>>>),
    /// `[B][A][K]` quantiles.
    Quantile(Vec<Vec<Vec<f64>>>),
}

fn split3(flat: &[f64], a: usize, n: usize) -> Vec<Vec<Vec<f64>>> {
    flat.chunks(a * n).map(|b| b.chunks(n).map(<[f64]>::to_vec).collect()).collect()
}

fn head_values(model: &Mlp, obs: &Tensor, mode: NoiseMode) -> HeadValues {
    let tape = Tape::new();
    let bound = tape.bind_frozen(model.params());
    let x = tape.constant(obs.clone());
    match model.forward(&tape, &bound, x, mode) {
        HeadVars::Q(q) => HeadValues::Q(var_rows(&tape, q)),
        HeadVars::Categorical(l) => {
            let s = tape.shape(l);
            let p = tape.softmax(l);
            HeadValues::Categorical(split3(tape.value(p).data(), s[1], s[2]))
        }
        HeadVars::Quantile(v) => {
            let s = tape.shape(v);
            HeadValues::Quantile(split3(tape.value(v).data(), s[1], s[2]))
        }
        _ => unreachable!("value heads only"),
    }
}

impl HeadValues {
    fn means(&self, support: &[f64]) -> Vec<Vec<f64>> {
        match self {
            HeadValues::Q(q) => q.clone(),
            HeadValues::Categorical(p) => p
                .iter()
                .map(|row| row.iter().map(|d| d.iter().zip(support).map(|(p, z)| p * z).sum()).collect())
                .collect(),
            HeadValues::Quantile(v) => v
                .iter()
                .map(|row| row.iter().map(|d| d.iter().sum::<f64>() / d.len() as f64).collect())
                .collect(),
        }
    }
}

/// The DQN family: scalar, categorical or quantile heads with optional
/// double/SARSA targets, n-step returns, prioritized replay, dueling and
/// noisy layers.
#[derive(Clone, Debug)]
pub struct DqnAgent {
    cfg: DqnConfig,
    spec: EnvSpec,
    n_actions: usize,
    support: Vec<f64>,
    online: Net,
    target: Mlp,
    replay: Replay,
    explorer: Explorer,
    assemblers: Vec<NStepAssembler>,
    pending: Vec<Option<(Vec<f64>, Action)>>,
    /// SARSA transitions waiting for the next action.
    awaiting: Vec<Option<Transition>>,
    rng: ChaCha8Rng,
    steps: u64,
    updates: u64,
    noise_resets: u64,
    last_loss: f64,
    last_errors: Vec<f64>,
}

impl DqnAgent {
    pub fn new(cfg: DqnConfig, spec: &EnvSpec, seed: u64) -> Result<Self, AgentError> {
        cfg.validate()?;
        let n_actions = discrete_actions(spec, "dqn")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = MlpSpec::new(spec.obs_dim, &cfg.hidden, cfg.activation, cfg.head(n_actions)).noisy(cfg.noisy);
        let adam = AdamConfig {
            lr: cfg.lr,
            eps: cfg.adam_eps,
            ..AdamConfig::default()
        };
        let online = Net::new(mlp, adam, cfg.max_grad_norm, &mut rng)?;
        let support = match cfg.distribution {
            ValueDistribution::Categorical { v_min, v_max, n_atoms } => categorical_support(v_min, v_max, n_atoms),
            _ => Vec::new(),
        };
        let explorer = Explorer::new(cfg.explorer.clone(), 1, 0).map_err(|e| AgentError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            target: online.model.clone(),
            online,
            replay: Replay::new(cfg.replay_capacity, cfg.prioritized),
            explorer,
            n_actions,
            support,
            spec: spec.clone(),
            assemblers: Vec::new(),
            pending: Vec::new(),
            awaiting: Vec::new(),
            rng,
            steps: 0,
            updates: 0,
            noise_resets: 0,
            last_loss: 0.0,
            last_errors: Vec::new(),
            cfg,
        })
    }

    pub fn dqn_config(&self) -> &DqnConfig {
        &self.cfg
    }

    pub fn online(&self) -> &Mlp {
        &self.online.model
    }

    pub fn online_mut(&mut self) -> &mut Mlp {
        &mut self.online.model
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    /// Noise redraws so far (one per acting call and one per update).
    pub fn noise_resets(&self) -> u64 {
        self.noise_resets
    }

    pub fn last_loss(&self) -> f64 {
        self.last_loss
    }

    /// Q-values (means for distributional heads) under the evaluation policy.
    pub fn q_values(&self, obs: &[f64]) -> Vec<f64> {
        let t = batch_tensor(&[obs]);
        head_values(&self.online.model, &t, NoiseMode::Mean).means(&self.support).remove(0)
    }

    pub fn sync_target(&mut self) {
        match self.cfg.target_update {
            TargetUpdate::Hard { interval } => {
                if self.updates % interval == 0 {
                    self.target.params_mut().copy_from(self.online.model.params());
                }
            }
            TargetUpdate::Soft { tau } => self.target.params_mut().soft_update_from(self.online.model.params(), tau),
        }
    }

    fn reset_noise(&mut self) {
        if self.cfg.noisy {
            self.online.model.reset_noise(&mut self.rng);
            self.target.reset_noise(&mut self.rng);
            self.noise_resets += 1;
        }
    }

    fn ensure_envs(&mut self, n: usize) {
        while self.assemblers.len() < n {
            self.assemblers.push(NStepAssembler::new(self.cfg.n_step, self.cfg.gamma));
            self.pending.push(None);
            self.awaiting.push(None);
        }
    }

    fn store(&mut self, env: usize, t: Transition) {
        for out in self.assemblers[env].push(t) {
            self.replay.append(out);
        }
    }

    fn explore(&mut self, q: &[f64]) -> usize {
        self.explorer.select_discrete(self.steps, q, &mut self.rng)
    }

    /// One gradient step on a replay batch.
    pub fn update(&mut self) -> f64 {
        self.reset_noise();
        let batch = self.replay.sample(self.cfg.batch_size, self.steps, &mut self.rng);
        let ts = &batch.transitions;
        let obs = batch_tensor(&ts.iter().map(|t| t.obs.as_slice()).collect::<Vec<_>>());
        let next = batch_tensor(&ts.iter().map(|t| t.next_obs.as_slice()).collect::<Vec<_>>());
        let actions: Vec<usize> = ts.iter().map(|t| t.action.as_discrete().expect("discrete action")).collect();
        let rewards: Vec<f64> = ts.iter().map(|t| t.reward).collect();
        let discounts: Vec<f64> = ts.iter().map(|t| t.bootstrap_discount(self.cfg.gamma)).collect();
        let weights = Tensor::vector(batch.weights.clone());

        let next_target = head_values(&self.target, &next, NoiseMode::Sampled);
        let next_online = match self.cfg.target_kind {
            TargetKind::Double => Some(head_values(&self.online.model, &next, NoiseMode::Sampled).means(&self.support)),
            _ => None,
        };
        let next_actions: Vec<Option<usize>> = ts.iter().map(|t| t.next_action.as_ref().and_then(Action::as_discrete)).collect();
        let bootstrap_action = |i: usize, target_means: &[Vec<f64>]| -> usize {
            match self.cfg.target_kind {
                TargetKind::Max => argmax(&target_means[i]),
                TargetKind::Double => argmax(&next_online.as_ref().unwrap()[i]),
                TargetKind::Sarsa => next_actions[i].unwrap_or_else(|| argmax(&target_means[i])),
            }
        };

        let tape = Tape::new();
        let bound = tape.bind(self.online.model.params());
        let x = tape.constant(obs);
        let head = self.online.model.forward(&tape, &bound, x, NoiseMode::Sampled);
        let targets = match &next_target {
            HeadValues::Q(tq) => ValueTargets::Scalar {
                targets: td_targets(&rewards, &discounts, tq, next_online.as_deref(), Some(&next_actions), self.cfg.target_kind),
                huber_delta: self.cfg.huber_delta,
            },
            HeadValues::Categorical(tp) => {
                let means = next_target.means(&self.support);
                let n = self.support.len();
                let mut m = Vec::with_capacity(ts.len() * n);
                for (i, t) in ts.iter().enumerate() {
                    let a = bootstrap_action(i, &means);
                    let discount = self.cfg.gamma.powi(t.n_used as i32);
                    m.extend(categorical_project(&self.support, &tp[i][a], t.reward, discount, t.is_terminal));
                }
                ValueTargets::Categorical {
                    projected: Tensor::from_vec(&[ts.len(), n], m),
                }
            }
            HeadValues::Quantile(tv) => {
                let ValueDistribution::Quantile { kappa, .. } = self.cfg.distribution else {
                    unreachable!()
                };
                let means = next_target.means(&self.support);
                let k = tv[0][0].len();
                let mut targets = Vec::with_capacity(ts.len() * k);
                for i in 0..ts.len() {
                    let a = bootstrap_action(i, &means);
                    targets.extend(tv[i][a].iter().map(|&z| rewards[i] + discounts[i] * z));
                }
                ValueTargets::Quantile {
                    targets: Tensor::from_vec(&[ts.len(), k], targets),
                    kappa,
                }
            }
        };
        let (per_item, errors_var) = value_loss_terms(&tape, head, &actions, &targets);
        let loss = tape.mean(tape.mul(per_item, tape.constant(weights)));
        let errors: Vec<f64> = tape.value(errors_var).data().iter().map(|e| e.abs()).collect();
        let grads = tape.backward(loss).expect("scalar loss").for_bound(&bound);
        self.online.step(grads);
        self.replay.update_priorities(&batch, &errors);
        self.updates += 1;
        self.sync_target();
        self.last_loss = tape.item(loss);
        self.last_errors = errors;
        self.last_loss
    }
}

impl Agent for DqnAgent {
    fn config(&self) -> AgentConfig {
        AgentConfig::Dqn(self.cfg.clone())
    }

    fn env_spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn batch_act_and_train(&mut self, obs: &[Vec<f64>]) -> Vec<Action> {
        self.ensure_envs(obs.len());
        self.reset_noise();
        let q = head_values(&self.online.model, &batch_tensor(obs), NoiseMode::Sampled).means(&self.support);
        let mut actions = Vec::with_capacity(obs.len());
        for (i, row) in q.iter().enumerate() {
            assert!(self.pending[i].is_none(), "contract violation: previous action not yet observed");
            let a = self.explore(row);
            if let Some(mut t) = self.awaiting[i].take() {
                t.next_action = Some(Action::Discrete(a));
                self.store(i, t);
            }
            self.pending[i] = Some((obs[i].clone(), Action::Discrete(a)));
            actions.push(Action::Discrete(a));
        }
        actions
    }

    fn batch_observe_and_train(&mut self, next_obs: &[Vec<f64>], rewards: &[f64], terminals: &[bool], resets: &[bool]) {
        let n = next_obs.len();
        check_batch(n, &[rewards.len(), terminals.len(), resets.len()]);
        self.ensure_envs(n);
        for i in 0..n {
            let (obs, action) = self.pending[i]
                .take()
                .expect("contract violation: observe called before act");
            let cut = resets[i] && !terminals[i];
            let mut t = Transition::new(obs, action, rewards[i], next_obs[i].clone(), terminals[i], cut);
            if self.cfg.target_kind == TargetKind::Sarsa && !terminals[i] {
                if cut {
                    let q = self.q_values(&next_obs[i]);
                    t.next_action = Some(Action::Discrete(self.explore(&q)));
                    self.store(i, t);
                } else {
                    self.awaiting[i] = Some(t);
                }
            } else {
                self.store(i, t);
            }
            self.steps += 1;
            if self.replay.len() >= self.cfg.replay_start.max(1) && self.steps % self.cfg.update_interval == 0 {
                self.update();
            }
        }
    }

    fn batch_act(&self, obs: &[Vec<f64>]) -> Vec<Action> {
        head_values(&self.online.model, &batch_tensor(obs), NoiseMode::Mean)
            .means(&self.support)
            .iter()
            .map(|q| Action::Discrete(argmax(q)))
            .collect()
    }

    fn has_pending(&self) -> bool {
        self.pending.iter().any(Option::is_some)
    }

    fn outputs(&self, obs: &[f64]) -> AgentOutputs {
        let values = head_values(&self.online.model, &batch_tensor(&[obs]), NoiseMode::Mean);
        let q = values.means(&self.support).remove(0);
        let action = argmax(&q);
        let value = q[action];
        match values {
            HeadValues::Q(_) => AgentOutputs::QValues { q, action, value },
            HeadValues::Categorical(mut p) => AgentOutputs::Categorical {
                support: self.support.clone(),
                probs: p.remove(0),
                q,
                action,
                value,
            },
            HeadValues::Quantile(mut v) => {
                let quantiles = v.remove(0);
                AgentOutputs::Quantile {
                    taus: quantile_taus(quantiles[0].len()),
                    quantiles,
                    q,
                    action,
                    value,
                }
            }
        }
    }

    fn saliency_target(&self, obs: &[f64]) -> f64 {
        let q = self.q_values(obs);
        q[argmax(&q)]
    }

    fn saliency(&self, obs: &[f64]) -> Vec<f64> {
        let support = Tensor::vector(self.support.clone());
        input_gradient(&self.online.model, obs, |tape, head| {
            let q = match head {
                HeadVars::Q(q) => q,
                HeadVars::Categorical(l) => {
                    let p = tape.softmax(l);
                    tape.sum_axis(tape.mul(p, tape.constant(support)), 2, false)
                }
                HeadVars::Quantile(v) => tape.mean_axis(v, 2, false),
                _ => unreachable!("value heads only"),
            };
            tape.sum(tape.max_axis(q, 1, false))
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
        s.counters.insert("noise_resets".into(), self.noise_resets);
        s.networks.push(("online".into(), self.online.model.params().clone()));
        s.networks.push(("target".into(), self.target.params().clone()));
        s.optimizers.push(("online".into(), self.online.optimizer_state()));
        if include_replay {
            s.replay = Some(self.replay.to_bytes());
        }
        s
    }

    fn load_state(&mut self, mut state: AgentState) -> Result<(), AgentError> {
        let online = state.take_network("online", self.online.model.params())?;
        let target = state.take_network("target", self.target.params())?;
        let opt = state.take_optimizer("online", self.online.model.params())?;
        self.steps = state.counter("steps")?;
        self.updates = state.counter("updates")?;
        self.noise_resets = state.counter("noise_resets")?;
        if let Some(bytes) = &state.replay {
            self.replay.restore(bytes)?;
        }
        *self.online.model.params_mut() = online;
        *self.target.params_mut() = target;
        self.online.opt.state = opt;
        Ok(())
    }
}
