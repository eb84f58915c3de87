use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::distribution::{LOG_STD_MAX, LOG_STD_MIN};
use super::noisy::NoiseVectors;
use super::values::{
    categorical_support, quantile_taus, ActionValue, CategoricalActionValue, DiscreteActionValue,
    QuantileActionValue,
};
use super::{ModelError, PolicyDistribution};
use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputHead {
    /// Unconstrained linear outputs (state values, critics).
    Raw { out: usize },
    /// Scalar Q-values, optionally through a value/advantage split.
    Q { n_actions: usize, dueling: bool },
    Categorical {
        n_actions: usize,
        n_atoms: usize,
        v_min: f64,
        v_max: f64,
        dueling: bool,
    },
    Quantile { n_actions: usize, n_quantiles: usize },
    SoftmaxPolicy { n_actions: usize },
    /// Diagonal Gaussian with a state-independent `log_std` parameter.
    GaussianPolicy { action_dim: usize },
    SquashedGaussianPolicy { action_dim: usize },
    /// `tanh` outputs in `[-1, 1]`.
    DeterministicPolicy { action_dim: usize },
}

impl OutputHead {
    fn width(&self) -> usize {
        match *self {
            OutputHead::Raw { out } => out,
            OutputHead::Q { n_actions, dueling } => n_actions + usize::from(dueling),
            OutputHead::Categorical {
                n_actions,
                n_atoms,
                dueling,
                ..
            } => (n_actions + usize::from(dueling)) * n_atoms,
            OutputHead::Quantile { n_actions, n_quantiles } => n_actions * n_quantiles,
            OutputHead::SoftmaxPolicy { n_actions } => n_actions,
            OutputHead::GaussianPolicy { action_dim } | OutputHead::DeterministicPolicy { action_dim } => action_dim,
            OutputHead::SquashedGaussianPolicy { action_dim } => 2 * action_dim,
        }
    }

    /// Raw critics keep the standard scale; every other head starts near zero.
    fn last_layer_scale(&self) -> f64 {
        match self {
            OutputHead::Raw { .. } => 1.0,
            _ => 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub head: OutputHead,
    /// Replace every linear layer by a factorized noisy layer.
    #[serde(default)]
    pub noisy: bool,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], activation: Activation, head: OutputHead) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            activation,
            head,
            noisy: false,
        }
    }

    pub fn noisy(mut self, noisy: bool) -> Self {
        self.noisy = noisy;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidSpec(msg.to_string()));
        if self.input_dim == 0 {
            return bad("input_dim must be positive");
        }
        if self.hidden.is_empty() {
            return bad("at least one hidden layer is required");
        }
        if self.hidden.contains(&0) {
            return bad("layer widths must be positive");
        }
        if self.head.width() == 0 {
            return bad("output head has zero width");
        }
        if let OutputHead::Categorical {
            n_atoms, v_min, v_max, ..
        } = self.head
        {
            if n_atoms < 2 || v_max <= v_min {
                return bad("categorical head needs >= 2 atoms and v_min < v_max");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Layer {
    w: ParamId,
    b: ParamId,
    sigma: Option<(ParamId, ParamId)>,
}

/// Whether noisy layers use their current noise or only the mean weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    Sampled,
    Mean,
}

/// Head outputs recorded on a tape, batch-first.
#[derive(Clone, Copy, Debug)]
pub enum HeadVars {
    Raw(Var),
    /// `[B, n_actions]`
    Q(Var),
    /// `[B, n_actions, n_atoms]` logits; softmax over the last axis gives probabilities.
    Categorical(Var),
    /// `[B, n_actions, n_quantiles]`
    Quantile(Var),
    /// `[B, n_actions]`
    Softmax(Var),
    /// mean `[B, d]`, log_std `[d]` (clamped)
    Gaussian { mean: Var, log_std: Var },
    /// mean and clamped log_std, both `[B, d]`
    SquashedGaussian { mean: Var, log_std: Var },
    /// `[B, d]` in `[-1, 1]`
    Deterministic(Var),
}

/// One row of evaluated model output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum ModelOutput<T> {
    Values(Vec<T>),
    ActionValue(ActionValue<T>),
    Policy(PolicyDistribution<T>),
}

/// Fully connected network with a typed output head.
///
/// Weights are stored `[in, out]` so a layer computes `x W + b` on
/// batch-first inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    spec: MlpSpec,
    params: ParamStore<T>,
    layers: Vec<Layer>,
    log_std: Option<ParamId>,
    noise: Vec<NoiseVectors<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// LeCun-normal weights, zero biases; noisy layers use the factorized
    /// noisy-network initialization.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut widths = vec![spec.input_dim];
        widths.extend(&spec.hidden);
        widths.push(spec.head.width());
        let n_layers = widths.len() - 1;
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(n_layers);
        let mut noise = Vec::new();
        for (l, win) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (win[0], win[1]);
            let last = l + 1 == n_layers;
            let scale = if last { spec.head.last_layer_scale() } else { 1.0 };
            let std = scale / (fan_in as f64).sqrt();
            let layer = if spec.noisy {
                let bound = std;
                let mut uniform = |n: usize| -> Vec<T> { (0..n).map(|_| T::of(rng.random_range(-bound..=bound))).collect() };
                let w = params.add(format!("l{l}.w"), Tensor::from_vec(&[fan_in, fan_out], uniform(fan_in * fan_out)));
                let b = params.add(format!("l{l}.b"), Tensor::vector(uniform(fan_out)));
                let sigma = T::of(0.5 / (fan_in as f64).sqrt());
                let ws = params.add(format!("l{l}.w_sigma"), Tensor::full(&[fan_in, fan_out], sigma));
                let bs = params.add(format!("l{l}.b_sigma"), Tensor::full(&[fan_out], sigma));
                noise.push(NoiseVectors::zeros(fan_in, fan_out));
                Layer { w, b, sigma: Some((ws, bs)) }
            } else {
                let data = (0..fan_in * fan_out)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        T::of(std * z)
                    })
                    .collect();
                let w = params.add(format!("l{l}.w"), Tensor::from_vec(&[fan_in, fan_out], data));
                let b = params.add(format!("l{l}.b"), Tensor::zeros(&[fan_out]));
                Layer { w, b, sigma: None }
            };
            layers.push(layer);
        }
        let log_std = match spec.head {
            OutputHead::GaussianPolicy { action_dim } => Some(params.add("log_std", Tensor::zeros(&[action_dim]))),
            _ => None,
        };
        let mut mlp = Self {
            spec,
            params,
            layers,
            log_std,
            noise,
        };
        mlp.reset_noise(rng);
        Ok(mlp)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn is_noisy(&self) -> bool {
        self.spec.noisy
    }

    /// Draws fresh factorized noise for every noisy layer.
    pub fn reset_noise<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for n in &mut self.noise {
            n.resample(rng);
        }
    }

    pub fn noise(&self) -> &[NoiseVectors<T>] {
        &self.noise
    }

    /// Records the forward pass of `x` (`[B, input_dim]`) on `tape` using
    /// parameters previously bound from [`Mlp::params`].
    pub fn forward(&self, tape: &Tape<T>, bound: &Bound, x: Var, mode: NoiseMode) -> HeadVars {
        let shape = tape.shape(x);
        assert!(
            shape.len() == 2 && shape[1] == self.spec.input_dim,
            "contract violation: mlp input shape {shape:?}, expected [B, {}]",
            self.spec.input_dim
        );
        let batch = shape[0];
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let (mut w, mut b) = (bound.get(layer.w), bound.get(layer.b));
            if let (Some((ws, bs)), NoiseMode::Sampled) = (layer.sigma, mode) {
                let n = &self.noise[l];
                w = tape.add(w, tape.mul(bound.get(ws), tape.constant(n.weight_noise())));
                b = tape.add(b, tape.mul(bound.get(bs), tape.constant(n.bias_noise())));
            }
            h = tape.add(tape.matmul(h, w), b);
            if l + 1 < self.layers.len() {
                h = match self.spec.activation {
                    Activation::Relu => tape.relu(h),
                    Activation::Tanh => tape.tanh(h),
                };
            }
        }
        self.head(tape, bound, h, batch)
    }

    fn head(&self, tape: &Tape<T>, bound: &Bound, out: Var, batch: usize) -> HeadVars {
        let (lo, hi) = (T::of(LOG_STD_MIN), T::of(LOG_STD_MAX));
        match self.spec.head {
            OutputHead::Raw { .. } => HeadVars::Raw(out),
            OutputHead::Q { dueling: false, .. } => HeadVars::Q(out),
            OutputHead::Q { n_actions, dueling: true } => {
                let v = tape.slice_last(out, 0, 1);
                let a = tape.slice_last(out, 1, n_actions);
                let centered = tape.sub(a, tape.mean_axis(a, 1, true));
                HeadVars::Q(tape.add(v, centered))
            }
            OutputHead::Categorical {
                n_actions,
                n_atoms,
                dueling,
                ..
            } => {
                if dueling {
                    let v = tape.reshape(tape.slice_last(out, 0, n_atoms), &[batch, 1, n_atoms]);
                    let a = tape.slice_last(out, n_atoms, n_actions * n_atoms);
                    let a = tape.reshape(a, &[batch, n_actions, n_atoms]);
                    let centered = tape.sub(a, tape.mean_axis(a, 1, true));
                    HeadVars::Categorical(tape.add(v, centered))
                } else {
                    HeadVars::Categorical(tape.reshape(out, &[batch, n_actions, n_atoms]))
                }
            }
            OutputHead::Quantile { n_actions, n_quantiles } => {
                HeadVars::Quantile(tape.reshape(out, &[batch, n_actions, n_quantiles]))
            }
            OutputHead::SoftmaxPolicy { .. } => HeadVars::Softmax(out),
            OutputHead::GaussianPolicy { .. } => HeadVars::Gaussian {
                mean: out,
                log_std: tape.clip(bound.get(self.log_std.unwrap()), lo, hi),
            },
            OutputHead::SquashedGaussianPolicy { action_dim } => HeadVars::SquashedGaussian {
                mean: tape.slice_last(out, 0, action_dim),
                log_std: tape.clip(tape.slice_last(out, action_dim, action_dim), lo, hi),
            },
            OutputHead::DeterministicPolicy { .. } => HeadVars::Deterministic(tape.tanh(out)),
        }
    }

    /// Evaluates a batch `[B, input_dim]` without recording gradients.
    pub fn evaluate(&self, obs: &Tensor<T>, mode: NoiseMode) -> Vec<ModelOutput<T>> {
        let tape = Tape::new();
        let bound = tape.bind_frozen(&self.params);
        let x = tape.constant(obs.clone());
        let head = self.forward(&tape, &bound, x, mode);
        self.outputs(&tape, head)
    }

    /// Converts recorded head values into typed per-row outputs.
    pub fn outputs(&self, tape: &Tape<T>, head: HeadVars) -> Vec<ModelOutput<T>> {
        let rows = |v: Var| -> Vec<Vec<T>> {
            let t = tape.value(v);
            let w = *t.shape().last().unwrap();
            t.data().chunks(w).map(<[T]>::to_vec).collect()
        };
        match (head, &self.spec.head) {
            (HeadVars::Raw(v), _) => rows(v).into_iter().map(ModelOutput::Values).collect(),
            (HeadVars::Q(v), _) => rows(v)
                .into_iter()
                .map(|q| ModelOutput::ActionValue(ActionValue::Discrete(DiscreteActionValue { q })))
                .collect(),
            (
                HeadVars::Categorical(v),
                &OutputHead::Categorical {
                    n_actions,
                    n_atoms,
                    v_min,
                    v_max,
                    ..
                },
            ) => {
                let support = categorical_support(T::of(v_min), T::of(v_max), n_atoms);
                let probs = tape.value(tape.softmax(v)).data().to_vec();
                probs
                    .chunks(n_actions * n_atoms)
                    .map(|b| {
                        ModelOutput::ActionValue(ActionValue::Categorical(CategoricalActionValue {
                            support: support.clone(),
                            probs: b.chunks(n_atoms).map(<[T]>::to_vec).collect(),
                        }))
                    })
                    .collect()
            }
            (HeadVars::Quantile(v), &OutputHead::Quantile { n_actions, n_quantiles }) => {
                let taus = quantile_taus(n_quantiles);
                tape.value(v)
                    .data()
                    .chunks(n_actions * n_quantiles)
                    .map(|b| {
                        ModelOutput::ActionValue(ActionValue::Quantile(QuantileActionValue {
                            quantiles: b.chunks(n_quantiles).map(<[T]>::to_vec).collect(),
                            taus: taus.clone(),
                        }))
                    })
                    .collect()
            }
            (HeadVars::Softmax(v), _) => rows(v)
                .into_iter()
                .map(|l| ModelOutput::Policy(PolicyDistribution::softmax(l)))
                .collect(),
            (HeadVars::Gaussian { mean, log_std }, _) => {
                let s = tape.value(log_std).data().to_vec();
                rows(mean)
                    .into_iter()
                    .map(|m| ModelOutput::Policy(PolicyDistribution::diag_gaussian(m, s.clone())))
                    .collect()
            }
            (HeadVars::SquashedGaussian { mean, log_std }, _) => rows(mean)
                .into_iter()
                .zip(rows(log_std))
                .map(|(m, s)| ModelOutput::Policy(PolicyDistribution::squashed_gaussian(m, s)))
                .collect(),
            (HeadVars::Deterministic(v), _) => rows(v)
                .into_iter()
                .map(|a| ModelOutput::Policy(PolicyDistribution::deterministic(a)))
                .collect(),
            _ => unreachable!("head variables always match the spec head"),
        }
    }
}
