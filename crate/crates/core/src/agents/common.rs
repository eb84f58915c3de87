use rand::Rng;

use super::AgentError;
use crate::autodiff::{Adam, AdamConfig, OptimizerState, Var};
use crate::envs::{ActionSpace, EnvSpec};
use crate::models::{HeadVars, MlpSpec, NoiseMode};
use crate::replay::{PrioritizedBatch, PrioritizedBuffer, PrioritizedConfig, ReplayBuffer, Transition};
use crate::{Mlp, Tape, Tensor};

/// Maps `[-1, 1]` onto `[low, high]`.
pub fn from_unit_action(a: &[f64], low: &[f64], high: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(low.iter().zip(high))
        .map(|(&x, (&l, &h))| l + (x.clamp(-1.0, 1.0) + 1.0) * 0.5 * (h - l))
        .collect()
}

/// Maps `[low, high]` onto `[-1, 1]`.
pub fn to_unit_action(a: &[f64], low: &[f64], high: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(low.iter().zip(high))
        .map(|(&x, (&l, &h))| 2.0 * (x - l) / (h - l) - 1.0)
        .collect()
}

pub(crate) fn discrete_actions(spec: &EnvSpec, algo: &'static str) -> Result<usize, AgentError> {
    match spec.action_space {
        ActionSpace::Discrete { n } => Ok(n),
        _ => Err(AgentError::UnsupportedSpace { algo }),
    }
}

pub(crate) fn box_bounds(spec: &EnvSpec, algo: &'static str) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
    match &spec.action_space {
        ActionSpace::Box { low, high } => Ok((low.clone(), high.clone())),
        _ => Err(AgentError::UnsupportedSpace { algo }),
    }
}

pub(crate) fn batch_tensor<R: AsRef<[f64]>>(rows: &[R]) -> Tensor {
    Tensor::from_rows(rows)
}

pub(crate) fn var_rows(tape: &Tape, v: Var) -> Vec<Vec<f64>> {
    let t = tape.value(v);
    let w = *t.shape().last().unwrap();
    t.data().chunks(w).map(<[f64]>::to_vec).collect()
}

pub(crate) fn check_batch(n: usize, lens: &[usize]) {
    assert!(
        lens.iter().all(|&l| l == n),
        "contract violation: batch arguments must have one entry per environment"
    );
}

/// A network together with its optimizer.
#[derive(Clone, Debug)]
pub(crate) struct Net {
    pub model: Mlp,
    pub opt: Adam<f64>,
}

impl Net {
    pub fn new<R: Rng + ?Sized>(
        spec: MlpSpec,
        adam: AdamConfig,
        max_grad_norm: Option<f64>,
        rng: &mut R,
    ) -> Result<Self, AgentError> {
        let model = Mlp::new(spec, rng)?;
        let opt = Adam::new(adam, model.params()).with_max_grad_norm(max_grad_norm);
        Ok(Self { model, opt })
    }

    pub fn step(&mut self, grads: Vec<Tensor>) {
        self.opt
            .step(self.model.params_mut(), grads)
            .expect("gradients match their parameters");
    }

    pub fn optimizer_state(&self) -> OptimizerState<f64> {
        self.opt.state.clone()
    }
}

/// Gradient of a scalar read off the network head with respect to one input row.
pub(crate) fn input_gradient(model: &Mlp, input: &[f64], f: impl FnOnce(&Tape, HeadVars) -> Var) -> (f64, Vec<f64>) {
    let tape = Tape::new();
    let bound = tape.bind_frozen(model.params());
    let x = tape.leaf(Tensor::from_vec(&[1, input.len()], input.to_vec()));
    let head = model.forward(&tape, &bound, x, NoiseMode::Mean);
    let out = f(&tape, head);
    let value = tape.item(out);
    let grads = tape.backward(out).expect("scalar saliency target");
    let g = grads.wrt(x).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; input.len()]);
    (value, g)
}

/// Uniform or prioritized storage behind one interface.
#[derive(Clone, Debug)]
pub(crate) enum Replay {
    Uniform(ReplayBuffer),
    Prioritized(PrioritizedBuffer),
}

impl Replay {
    pub fn new(capacity: usize, prioritized: Option<PrioritizedConfig>) -> Self {
        match prioritized {
            Some(cfg) => Replay::Prioritized(PrioritizedBuffer::new(capacity, cfg)),
            None => Replay::Uniform(ReplayBuffer::new(capacity)),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Replay::Uniform(b) => b.len(),
            Replay::Prioritized(b) => b.len(),
        }
    }

    pub fn append(&mut self, t: Transition) {
        match self {
            Replay::Uniform(b) => b.append(t),
            Replay::Prioritized(b) => b.append(t),
        }
    }

    /// Samples `n` items; uniform buffers report unit weights and no indices.
    pub fn sample<R: Rng + ?Sized>(&mut self, n: usize, step: u64, rng: &mut R) -> PrioritizedBatch {
        match self {
            Replay::Uniform(b) => PrioritizedBatch {
                transitions: b.sample(n, rng),
                indices: Vec::new(),
                weights: vec![1.0; n],
            },
            Replay::Prioritized(b) => {
                b.set_step(step);
                b.sample(n, rng)
            }
        }
    }

    pub fn update_priorities(&mut self, batch: &PrioritizedBatch, errors: &[f64]) {
        if let Replay::Prioritized(b) = self {
            b.update_priorities(&batch.indices, errors);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Replay::Uniform(b) => b.save(&mut out),
            Replay::Prioritized(b) => b.save(&mut out),
        }
        .expect("writing to memory");
        out
    }

    pub fn restore(&mut self, bytes: &[u8]) -> Result<(), AgentError> {
        let mut r = bytes;
        *self = match self {
            Replay::Uniform(_) => Replay::Uniform(ReplayBuffer::load(&mut r)?),
            Replay::Prioritized(b) => Replay::Prioritized(PrioritizedBuffer::load(&mut r, *b.config())?),
        };
        Ok(())
    }
}
