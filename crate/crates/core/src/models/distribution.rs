use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::values::argmax;
use super::ModelError;
use crate::autodiff::kernels::{softmax_rows, softplus};
use crate::autodiff::{Tape, Tensor, Var};
use crate::{Action, Scalar};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Action distribution produced by a policy network for one state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyDistribution<T> {
    Softmax { logits: Vec<T> },
    DiagGaussian { mean: Vec<T>, log_std: Vec<T> },
    /// `a = tanh(u)` with `u ~ N(mean, exp(log_std)^2)`.
    SquashedGaussian { mean: Vec<T>, log_std: Vec<T> },
    Deterministic { action: Vec<T> },
}

fn clamp_log_std<T: Scalar>(log_std: Vec<T>) -> Vec<T> {
    log_std
        .into_iter()
        .map(|s| s.max(T::of(LOG_STD_MIN)).min(T::of(LOG_STD_MAX)))
        .collect()
}

/// `log(1 - tanh(u)^2)` without cancellation near `|u| -> inf`.
fn log_one_minus_tanh_sq<T: Scalar>(u: T) -> T {
    T::of(2.0) * (T::of(std::f64::consts::LN_2) - u - softplus(T::of(-2.0) * u))
}

fn normal_log_density<T: Scalar>(x: &[T], mean: &[T], log_std: &[T]) -> T {
    x.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&x, &m), &s)| {
            let z = (x - m) / s.exp();
            T::of(-0.5) * z * z - s - T::of(HALF_LN_2PI)
        })
        .sum()
}

impl<T: Scalar> PolicyDistribution<T> {
    pub fn softmax(logits: Vec<T>) -> Self {
        Self::Softmax { logits }
    }

    pub fn diag_gaussian(mean: Vec<T>, log_std: Vec<T>) -> Self {
        assert_eq!(mean.len(), log_std.len(), "contract violation: gaussian dims");
        Self::DiagGaussian {
            mean,
            log_std: clamp_log_std(log_std),
        }
    }

    pub fn squashed_gaussian(mean: Vec<T>, log_std: Vec<T>) -> Self {
        assert_eq!(mean.len(), log_std.len(), "contract violation: gaussian dims");
        Self::SquashedGaussian {
            mean,
            log_std: clamp_log_std(log_std),
        }
    }

    pub fn deterministic(action: Vec<T>) -> Self {
        Self::Deterministic { action }
    }

    /// Number of discrete actions, or the continuous action dimension.
    pub fn dim(&self) -> usize {
        match self {
            Self::Softmax { logits } => logits.len(),
            Self::DiagGaussian { mean, .. } | Self::SquashedGaussian { mean, .. } => mean.len(),
            Self::Deterministic { action } => action.len(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Self::Softmax { .. })
    }

    pub fn probs(&self) -> Option<Vec<T>> {
        match self {
            Self::Softmax { logits } => Some(softmax_rows(logits, logits.len())),
            _ => None,
        }
    }

    /// The most likely action (mean for Gaussians, `tanh(mean)` when squashed).
    pub fn mode(&self) -> Action {
        let cont = |v: &[T]| Action::Continuous(v.iter().map(|x| x.to_f64_lossy()).collect());
        match self {
            Self::Softmax { logits } => Action::Discrete(argmax(logits)),
            Self::DiagGaussian { mean, .. } => cont(mean),
            Self::SquashedGaussian { mean, .. } => {
                cont(&mean.iter().map(|m| m.tanh()).collect::<Vec<_>>())
            }
            Self::Deterministic { action } => cont(action),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        match self {
            Self::Softmax { .. } => {
                let probs = self.probs().unwrap();
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p.to_f64_lossy();
                    if u < acc {
                        return Action::Discrete(i);
                    }
                }
                Action::Discrete(probs.len() - 1)
            }
            Self::DiagGaussian { mean, log_std } => Action::Continuous(
                mean.iter()
                    .zip(log_std)
                    .map(|(m, s)| {
                        let xi: f64 = StandardNormal.sample(rng);
                        m.to_f64_lossy() + s.to_f64_lossy().exp() * xi
                    })
                    .collect(),
            ),
            Self::SquashedGaussian { .. } => self.sample_with_log_prob(rng).unwrap().0,
            Self::Deterministic { action } => {
                Action::Continuous(action.iter().map(|x| x.to_f64_lossy()).collect())
            }
        }
    }

    /// Draws an action together with its log-density. For the squashed
    /// Gaussian the density is evaluated at the pre-squash sample, which
    /// stays finite even when `tanh` rounds to `±1`.
    pub fn sample_with_log_prob<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Action, T), ModelError> {
        match self {
            Self::SquashedGaussian { mean, log_std } => {
                let u: Vec<T> = mean
                    .iter()
                    .zip(log_std)
                    .map(|(&m, &s)| {
                        let xi: f64 = StandardNormal.sample(rng);
                        m + s.exp() * T::of(xi)
                    })
                    .collect();
                let lp = normal_log_density(&u, mean, log_std)
                    - u.iter().map(|&x| log_one_minus_tanh_sq(x)).sum::<T>();
                let a = u.iter().map(|x| x.tanh().to_f64_lossy()).collect();
                Ok((Action::Continuous(a), lp))
            }
            _ => {
                let a = self.sample(rng);
                let lp = self.log_prob(&a)?;
                Ok((a, lp))
            }
        }
    }

    pub fn log_prob(&self, action: &Action) -> Result<T, ModelError> {
        match (self, action) {
            (Self::Softmax { logits }, Action::Discrete(a)) => {
                if *a >= logits.len() {
                    return Err(ModelError::ActionOutOfRange {
                        action: *a,
                        n: logits.len(),
                    });
                }
                let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<T>().ln();
                Ok(logits[*a] - lse)
            }
            (Self::DiagGaussian { mean, log_std }, Action::Continuous(a)) => {
                self.check_dim(a.len())?;
                let a: Vec<T> = a.iter().map(|&x| T::of(x)).collect();
                Ok(normal_log_density(&a, mean, log_std))
            }
            (Self::SquashedGaussian { mean, log_std }, Action::Continuous(a)) => {
                self.check_dim(a.len())?;
                let lim = T::one() - T::epsilon();
                let u: Vec<T> = a.iter().map(|&x| T::of(x).max(-lim).min(lim).atanh()).collect();
                Ok(normal_log_density(&u, mean, log_std)
                    - u.iter().map(|&x| log_one_minus_tanh_sq(x)).sum::<T>())
            }
            (Self::Deterministic { .. }, _) => Err(ModelError::Unsupported("log_prob of a deterministic policy")),
            _ => Err(ModelError::ActionKind),
        }
    }

    pub fn entropy(&self) -> Result<T, ModelError> {
        match self {
            Self::Softmax { .. } => {
                let p = self.probs().unwrap();
                Ok(-p
                    .iter()
                    .filter(|&&p| p > T::zero())
                    .map(|&p| p * p.ln())
                    .sum::<T>())
            }
            Self::DiagGaussian { log_std, .. } => {
                Ok(log_std.iter().map(|&s| T::of(0.5 + HALF_LN_2PI) + s).sum())
            }
            Self::SquashedGaussian { .. } => Err(ModelError::Unsupported(
                "closed-form entropy of a squashed Gaussian",
            )),
            Self::Deterministic { .. } => Err(ModelError::Unsupported("entropy of a deterministic policy")),
        }
    }

    fn check_dim(&self, found: usize) -> Result<(), ModelError> {
        if found == self.dim() {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch {
                expected: self.dim(),
                found,
            })
        }
    }
}

/// `log pi(a_r | s_r)` for each row of `logits` `[B, n]`.
pub fn softmax_log_prob<T: Scalar>(tape: &Tape<T>, logits: Var, actions: &[usize]) -> Var {
    tape.gather_last(tape.log_softmax(logits), actions)
}

/// Row-wise entropy `[B]` of softmax policies with logits `[B, n]`.
pub fn softmax_entropy<T: Scalar>(tape: &Tape<T>, logits: Var) -> Var {
    let logp = tape.log_softmax(logits);
    let p = tape.exp(logp);
    let last = tape.shape(logits).len() - 1;
    tape.neg(tape.sum_axis(tape.mul(p, logp), last, false))
}

/// Row-wise diagonal Gaussian log-density `[B]` of constant `actions` `[B, d]`.
/// `log_std` may be `[B, d]` or a state-independent `[d]`.
pub fn gaussian_log_prob<T: Scalar>(tape: &Tape<T>, mean: Var, log_std: Var, actions: &Tensor<T>) -> Var {
    let a = tape.constant(actions.clone());
    let z = tape.div(tape.sub(a, mean), tape.exp(log_std));
    let per_dim = tape.sub(tape.scale(tape.square(z), T::of(-0.5)), log_std);
    let per_dim = tape.add_scalar(per_dim, T::of(-HALF_LN_2PI));
    tape.sum_axis(per_dim, 1, false)
}

/// Entropy of a diagonal Gaussian; `[B]` for per-state `log_std`, a scalar
/// for a state-independent one.
pub fn gaussian_entropy<T: Scalar>(tape: &Tape<T>, log_std: Var) -> Var {
    let shape = tape.shape(log_std);
    let d = *shape.last().unwrap();
    let s = tape.sum_axis(log_std, shape.len() - 1, false);
    tape.add_scalar(s, T::of(d as f64 * (0.5 + HALF_LN_2PI)))
}

/// Reparameterized squashed-Gaussian sample `tanh(mean + exp(log_std) * noise)`
/// with its log-density `[B]`; gradients reach `mean` and `log_std`.
pub fn squashed_rsample<T: Scalar>(tape: &Tape<T>, mean: Var, log_std: Var, noise: &Tensor<T>) -> (Var, Var) {
    let xi = tape.constant(noise.clone());
    let u = tape.add(mean, tape.mul(tape.exp(log_std), xi));
    let action = tape.tanh(u);
    let gauss = tape.sub(tape.constant(noise.map(|x| T::of(-0.5) * x * x)), log_std);
    let gauss = tape.add_scalar(gauss, T::of(-HALF_LN_2PI));
    // log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))
    let corr = tape.add_scalar(tape.neg(tape.add(u, tape.softplus(tape.scale(u, T::of(-2.0))))), T::of(std::f64::consts::LN_2));
    let corr = tape.scale(corr, T::of(2.0));
    let logp = tape.sum_axis(tape.sub(gauss, corr), 1, false);
    (action, logp)
}
