use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::Scalar;

/// Per-action scalar Q-values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteActionValue<T> {
    pub q: Vec<T>,
}

/// Per-action return distributions over a fixed, evenly spaced support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalActionValue<T> {
    pub support: Vec<T>,
    /// `probs[a][j]` is the mass of action `a` on `support[j]`.
    pub probs: Vec<Vec<T>>,
}

/// Per-action quantile estimates at fixed midpoint fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileActionValue<T> {
    pub quantiles: Vec<Vec<T>>,
    pub taus: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionValue<T> {
    Discrete(DiscreteActionValue<T>),
    Categorical(CategoricalActionValue<T>),
    Quantile(QuantileActionValue<T>),
}

impl<T: Scalar> ActionValue<T> {
    /// Scalar Q-values; distributional variants are reduced to their means.
    pub fn q_values(&self) -> Vec<T> {
        match self {
            ActionValue::Discrete(d) => d.q.clone(),
            ActionValue::Categorical(c) => categorical_mean(c).q,
            ActionValue::Quantile(q) => q
                .quantiles
                .iter()
                .map(|row| row.iter().copied().sum::<T>() / T::of(row.len() as f64))
                .collect(),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            ActionValue::Discrete(d) => d.q.len(),
            ActionValue::Categorical(c) => c.probs.len(),
            ActionValue::Quantile(q) => q.quantiles.len(),
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    assert!(!values.is_empty(), "contract violation: argmax of an empty slice");
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_action<T: Scalar>(av: &ActionValue<T>) -> usize {
    argmax(&av.q_values())
}

/// `Q(s,a) = V(s) + A(s,a) - mean_a A(s,a)`.
pub fn dueling_combine<T: Scalar>(value: T, advantages: &[T]) -> DiscreteActionValue<T> {
    let mean = advantages.iter().copied().sum::<T>() / T::of(advantages.len() as f64);
    DiscreteActionValue {
        q: advantages.iter().map(|&a| value + a - mean).collect(),
    }
}

pub fn categorical_mean<T: Scalar>(av: &CategoricalActionValue<T>) -> DiscreteActionValue<T> {
    DiscreteActionValue {
        q: av
            .probs
            .iter()
            .map(|p| p.iter().zip(&av.support).map(|(&p, &z)| p * z).sum())
            .collect(),
    }
}

/// `n_atoms` evenly spaced atoms from `v_min` to `v_max` inclusive.
pub fn categorical_support<T: Scalar>(v_min: T, v_max: T, n_atoms: usize) -> Vec<T> {
    assert!(n_atoms >= 2 && v_max > v_min, "contract violation: degenerate support");
    let dz = (v_max - v_min) / T::of((n_atoms - 1) as f64);
    (0..n_atoms).map(|j| v_min + dz * T::of(j as f64)).collect()
}

/// Projects the Bellman-shifted distribution `r + discount * Z` back onto
/// `support`, splitting each shifted atom's mass between its two neighbours.
pub fn categorical_project<T: Scalar>(
    support: &[T],
    probs: &[T],
    reward: T,
    discount: T,
    terminal: bool,
) -> Vec<T> {
    assert_eq!(support.len(), probs.len(), "contract violation: support/probs length");
    let n = support.len();
    let (v_min, v_max) = (support[0], support[n - 1]);
    let dz = (v_max - v_min) / T::of((n - 1) as f64);
    let gamma = if terminal { T::zero() } else { discount };
    let last = T::of((n - 1) as f64);
    let mut out = vec![T::zero(); n];
    for (&z, &p) in support.iter().zip(probs) {
        let tz = (reward + gamma * z).max(v_min).min(v_max);
        let b = ((tz - v_min) / dz).max(T::zero()).min(last);
        let (lo, hi) = (b.floor(), b.ceil());
        let (l, u) = (lo.to_usize().unwrap(), hi.to_usize().unwrap());
        if l == u {
            out[l] += p;
        } else {
            out[l] += p * (hi - b);
            out[u] += p * (b - lo);
        }
    }
    out
}

/// Quantile fractions `(2i + 1) / (2K)`.
pub fn quantile_taus<T: Scalar>(k: usize) -> Vec<T> {
    (0..k).map(|i| T::of((2 * i + 1) as f64 / (2 * k) as f64)).collect()
}

/// Mean over all (prediction, target) pairs of
/// `|tau_i - 1{u < 0}| * huber_kappa(u) / kappa` with `u = target_j - predicted_i`.
pub fn quantile_huber_loss<T: Scalar>(predicted: &[T], targets: &[T], taus: &[T], kappa: T) -> T {
    assert_eq!(predicted.len(), taus.len(), "contract violation: one tau per prediction");
    let mut total = T::zero();
    for (&q, &tau) in predicted.iter().zip(taus) {
        for &y in targets {
            let u = y - q;
            let ind = if u < T::zero() { T::one() } else { T::zero() };
            total += (tau - ind).abs() * crate::autodiff::kernels::huber(u, kappa) / kappa;
        }
    }
    total / T::of((predicted.len() * targets.len()) as f64)
}

/// Tape form of [`quantile_huber_loss`] for a batch: `predicted` is `[B, K]`,
/// `targets` is `[B, K']`. Returns the per-row loss `[B]`.
pub fn quantile_huber_loss_tape<T: Scalar>(
    tape: &Tape<T>,
    predicted: Var,
    targets: &Tensor<T>,
    taus: &[T],
    kappa: T,
) -> Var {
    let ps = tape.shape(predicted);
    let (b, k) = (ps[0], ps[1]);
    let kt = targets.shape()[1];
    assert_eq!(taus.len(), k, "contract violation: one tau per prediction");
    assert_eq!(targets.shape()[0], b, "contract violation: target batch");
    let pred3 = tape.reshape(predicted, &[b, k, 1]);
    let tgt3 = tape.constant(targets.clone().reshaped(&[b, 1, kt]));
    let u = tape.sub(tgt3, pred3);
    let weights = {
        let uv = tape.value(u);
        let mut w = Vec::with_capacity(uv.len());
        for r in 0..b {
            for (i, &tau) in taus.iter().enumerate() {
                for j in 0..kt {
                    let neg = uv.data()[(r * k + i) * kt + j] < T::zero();
                    w.push(if neg { (tau - T::one()).abs() } else { tau });
                }
            }
        }
        Tensor::from_vec(&[b, k, kt], w)
    };
    let h = tape.scale(tape.huber(u, kappa), T::one() / kappa);
    let weighted = tape.mul(h, tape.constant(weights));
    let per_row = tape.sum_axis(tape.sum_axis(weighted, 2, false), 1, false);
    tape.scale(per_row, T::one() / T::of((k * kt) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn dueling_examples() {
        assert_eq!(dueling_combine(2.0, &[1.0, 2.0, 3.0]).q, vec![1.0, 2.0, 3.0]);
        assert_eq!(dueling_combine(1.5, &[4.0, 4.0]).q, vec![1.5, 1.5]);
        assert_eq!(dueling_combine(0.0, &[0.5, -0.5]).q, vec![0.5, -0.5]);
    }

    #[test]
    fn categorical_mean_examples() {
        let support: Vec<f64> = vec![0.0, 1.0, 2.0];
        let point = CategoricalActionValue {
            support: support.clone(),
            probs: vec![vec![0.0, 0.0, 1.0]],
        };
        assert_eq!(categorical_mean(&point).q, vec![2.0]);
        let uniform = CategoricalActionValue {
            support: support.clone(),
            probs: vec![vec![1.0 / 3.0; 3]],
        };
        assert!((categorical_mean(&uniform).q[0] - 1.0).abs() < 1e-15);
        let mixed = CategoricalActionValue {
            support,
            probs: vec![vec![0.2, 0.5, 0.3]],
        };
        // 0*0.2 + 1*0.5 + 2*0.3
        assert!((categorical_mean(&mixed).q[0] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn projection_examples() {
        let support = [0.0, 1.0, 2.0];
        // atoms shift to 0.5, 1.5, 2.5 -> 2; each half-way atom splits evenly
        let expected = [0.2 * 0.5, 0.2 * 0.5 + 0.5 * 0.5, 0.5 * 0.5 + 0.3];
        let got = categorical_project(&support, &[0.2, 0.5, 0.3], 0.5, 1.0, false);
        assert!(close(&got, &expected, 1e-12), "{got:?}");
        assert!(close(&got, &[0.1, 0.35, 0.55], 1e-12));

        let got = categorical_project(&support, &[0.2, 0.5, 0.3], 1.0, 0.99, true);
        assert_eq!(got, vec![0.0, 1.0, 0.0]);

        let got = categorical_project(&support, &[0.2, 0.5, 0.3], 0.0, 1.0, false);
        assert_eq!(got, vec![0.2, 0.5, 0.3]);
    }

    #[test]
    fn greedy_examples() {
        let d = |q: Vec<f64>| ActionValue::Discrete(DiscreteActionValue { q });
        assert_eq!(greedy_action(&d(vec![1.0, 5.0, 3.0])), 1);
        assert_eq!(greedy_action(&d(vec![2.0, 2.0])), 0);
        let c = ActionValue::Categorical(CategoricalActionValue {
            support: vec![0.0, 1.0, 2.0],
            probs: vec![vec![0.2, 0.5, 0.3], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]],
        });
        assert_eq!(greedy_action(&c), 1);
    }

    #[test]
    fn quantile_loss_examples() {
        let taus = quantile_taus::<f64>(3);
        assert!(close(&taus, &[1.0 / 6.0, 0.5, 5.0 / 6.0], 1e-15));
        let p = [0.3, -1.0, 2.0];
        assert!(quantile_huber_loss(&p, &p[..1], &taus, 1.0) >= 0.0);
        assert_eq!(quantile_huber_loss(&[1.5], &[1.5, 1.5], &[0.5], 1.0), 0.0);
        for u in [2.0, -2.0] {
            let l: f64 = quantile_huber_loss(&[0.0], &[u], &[0.5], 1e-9);
            assert!((l - 1.0).abs() < 1e-6, "{l}");
        }
    }

    fn brute_force_quantile(p: &[f64], y: &[f64], taus: &[f64], kappa: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..p.len() {
            for j in 0..y.len() {
                let u = y[j] - p[i];
                let h = if u.abs() <= kappa {
                    0.5 * u * u
                } else {
                    kappa * (u.abs() - 0.5 * kappa)
                };
                let w = if u < 0.0 { (taus[i] - 1.0).abs() } else { taus[i] };
                s += w * h / kappa;
            }
        }
        s / (p.len() * y.len()) as f64
    }

    #[test]
    fn quantile_loss_matches_brute_force_and_tape() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let k = rng.random_range(1..6);
            let kt = rng.random_range(1..6);
            let kappa = rng.random_range(0.1..2.0);
            let p: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..kt).map(|_| rng.random_range(-3.0..3.0)).collect();
            let taus = quantile_taus(k);
            let want = brute_force_quantile(&p, &y, &taus, kappa);
            let got = quantile_huber_loss(&p, &y, &taus, kappa);
            assert!((want - got).abs() < 1e-12);

            let t = Tape::new();
            let pv = t.leaf(Tensor::from_vec(&[1, k], p.clone()));
            let l = quantile_huber_loss_tape(&t, pv, &Tensor::from_vec(&[1, kt], y.clone()), &taus, kappa);
            assert!((t.value(l).data()[0] - want).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn projection_conserves_mass(
            raw in prop::collection::vec(0.0f64..1.0, 2..30),
            r in -20.0f64..20.0,
            gamma in 0.0f64..1.0,
            terminal in any::<bool>(),
            v_max in 0.5f64..15.0,
        ) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
            let support = categorical_support(-v_max, v_max, probs.len());
            let out = categorical_project(&support, &probs, r, gamma, terminal);
            prop_assert!(out.iter().all(|&m| m >= 0.0));
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn projection_preserves_mean_in_range(
            raw in prop::collection::vec(0.0f64..1.0, 3..30),
            frac in 0.0f64..1.0,
            gamma in 0.0f64..1.0,
        ) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
            let support = categorical_support(-10.0, 10.0, probs.len());
            // keep r + gamma * z inside [-10, 10] for every atom
            let room = 10.0 * (1.0 - gamma);
            let r = -room + 2.0 * room * frac;
            let out = categorical_project(&support, &probs, r, gamma, false);
            let mean = |p: &[f64]| p.iter().zip(&support).map(|(p, z)| p * z).sum::<f64>();
            prop_assert!((mean(&out) - (r + gamma * mean(&probs))).abs() < 1e-9);
        }

        #[test]
        fn dueling_preserves_advantage_argmax(
            v in -10.0f64..10.0,
            adv in prop::collection::vec(-10.0f64..10.0, 1..12),
        ) {
            let q = dueling_combine(v, &adv).q;
            prop_assert_eq!(argmax(&q), argmax(&adv));
        }
    }
}
