use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sum_tree::SumTree;
use super::Transition;

/// Fixed-capacity FIFO storage shared by both buffer kinds.
#[derive(Clone, Debug, PartialEq)]
struct Ring {
    capacity: usize,
    items: Vec<Transition>,
    /// Insertion number of the item in each slot.
    ids: Vec<u64>,
    next_id: u64,
}

impl Ring {
    fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "contract violation: replay capacity must be positive");
        Self {
            capacity,
            items: Vec::new(),
            ids: Vec::new(),
            next_id: 0,
        }
    }

    /// Stores `t`, evicting the oldest item when full. Returns its slot.
    fn push(&mut self, t: Transition) -> usize {
        let slot = (self.next_id % self.capacity as u64) as usize;
        if self.items.len() < self.capacity {
            self.items.push(t);
            self.ids.push(self.next_id);
        } else {
            self.items[slot] = t;
            self.ids[slot] = self.next_id;
        }
        self.next_id += 1;
        slot
    }

    /// Items from oldest to newest.
    fn iter_fifo(&self) -> impl Iterator<Item = (usize, &Transition)> {
        let n = self.items.len();
        let start = if n < self.capacity { 0 } else { (self.next_id % self.capacity as u64) as usize };
        (0..n).map(move |k| {
            let slot = (start + k) % n;
            (slot, &self.items[slot])
        })
    }
}

/// Uniform experience replay with FIFO eviction.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    ring: Ring,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { ring: Ring::new(capacity) }
    }

    pub fn capacity(&self) -> usize {
        self.ring.capacity
    }

    pub fn len(&self) -> usize {
        self.ring.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.items.is_empty()
    }

    pub fn append(&mut self, t: Transition) {
        self.ring.push(t);
    }

    /// `n` i.i.d. draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Transition> {
        assert!(!self.is_empty(), "contract violation: sampling an empty replay buffer");
        (0..n)
            .map(|_| self.ring.items[rng.random_range(0..self.len())].clone())
            .collect()
    }

    /// Contents from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.ring.iter_fifo().map(|(_, t)| t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrioritizedConfig {
    /// Priority exponent.
    pub alpha: f64,
    /// Initial importance-sampling exponent.
    pub beta0: f64,
    /// Steps over which beta anneals linearly to 1.
    pub beta_steps: u64,
    /// Added to `|td error|` so no priority is zero.
    pub eps: f64,
}

impl Default for PrioritizedConfig {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta0: 0.4,
            beta_steps: 100_000,
            eps: 0.01,
        }
    }
}

impl PrioritizedConfig {
    pub fn beta_at(&self, step: u64) -> f64 {
        if self.beta_steps == 0 {
            return 1.0;
        }
        let frac = (step as f64 / self.beta_steps as f64).min(1.0);
        self.beta0 + (1.0 - self.beta0) * frac
    }
}

/// Handle to a sampled item; goes stale once its slot is overwritten.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorityIndex {
    pub slot: usize,
    pub id: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrioritizedBatch {
    pub transitions: Vec<Transition>,
    pub indices: Vec<PriorityIndex>,
    /// Importance weights `(P_min / P_i)^beta`, at most 1.
    pub weights: Vec<f64>,
}

/// Proportional prioritized replay over a sum tree.
#[derive(Clone, Debug, PartialEq)]
pub struct PrioritizedBuffer {
    ring: Ring,
    tree: SumTree<f64>,
    config: PrioritizedConfig,
    max_priority: f64,
    step: u64,
    stale_updates: u64,
}

impl PrioritizedBuffer {
    pub fn new(capacity: usize, config: PrioritizedConfig) -> Self {
        Self {
            ring: Ring::new(capacity),
            tree: SumTree::new(capacity),
            config,
            max_priority: 1.0,
            step: 0,
            stale_updates: 0,
        }
    }

    pub fn config(&self) -> &PrioritizedConfig {
        &self.config
    }

    pub fn capacity(&self) -> usize {
        self.ring.capacity
    }

    pub fn len(&self) -> usize {
        self.ring.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.items.is_empty()
    }

    /// Training step used for the beta schedule.
    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn beta(&self) -> f64 {
        self.config.beta_at(self.step)
    }

    /// Largest priority ever assigned (1 before any update).
    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    /// Number of priority updates skipped because their slot was reused.
    pub fn stale_updates(&self) -> u64 {
        self.stale_updates
    }

    pub fn tree(&self) -> &SumTree<f64> {
        &self.tree
    }

    /// Priority (before the alpha exponent) of the item in `slot`.
    pub fn priority(&self, slot: usize) -> f64 {
        let w = self.tree.get(slot);
        if self.config.alpha == 0.0 {
            w
        } else {
            w.powf(1.0 / self.config.alpha)
        }
    }

    pub fn append(&mut self, t: Transition) {
        let p = self.max_priority;
        self.append_with_priority(t, p);
    }

    pub(crate) fn append_with_priority(&mut self, t: Transition, priority: f64) {
        let slot = self.ring.push(t);
        self.tree.set(slot, priority.powf(self.config.alpha));
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> PrioritizedBatch {
        assert!(!self.is_empty(), "contract violation: sampling an empty replay buffer");
        let total = self.tree.total();
        let p_min = self.tree.min();
        let beta = self.beta();
        let mut batch = PrioritizedBatch {
            transitions: Vec::with_capacity(n),
            indices: Vec::with_capacity(n),
            weights: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * total;
            let slot = self.tree.find_prefix(u);
            batch.transitions.push(self.ring.items[slot].clone());
            batch.indices.push(PriorityIndex {
                slot,
                id: self.ring.ids[slot],
            });
            batch.weights.push((p_min / self.tree.get(slot)).powf(beta));
        }
        batch
    }

    /// Sets `p_i = |delta_i| + eps` for every still-live index.
    pub fn update_priorities(&mut self, indices: &[PriorityIndex], td_errors: &[f64]) {
        assert_eq!(indices.len(), td_errors.len(), "contract violation: one td error per index");
        for (idx, &delta) in indices.iter().zip(td_errors) {
            if idx.slot >= self.ring.ids.len() || self.ring.ids[idx.slot] != idx.id {
                self.stale_updates += 1;
                continue;
            }
            let p = delta.abs() + self.config.eps;
            self.max_priority = self.max_priority.max(p);
            self.tree.set(idx.slot, p.powf(self.config.alpha));
        }
    }

    /// Contents from oldest to newest with their priorities.
    pub fn iter_with_priority(&self) -> impl Iterator<Item = (&Transition, f64)> {
        self.ring.iter_fifo().map(|(slot, t)| (t, self.priority(slot)))
    }

    pub(crate) fn restore_counters(&mut self, max_priority: f64, step: u64) {
        self.max_priority = max_priority;
        self.step = step;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Action;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(tag: f64) -> Transition {
        Transition::new(vec![tag], Action::Discrete(0), tag, vec![tag + 1.0], false, false)
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(2);
        for x in [1.0, 2.0, 3.0] {
            b.append(tr(x));
        }
        let tags: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(tags, vec![2.0, 3.0]);
    }

    #[test]
    fn uniform_sampling() {
        let mut b = ReplayBuffer::new(4);
        b.append(tr(7.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(b.sample(5, &mut rng).iter().all(|t| t.reward == 7.0));
        b.append(tr(8.0));
        let s1 = b.sample(16, &mut ChaCha8Rng::seed_from_u64(3));
        let s2 = b.sample(16, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(s1, s2);
        let n = 1_000_000;
        let sevens = b.sample(n, &mut rng).iter().filter(|t| t.reward == 7.0).count();
        assert!((sevens as f64 / n as f64 - 0.5).abs() < 0.002);
    }

    #[test]
    fn max_seen_priority_rule() {
        let mut b = PrioritizedBuffer::new(4, PrioritizedConfig::default());
        b.append(tr(0.0));
        assert_eq!(b.priority(0), 1.0);
        let batch = b.sample(1, &mut ChaCha8Rng::seed_from_u64(0));
        b.update_priorities(&batch.indices, &[5.0 - b.config().eps]);
        b.append(tr(1.0));
        assert!((b.priority(1) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn update_rule_examples() {
        let cfg = PrioritizedConfig {
            alpha: 1.0,
            eps: 0.01,
            ..Default::default()
        };
        let mut b = PrioritizedBuffer::new(4, cfg);
        b.append(tr(0.0));
        b.append(tr(1.0));
        let idx = [PriorityIndex { slot: 0, id: 0 }, PriorityIndex { slot: 1, id: 1 }];
        b.update_priorities(&idx, &[0.0, -2.0]);
        assert_eq!(b.priority(0), 0.01);
        assert_eq!(b.priority(1), 2.01);
        assert!((b.tree().total() - 2.02).abs() < 1e-12);
    }

    fn two_item_buffer(alpha: f64, beta: f64) -> PrioritizedBuffer {
        let cfg = PrioritizedConfig {
            alpha,
            beta0: beta,
            beta_steps: 0,
            eps: 0.0,
        };
        let mut b = PrioritizedBuffer::new(2, cfg);
        b.append(tr(0.0));
        b.append(tr(1.0));
        let idx = [PriorityIndex { slot: 0, id: 0 }, PriorityIndex { slot: 1, id: 1 }];
        b.update_priorities(&idx, &[1.0, 3.0]);
        b
    }

    #[test]
    fn prioritized_frequencies_and_weights() {
        let b = two_item_buffer(1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 1_000_000;
        let batch = b.sample(n, &mut rng);
        let ones = batch.transitions.iter().filter(|t| t.reward == 1.0).count();
        let se = (0.75f64 * 0.25 / n as f64).sqrt();
        assert!((ones as f64 / n as f64 - 0.75).abs() < 3.0 * se);
        // raw weights (N P)^-beta = (2, 2/3), normalised by the max
        for (t, w) in batch.transitions.iter().zip(&batch.weights).take(100) {
            let want = if t.reward == 0.0 { 1.0 } else { 1.0 / 3.0 };
            assert!((w - want).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_zero_is_uniform() {
        let b = two_item_buffer(0.0, 1.0);
        let n = 200_000;
        let batch = b.sample(n, &mut ChaCha8Rng::seed_from_u64(2));
        let ones = batch.transitions.iter().filter(|t| t.reward == 1.0).count();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.005);
        assert!(batch.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn stale_indices_are_skipped_and_counted() {
        let mut b = PrioritizedBuffer::new(1, PrioritizedConfig::default());
        b.append(tr(0.0));
        let batch = b.sample(1, &mut ChaCha8Rng::seed_from_u64(0));
        b.append(tr(1.0));
        let before = b.priority(0);
        b.update_priorities(&batch.indices, &[9.0]);
        assert_eq!(b.stale_updates(), 1);
        assert_eq!(b.priority(0), before);
    }

    #[test]
    fn beta_anneals_linearly() {
        let cfg = PrioritizedConfig {
            beta0: 0.4,
            beta_steps: 100,
            ..Default::default()
        };
        assert!((cfg.beta_at(0) - 0.4).abs() < 1e-15);
        assert!((cfg.beta_at(50) - 0.7).abs() < 1e-12);
        assert_eq!(cfg.beta_at(100), 1.0);
        assert_eq!(cfg.beta_at(1000), 1.0);
    }

    #[test]
    fn capacity_and_fifo_order_hold_under_churn() {
        let mut b = PrioritizedBuffer::new(7, PrioritizedConfig::default());
        for i in 0..50 {
            b.append(tr(i as f64));
            assert!(b.len() <= 7);
            let tags: Vec<f64> = b.iter_with_priority().map(|(t, _)| t.reward).collect();
            let first = (i + 1usize).saturating_sub(7) as f64;
            let want: Vec<f64> = (0..tags.len()).map(|k| first + k as f64).collect();
            assert_eq!(tags, want);
        }
    }
}
