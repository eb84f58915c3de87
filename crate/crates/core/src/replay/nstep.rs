use std::collections::VecDeque;

use super::Transition;

/// Compresses raw one-step transitions of a single environment into
/// `n`-step transitions.
///
/// A transition is emitted once `n` later steps are known; when the episode
/// terminates or times out, every pending shorter tail is emitted as well.
#[derive(Clone, Debug, PartialEq)]
pub struct NStepAssembler {
    n: usize,
    gamma: f64,
    queue: VecDeque<Transition>,
}

impl NStepAssembler {
    pub fn new(n: usize, gamma: f64) -> Self {
        assert!(n >= 1, "contract violation: n-step length must be at least 1");
        Self {
            n,
            gamma,
            queue: VecDeque::with_capacity(n),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn push(&mut self, step: Transition) -> Vec<Transition> {
        debug_assert_eq!(step.n_used, 1, "raw steps are single transitions");
        let episode_over = step.is_terminal || step.is_timeout;
        self.queue.push_back(step);
        if episode_over {
            return self.flush();
        }
        if self.queue.len() == self.n {
            let t = self.compress();
            self.queue.pop_front();
            vec![t]
        } else {
            Vec::new()
        }
    }

    /// Emits every pending tail, e.g. when an episode is cut short
    /// externally. The emitted transitions keep the last step's flags.
    pub fn flush(&mut self) -> Vec<Transition> {
        let mut out = Vec::with_capacity(self.queue.len());
        while !self.queue.is_empty() {
            out.push(self.compress());
            self.queue.pop_front();
        }
        out
    }

    pub fn clear(&mut self) {
        self.queue.clear();
    }

    fn compress(&self) -> Transition {
        let first = self.queue.front().unwrap();
        let last = self.queue.back().unwrap();
        let mut reward = 0.0;
        let mut discount = 1.0;
        for t in &self.queue {
            reward += discount * t.reward;
            discount *= self.gamma;
        }
        Transition {
            obs: first.obs.clone(),
            action: first.action.clone(),
            reward,
            next_obs: last.next_obs.clone(),
            is_terminal: last.is_terminal,
            is_timeout: last.is_timeout,
            n_used: self.queue.len() as u32,
            next_action: last.next_action.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Action;

    fn step(i: usize, r: f64, terminal: bool, timeout: bool) -> Transition {
        Transition::new(vec![i as f64], Action::Discrete(i), r, vec![(i + 1) as f64], terminal, timeout)
    }

    #[test]
    fn one_step_is_passthrough() {
        let mut a = NStepAssembler::new(1, 0.9);
        let t = step(0, 2.0, false, false);
        assert_eq!(a.push(t.clone()), vec![t]);
    }

    #[test]
    fn three_step_reward() {
        let mut a = NStepAssembler::new(3, 0.5);
        assert!(a.push(step(0, 1.0, false, false)).is_empty());
        assert!(a.push(step(1, 2.0, false, false)).is_empty());
        let out = a.push(step(2, 3.0, false, false));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].reward, 2.75);
        assert_eq!(out[0].n_used, 3);
        assert_eq!(out[0].obs, vec![0.0]);
        assert_eq!(out[0].next_obs, vec![3.0]);
    }

    #[test]
    fn terminal_truncates() {
        let mut a = NStepAssembler::new(3, 0.5);
        assert!(a.push(step(0, 1.0, false, false)).is_empty());
        let out = a.push(step(1, 2.0, true, false));
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].reward, 2.0);
        assert!(out[0].is_terminal);
        assert_eq!(out[0].n_used, 2);
        assert_eq!(out[1].reward, 2.0);
        assert_eq!(out[1].n_used, 1);
        assert_eq!(a.pending(), 0);
    }

    fn brute_force(episode: &[Transition], n: usize, gamma: f64) -> Vec<Transition> {
        let len = episode.len();
        let ends = episode.last().map_or(false, |t| t.is_terminal || t.is_timeout);
        let mut out = Vec::new();
        for s in 0..len {
            let m = n.min(len - s);
            if m < n && !ends {
                continue;
            }
            let (mut reward, mut discount) = (0.0, 1.0);
            for k in 0..m {
                reward += discount * episode[s + k].reward;
                discount *= gamma;
            }
            let last = &episode[s + m - 1];
            out.push(Transition {
                obs: episode[s].obs.clone(),
                action: episode[s].action.clone(),
                reward,
                next_obs: last.next_obs.clone(),
                is_terminal: last.is_terminal,
                is_timeout: last.is_timeout,
                n_used: m as u32,
                next_action: None,
            });
        }
        out
    }

    #[test]
    fn matches_brute_force_on_random_episodes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.random_range(1..6);
            let gamma = rng.random_range(0.0..1.0);
            let len = rng.random_range(1..30);
            let end = rng.random_range(0..3);
            let episode: Vec<Transition> = (0..len)
                .map(|i| {
                    let last = i + 1 == len;
                    let r = rng.random_range(-5.0..5.0);
                    step(i, r, last && end == 1, last && end == 2)
                })
                .collect();
            let mut a = NStepAssembler::new(n, gamma);
            let got: Vec<Transition> = episode.iter().flat_map(|t| a.push(t.clone())).collect();
            assert_eq!(got, brute_force(&episode, n, gamma));
        }
    }
}
