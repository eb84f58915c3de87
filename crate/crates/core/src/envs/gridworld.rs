use serde_json::{json, Value};

use super::{ActionSpace, Env, EnvError, EnvSpec, StepResult};
use crate::Action;

pub const GRID_SIZE: i32 = 5;
pub const GRID_START: (i32, i32) = (0, 0);
pub const GRID_GOAL: (i32, i32) = (4, 4);
pub const GRID_WALLS: [(i32, i32); 3] = [(1, 1), (2, 3), (3, 1)];
const MAX_STEPS: u32 = 100;

/// Moves on the grid. `Up` decreases `y`, `Right` increases `x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridAction {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl GridAction {
    pub const ALL: [GridAction; 4] = [GridAction::Up, GridAction::Down, GridAction::Left, GridAction::Right];

    fn delta(self) -> (i32, i32) {
        match self {
            GridAction::Up => (0, -1),
            GridAction::Down => (0, 1),
            GridAction::Left => (-1, 0),
            GridAction::Right => (1, 0),
        }
    }
}

fn is_free(p: (i32, i32)) -> bool {
    (0..GRID_SIZE).contains(&p.0) && (0..GRID_SIZE).contains(&p.1) && !GRID_WALLS.contains(&p)
}

/// Deterministic transition: blocked moves stay in place.
pub fn grid_move(p: (i32, i32), a: GridAction) -> (i32, i32) {
    let (dx, dy) = a.delta();
    let next = (p.0 + dx, p.1 + dy);
    if is_free(next) {
        next
    } else {
        p
    }
}

/// 5x5 maze with three walls, reward 1 on reaching the far corner.
/// Observation is `(x, y)`.
#[derive(Clone, Debug)]
pub struct GridWorld {
    spec: EnvSpec,
    pos: (i32, i32),
    steps: u32,
    done: bool,
}

impl Default for GridWorld {
    fn default() -> Self {
        Self::new()
    }
}

impl GridWorld {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                id: "gridworld5".into(),
                obs_dim: 2,
                action_space: ActionSpace::Discrete { n: 4 },
                max_episode_steps: MAX_STEPS,
                reward_range: (0.0, 1.0),
            },
            pos: GRID_START,
            steps: 0,
            done: false,
        }
    }

    pub fn position(&self) -> (i32, i32) {
        self.pos
    }

    /// Places the agent on a free cell, starting a fresh episode count.
    pub fn set_position(&mut self, p: (i32, i32)) {
        assert!(is_free(p), "contract violation: {p:?} is not a free cell");
        self.pos = p;
        self.steps = 0;
        self.done = false;
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.pos.0 as f64, self.pos.1 as f64]
    }
}

impl Env for GridWorld {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: Option<u64>) -> Vec<f64> {
        self.set_position(GRID_START);
        self.obs()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        self.spec.action_space.check(action)?;
        let a = GridAction::ALL[action.as_discrete().expect("checked")];
        self.pos = grid_move(self.pos, a);
        self.steps += 1;
        let at_goal = self.pos == GRID_GOAL;
        let timeout = !at_goal && self.steps >= MAX_STEPS;
        self.done = at_goal || timeout;
        Ok(StepResult {
            obs: self.obs(),
            reward: if at_goal { 1.0 } else { 0.0 },
            done: self.done,
            timeout,
            info: Default::default(),
        })
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn render(&self) -> Value {
        json!({
            "kind": "gridworld",
            "size": GRID_SIZE,
            "agent": [self.pos.0, self.pos.1],
            "goal": [GRID_GOAL.0, GRID_GOAL.1],
            "walls": GRID_WALLS.iter().map(|w| [w.0, w.1]).collect::<Vec<_>>(),
            "steps": self.steps,
            "done": self.done,
        })
    }

    fn box_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}

/// Result of value iteration on the grid. Indexed `[y][x]`; walls hold 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueIteration {
    pub values: [[f64; 5]; 5],
    pub q: [[[f64; 4]; 5]; 5],
    pub sweeps: usize,
}

impl ValueIteration {
    pub fn value(&self, p: (i32, i32)) -> f64 {
        self.values[p.1 as usize][p.0 as usize]
    }

    /// Actions within `tol` of the best Q-value at `p`.
    pub fn optimal_actions(&self, p: (i32, i32), tol: f64) -> Vec<usize> {
        let q = &self.q[p.1 as usize][p.0 as usize];
        let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (0..4).filter(|&a| q[a] >= best - tol).collect()
    }

    /// Free, non-goal cells: the states where a policy makes a choice.
    pub fn decision_states() -> Vec<(i32, i32)> {
        (0..GRID_SIZE)
            .flat_map(|y| (0..GRID_SIZE).map(move |x| (x, y)))
            .filter(|&p| is_free(p) && p != GRID_GOAL)
            .collect()
    }
}

/// Synchronous value iteration until the largest change is below `tol`.
/// The goal is absorbing with value 0; entering it pays 1.
pub fn gridworld_value_iteration(gamma: f64, tol: f64, max_sweeps: usize) -> ValueIteration {
    let mut v = [[0.0f64; 5]; 5];
    let mut q = [[[0.0f64; 4]; 5]; 5];
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut next = [[0.0f64; 5]; 5];
        let mut delta: f64 = 0.0;
        for p in ValueIteration::decision_states() {
            let (x, y) = (p.0 as usize, p.1 as usize);
            for (i, &a) in GridAction::ALL.iter().enumerate() {
                let n = grid_move(p, a);
                q[y][x][i] = if n == GRID_GOAL {
                    1.0
                } else {
                    gamma * v[n.1 as usize][n.0 as usize]
                };
            }
            next[y][x] = q[y][x].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((next[y][x] - v[y][x]).abs());
        }
        v = next;
        if delta < tol {
            break;
        }
    }
    ValueIteration { values: v, q, sweeps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn at(p: (i32, i32), a: GridAction) -> StepResult {
        let mut g = GridWorld::new();
        g.set_position(p);
        g.step(&Action::Discrete(a as usize)).unwrap()
    }

    #[test]
    fn step_examples() {
        let r = at((0, 0), GridAction::Right);
        assert_eq!((r.obs, r.reward, r.done), (vec![1.0, 0.0], 0.0, false));
        let r = at((0, 1), GridAction::Right);
        assert_eq!(r.obs, vec![0.0, 1.0]);
        let r = at((3, 4), GridAction::Right);
        assert_eq!((r.obs, r.reward, r.done, r.timeout), (vec![4.0, 4.0], 1.0, true, false));
        assert_eq!(at((0, 0), GridAction::Up).obs, vec![0.0, 0.0]);
        assert_eq!(at((0, 0), GridAction::Down).obs, vec![0.0, 1.0]);
    }

    #[test]
    fn reset_is_start_for_any_seed() {
        let mut g = GridWorld::new();
        for s in [None, Some(0), Some(99)] {
            assert_eq!(g.reset(s), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn cap_gives_timeout() {
        let mut g = GridWorld::new();
        g.reset(None);
        for i in 0..100 {
            let r = g.step(&Action::Discrete(GridAction::Up as usize)).unwrap();
            assert_eq!(r.done, i == 99);
            assert_eq!(r.timeout, i == 99);
        }
        assert_eq!(g.step(&Action::Discrete(0)), Err(EnvError::EpisodeOver));
    }

    fn bfs_distances() -> [[Option<u32>; 5]; 5] {
        let mut d = [[None; 5]; 5];
        d[GRID_GOAL.1 as usize][GRID_GOAL.0 as usize] = Some(0);
        let mut queue = VecDeque::from([GRID_GOAL]);
        while let Some(p) = queue.pop_front() {
            let dp = d[p.1 as usize][p.0 as usize].unwrap();
            for (dx, dy) in [(0, 1), (0, -1), (1, 0), (-1, 0)] {
                let n = (p.0 + dx, p.1 + dy);
                if is_free(n) && d[n.1 as usize][n.0 as usize].is_none() {
                    d[n.1 as usize][n.0 as usize] = Some(dp + 1);
                    queue.push_back(n);
                }
            }
        }
        d
    }

    #[test]
    fn value_iteration_matches_shortest_paths() {
        let gamma = 0.95;
        let vi = gridworld_value_iteration(gamma, 1e-12, 100);
        assert!(vi.sweeps <= 100);
        let d = bfs_distances();
        for p in ValueIteration::decision_states() {
            let dist = d[p.1 as usize][p.0 as usize].expect("every free cell reaches the goal");
            let want = gamma.powi(dist as i32 - 1);
            assert!((vi.value(p) - want).abs() < 1e-12, "{p:?}: {} vs {want}", vi.value(p));
        }
        assert!((vi.value(GRID_START) - gamma.powi(7)).abs() < 1e-12);
        for p in ValueIteration::decision_states() {
            let dist = d[p.1 as usize][p.0 as usize].unwrap();
            for a in vi.optimal_actions(p, 1e-9) {
                let n = grid_move(p, GridAction::ALL[a]);
                assert_eq!(d[n.1 as usize][n.0 as usize].unwrap() + 1, dist);
            }
        }
    }
}
