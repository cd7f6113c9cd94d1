use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Finite MDP with explicit transition tensor and reward table.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp<T> {
    n_states: usize,
    n_actions: usize,
    /// `[s][a][s']`, flattened.
    transitions: Vec<T>,
    /// `[s][a]`, flattened, every entry in `[0, 1]`.
    true_reward: Vec<T>,
    pub start_state: usize,
    pub horizon: usize,
    pub gamma: T,
}

impl<T: Scalar> TabularMdp<T> {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<T>,
        true_reward: Vec<T>,
        start_state: usize,
        horizon: usize,
        gamma: T,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::config("MDP needs at least one state and one action"));
        }
        if transitions.len() != n_states * n_actions * n_states {
            return Err(Error::Dimension {
                context: "transition tensor",
                expected: n_states * n_actions * n_states,
                got: transitions.len(),
            });
        }
        if true_reward.len() != n_states * n_actions {
            return Err(Error::Dimension {
                context: "reward table",
                expected: n_states * n_actions,
                got: true_reward.len(),
            });
        }
        if start_state >= n_states {
            return Err(Error::config(format!("start state {start_state} out of range")));
        }
        if horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if !(gamma > T::zero() && gamma < T::one()) {
            return Err(Error::config("gamma must lie in (0, 1)"));
        }
        let tol = T::lit(1e-12);
        for (row_idx, row) in transitions.chunks(n_states).enumerate() {
            if row.iter().any(|&p| !p.is_finite() || p < T::zero()) {
                return Err(Error::config(format!("transition row {row_idx} has invalid entries")));
            }
            let sum: T = row.iter().copied().sum();
            if (sum - T::one()).abs() > tol {
                return Err(Error::config(format!(
                    "transition row (s={}, a={}) sums to {sum}",
                    row_idx / n_actions,
                    row_idx % n_actions
                )));
            }
        }
        if true_reward
            .iter()
            .any(|&r| !r.is_finite() || r < T::zero() || r > T::one())
        {
            return Err(Error::config("true rewards must lie in [0, 1]"));
        }
        Ok(Self {
            n_states,
            n_actions,
            transitions,
            true_reward,
            start_state,
            horizon,
            gamma,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Distribution over next states for `(s, a)`.
    #[inline]
    pub fn transition(&self, s: usize, a: usize) -> &[T] {
        let off = (s * self.n_actions + a) * self.n_states;
        &self.transitions[off..off + self.n_states]
    }

    #[inline]
    pub fn true_reward(&self, s: usize, a: usize) -> T {
        self.true_reward[s * self.n_actions + a]
    }

    pub fn reward_table(&self) -> &[T] {
        &self.true_reward
    }

    /// Plain-text tabular format. `#` starts a comment.
    ///
    /// ```text
    /// n_states n_actions gamma H start
    /// <n_states * n_actions transition rows, ordered by s then a>
    /// <n_states reward rows of n_actions values>
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            self.n_states, self.n_actions, self.gamma, self.horizon, self.start_state
        );
        for row in self.transitions.chunks(self.n_states) {
            let _ = writeln!(out, "{}", join(row));
        }
        for row in self.true_reward.chunks(self.n_actions) {
            let _ = writeln!(out, "{}", join(row));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut rows = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let header = rows.next().ok_or_else(|| Error::parse("empty MDP file"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 5 {
            return Err(Error::parse(format!("MDP header needs 5 fields, got `{header}`")));
        }
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(format!("bad integer `{s}` in MDP header")))
        };
        let n_states = int(h[0])?;
        let n_actions = int(h[1])?;
        let gamma = parse_scalar::<T>(h[2])?;
        let horizon = int(h[3])?;
        let start = int(h[4])?;

        let mut read_rows = |count: usize, width: usize, what: &str| -> Result<Vec<T>> {
            let mut out = Vec::with_capacity(count * width);
            for i in 0..count {
                let line = rows
                    .next()
                    .ok_or_else(|| Error::parse(format!("missing {what} row {i}")))?;
                let vals = line
                    .split_whitespace()
                    .map(parse_scalar::<T>)
                    .collect::<Result<Vec<_>>>()?;
                if vals.len() != width {
                    return Err(Error::parse(format!(
                        "{what} row {i} has {} values, expected {width}",
                        vals.len()
                    )));
                }
                out.extend(vals);
            }
            Ok(out)
        };
        let transitions = read_rows(n_states * n_actions, n_states, "transition")?;
        let rewards = read_rows(n_states, n_actions, "reward")?;
        Self::new(n_states, n_actions, transitions, rewards, start, horizon, gamma)
    }
}

fn join<T: Scalar>(row: &[T]) -> String {
    row.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_scalar<T: Scalar>(s: &str) -> Result<T> {
    s.parse::<T>()
        .map_err(|_| Error::parse(format!("bad number `{s}`")))
}

/// Grid layout helpers. Actions are up, down, left, right; moving into a wall
/// leaves the agent in place.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub goal: (usize, usize),
    pub start: (usize, usize),
    pub horizon: usize,
    pub gamma: f64,
    /// Probability that the chosen move is replaced by a uniformly random one.
    pub slip: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
            goal: (4, 4),
            start: (0, 0),
            horizon: 25,
            gamma: 0.9,
            slip: 0.0,
        }
    }
}

pub const GRID_MOVES: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

impl GridSpec {
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn cell(&self, s: usize) -> (usize, usize) {
        (s / self.width, s % self.width)
    }

    /// Deterministic successor of `(s, a)`.
    pub fn successor(&self, s: usize, a: usize) -> usize {
        let (r, c) = self.cell(s);
        let (dr, dc) = GRID_MOVES[a];
        let nr = r as isize + dr;
        let nc = c as isize + dc;
        if nr < 0 || nc < 0 || nr >= self.height as isize || nc >= self.width as isize {
            s
        } else {
            self.index(nr as usize, nc as usize)
        }
    }

    /// Builds the MDP. Reward is 1 for any action taken in the goal cell.
    pub fn build<T: Scalar>(&self) -> Result<TabularMdp<T>> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("grid must be non-empty"));
        }
        if !(0.0..=1.0).contains(&self.slip) {
            return Err(Error::config("slip must lie in [0, 1]"));
        }
        let n = self.width * self.height;
        let goal = self.index(self.goal.0, self.goal.1);
        let mut transitions = vec![T::zero(); n * 4 * n];
        let mut rewards = vec![T::zero(); n * 4];
        let slip = T::lit(self.slip);
        let quarter = T::lit(0.25);
        for s in 0..n {
            for a in 0..4 {
                let row = &mut transitions[(s * 4 + a) * n..(s * 4 + a + 1) * n];
                row[self.successor(s, a)] += T::one() - slip;
                for b in 0..4 {
                    row[self.successor(s, b)] += slip * quarter;
                }
                if s == goal {
                    rewards[s * 4 + a] = T::one();
                }
            }
        }
        TabularMdp::new(
            n,
            4,
            transitions,
            rewards,
            self.index(self.start.0, self.start.1),
            self.horizon,
            T::lit(self.gamma),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_grid_rows_are_stochastic() {
        let mdp: TabularMdp<f64> = GridSpec::default().build().unwrap();
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let sum: f64 = mdp.transition(s, a).iter().sum();
                assert!((sum - 1.0).abs() <= 1e-12);
            }
        }
        let slippery: TabularMdp<f64> = GridSpec {
            slip: 0.3,
            ..GridSpec::default()
        }
        .build()
        .unwrap();
        for s in 0..slippery.n_states() {
            let sum: f64 = slippery.transition(s, 2).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn deterministic_grid_matches_hand_enumeration() {
        // 3x3 grid, cells numbered row-major; expected successors for
        // up/down/left/right written out by hand.
        let g = GridSpec {
            width: 3,
            height: 3,
            goal: (2, 2),
            ..GridSpec::default()
        };
        let expected: [[usize; 4]; 9] = [
            [0, 3, 0, 1],
            [1, 4, 0, 2],
            [2, 5, 1, 2],
            [0, 6, 3, 4],
            [1, 7, 3, 5],
            [2, 8, 4, 5],
            [3, 6, 6, 7],
            [4, 7, 6, 8],
            [5, 8, 7, 8],
        ];
        let mdp: TabularMdp<f64> = g.build().unwrap();
        for s in 0..9 {
            for a in 0..4 {
                let row = mdp.transition(s, a);
                assert_eq!(row[expected[s][a]], 1.0, "s={s} a={a}");
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let mdp: TabularMdp<f64> = GridSpec {
            slip: 0.1,
            ..GridSpec::default()
        }
        .build()
        .unwrap();
        let back = TabularMdp::<f64>::from_text(&mdp.to_text()).unwrap();
        assert_eq!(mdp, back);
    }

    #[test]
    fn parses_commented_file() {
        let text = "# two-state chain\n2 1 0.5 3 0\n0 1 # move\n0 1\n0\n1\n";
        let mdp = TabularMdp::<f64>::from_text(text).unwrap();
        assert_eq!(mdp.transition(0, 0), &[0.0, 1.0]);
        assert_eq!(mdp.true_reward(1, 0), 1.0);
    }

    #[test]
    fn rejects_non_stochastic_rows_and_bad_rewards() {
        assert!(TabularMdp::<f64>::new(1, 1, vec![0.9], vec![0.0], 0, 1, 0.9).is_err());
        assert!(TabularMdp::<f64>::new(1, 1, vec![1.0], vec![1.5], 0, 1, 0.9).is_err());
        assert!(TabularMdp::<f64>::new(1, 1, vec![1.0], vec![0.5], 0, 0, 0.9).is_err());
        assert!(TabularMdp::<f64>::new(1, 1, vec![1.0], vec![0.5], 0, 1, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn grid_rows_are_stochastic_for_any_spec(
            width in 1..7_usize,
            height in 1..7_usize,
            slip in 0.0..=1.0_f64,
        ) {
            let spec = GridSpec { width, height, goal: (height - 1, width - 1), ..GridSpec::default() };
            let mdp: TabularMdp<f64> = spec.build().unwrap();
            for s in 0..mdp.n_states() {
                for a in 0..mdp.n_actions() {
                    let sum: f64 = mdp.transition(s, a).iter().sum();
                    prop_assert!((sum - 1.0).abs() <= 1e-12);
                    prop_assert!(mdp.transition(s, a).iter().all(|&p| p >= 0.0));
                }
            }
        }
    }
}
