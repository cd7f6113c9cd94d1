//! Environments with hidden true rewards, trajectories and rollout helpers.

mod point_mass;
mod tabular;
mod trajectory;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use point_mass::{PointMass, ARENA};
pub use tabular::{GridSpec, TabularMdp, GRID_MOVES};
pub use trajectory::{BehaviorTag, Segment, Trajectory};

use crate::error::{Error, Result};
use crate::policy::tabular::{soft_value_iteration, Backup, Horizon};
use crate::scalar::Scalar;
use crate::SimRng;

/// Gridworld over a tabular MDP. States are exposed to learners as one-hot
/// vectors of length `n_states`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    pub spec: GridSpec,
    pub mdp: TabularMdp<f64>,
}

impl GridWorld {
    pub fn new(spec: GridSpec) -> Result<Self> {
        let mdp = spec.build()?;
        Ok(Self { spec, mdp })
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.mdp.n_states()];
        v[s] = 1.0;
        v
    }

    /// Index of the hot entry of a one-hot state.
    pub fn index_of(state: &[f64]) -> usize {
        state
            .iter()
            .position(|&v| v == 1.0)
            .expect("gridworld state must be one-hot")
    }
}

/// Position drawn for one state in a human-facing payload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RenderPoint {
    Cell { row: usize, col: usize },
    Point { x: f64, y: f64 },
}

/// The environments the trainer can run on.
#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    Grid(GridWorld),
    PointMass(PointMass),
}

impl Env {
    pub fn state_dim(&self) -> usize {
        match self {
            Env::Grid(g) => g.mdp.n_states(),
            Env::PointMass(_) => PointMass::STATE_DIM,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Env::Grid(g) => g.mdp.n_actions(),
            Env::PointMass(_) => PointMass::N_ACTIONS,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Env::Grid(g) => g.mdp.horizon,
            Env::PointMass(p) => p.horizon,
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            Env::Grid(g) => g.mdp.gamma,
            Env::PointMass(p) => p.gamma,
        }
    }

    /// Exact optimal discounted return from the start state, when it can be
    /// computed (always on grids, on lattice-aligned point-mass instances).
    pub fn optimal_return(&self) -> Option<f64> {
        match self {
            Env::Grid(g) => {
                let horizon = Horizon::Finite(g.mdp.horizon);
                let sol = soft_value_iteration(&g.mdp, g.mdp.reward_table(), Backup::Hard, horizon).ok()?;
                Some(sol.values[0][g.mdp.start_state])
            }
            Env::PointMass(p) => p.optimal_return(),
        }
    }

    pub fn start_state(&self) -> Vec<f64> {
        match self {
            Env::Grid(g) => g.one_hot(g.mdp.start_state),
            Env::PointMass(p) => p.start_state().to_vec(),
        }
    }

    /// Samples `s' ~ P(.|s, a)` and returns it with the true reward `r(s, a)`.
    pub fn step(&self, state: &[f64], action: usize, rng: &mut SimRng) -> Result<(Vec<f64>, f64)> {
        if action >= self.n_actions() {
            return Err(Error::contract(format!("action {action} out of range")));
        }
        match self {
            Env::Grid(g) => {
                let s = GridWorld::index_of(state);
                let row = g.mdp.transition(s, action);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut next = row.len() - 1;
                for (i, &p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        next = i;
                        break;
                    }
                }
                Ok((g.one_hot(next), g.mdp.true_reward(s, action)))
            }
            Env::PointMass(p) => {
                let (n, r) = p.step(state, action)?;
                Ok((n.to_vec(), r))
            }
        }
    }

    /// True reward of acting with `action` in `state`.
    pub fn true_reward(&self, state: &[f64], action: usize) -> f64 {
        match self {
            Env::Grid(g) => g.mdp.true_reward(GridWorld::index_of(state), action),
            Env::PointMass(p) => p.reward(state),
        }
    }

    pub fn render(&self, state: &[f64]) -> RenderPoint {
        match self {
            Env::Grid(g) => {
                let (row, col) = g.spec.cell(GridWorld::index_of(state));
                RenderPoint::Cell { row, col }
            }
            Env::PointMass(_) => RenderPoint::Point {
                x: state[0],
                y: state[1],
            },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Env::Grid(_) => "gridworld",
            Env::PointMass(_) => "point_mass",
        }
    }
}

/// Rolls out `horizon` steps from the start state. `sampler` picks an action
/// for each state.
pub fn rollout<F>(env: &Env, mut sampler: F, horizon: usize, tag: BehaviorTag, rng: &mut SimRng) -> Result<Trajectory>
where
    F: FnMut(&[f64], &mut SimRng) -> usize,
{
    if horizon == 0 {
        return Err(Error::contract("rollout horizon must be at least 1"));
    }
    if horizon != env.horizon() {
        return Err(Error::contract(format!(
            "rollout horizon {horizon} differs from environment horizon {}",
            env.horizon()
        )));
    }
    let dim = env.state_dim();
    let mut states = Vec::with_capacity((horizon + 1) * dim);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut s = env.start_state();
    states.extend_from_slice(&s);
    for _ in 0..horizon {
        let a = sampler(&s, rng);
        if a >= env.n_actions() {
            return Err(Error::contract(format!("sampler returned invalid action {a}")));
        }
        let (next, r) = env.step(&s, a, rng)?;
        actions.push(a);
        rewards.push(r);
        states.extend_from_slice(&next);
        s = next;
    }
    Trajectory::new(Segment::new(states, dim, actions, tag)?, rewards)
}

/// `Σ_h γ^h r_h`.
pub fn discounted_return<T: Scalar>(rewards: &[T], gamma: T) -> T {
    let mut discount = T::one();
    let mut total = T::zero();
    for &r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}
