use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which policy produced a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorTag {
    Pretrain,
    PolicyIter(usize),
    Eval,
}

/// The learner-visible part of a trajectory: states and actions only.
///
/// Reward and policy learners only ever receive segments, never the hidden
/// true rewards carried by [`Trajectory`].
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// `H + 1` states of `state_dim` values each, flattened.
    states: Vec<f64>,
    state_dim: usize,
    actions: Vec<usize>,
    pub tag: BehaviorTag,
}

impl Segment {
    pub fn new(states: Vec<f64>, state_dim: usize, actions: Vec<usize>, tag: BehaviorTag) -> Result<Self> {
        if state_dim == 0 || states.len() != (actions.len() + 1) * state_dim {
            return Err(Error::Dimension {
                context: "segment states",
                expected: (actions.len() + 1) * state_dim,
                got: states.len(),
            });
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("segment state".into()));
        }
        Ok(Self {
            states,
            state_dim,
            actions,
            tag,
        })
    }

    /// Number of steps `H`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    #[inline]
    pub fn state(&self, h: usize) -> &[f64] {
        &self.states[h * self.state_dim..(h + 1) * self.state_dim]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    /// `(state, action)` pairs for steps `0..H`.
    pub fn steps(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.actions.iter().enumerate().map(|(h, &a)| (self.state(h), a))
    }
}

/// A rollout with its hidden true rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub segment: Segment,
    true_rewards: Vec<f64>,
}

impl Trajectory {
    pub fn new(segment: Segment, true_rewards: Vec<f64>) -> Result<Self> {
        if true_rewards.len() != segment.len() {
            return Err(Error::Dimension {
                context: "trajectory rewards",
                expected: segment.len(),
                got: true_rewards.len(),
            });
        }
        if true_rewards.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("true reward".into()));
        }
        Ok(Self {
            segment,
            true_rewards,
        })
    }

    pub fn true_rewards(&self) -> &[f64] {
        &self.true_rewards
    }

    pub fn len(&self) -> usize {
        self.segment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segment.is_empty()
    }
}
