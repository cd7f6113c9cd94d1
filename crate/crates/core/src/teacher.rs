//! Scripted preference teacher driven by the hidden true reward.
//!
//! Composition order for one pair: myopic returns, then the skip test, then
//! Bradley-Terry sampling at rationality `beta`, then a mistake flip.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Segment, Trajectory};
use crate::error::{Error, Result};
use crate::scalar::logistic;
use crate::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    PreferA,
    PreferB,
    Skip,
}

/// A stored (non-skip) preference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preference {
    A,
    B,
}

impl Preference {
    pub fn from_label(label: Label) -> Option<Self> {
        match label {
            Label::PreferA => Some(Preference::A),
            Label::PreferB => Some(Preference::B),
            Label::Skip => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeacherSource {
    Scripted,
    Human,
}

/// A labelled trajectory pair. Only the learner-visible segments are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceRecord {
    pub a: Segment,
    pub b: Segment,
    pub label: Preference,
    pub source: TeacherSource,
}

impl PreferenceRecord {
    pub fn new(a: Segment, b: Segment, label: Preference, source: TeacherSource) -> Result<Self> {
        if a.len() != b.len() || a.state_dim() != b.state_dim() {
            return Err(Error::contract("preference pair must share horizon and state space"));
        }
        Ok(Self { a, b, label, source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    /// Rationality. `inf` labels deterministically by the larger return.
    pub beta: f64,
    pub epsilon_mistake: f64,
    /// Myopic discount; `None` resolves to `0.98 * env gamma`.
    pub gamma_myopic: Option<f64>,
    /// Pairs whose larger return falls below this are skipped.
    pub skip_threshold: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            beta: 5.0,
            epsilon_mistake: 0.1,
            gamma_myopic: None,
            skip_threshold: 0.0,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta.is_nan() || self.beta < 0.0 {
            return Err(Error::config("teacher.beta must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.epsilon_mistake) {
            return Err(Error::config("teacher.epsilon_mistake must lie in [0, 1]"));
        }
        if let Some(g) = self.gamma_myopic {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::config("teacher.gamma_myopic must lie in (0, 1]"));
            }
        }
        if !(self.skip_threshold >= 0.0) {
            return Err(Error::config("teacher.skip_threshold must be >= 0"));
        }
        Ok(())
    }

    pub fn resolved_gamma(&self, env_gamma: f64) -> f64 {
        self.gamma_myopic.unwrap_or(0.98 * env_gamma)
    }
}

/// Myopic return: later steps weigh more, `Σ_h γ^(H-1-h) r_h`.
pub fn myopic_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().fold(0.0, |acc, &r| gamma * acc + r)
}

/// Probability that the teacher answers `PreferA`, before the mistake flip.
pub fn rational_prob(r_a: f64, r_b: f64, beta: f64) -> f64 {
    if beta.is_infinite() {
        if r_a > r_b {
            1.0
        } else if r_a < r_b {
            0.0
        } else {
            0.5
        }
    } else {
        logistic(beta * (r_a - r_b))
    }
}

/// Labels one pair. `env_gamma` resolves the default myopic discount.
pub fn teacher_label(
    a: &Trajectory,
    b: &Trajectory,
    config: &TeacherConfig,
    env_gamma: f64,
    rng: &mut SimRng,
) -> Result<Label> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::contract("teacher needs two equal-length trajectories with true rewards"));
    }
    let g = config.resolved_gamma(env_gamma);
    let r_a = myopic_return(a.true_rewards(), g);
    let r_b = myopic_return(b.true_rewards(), g);
    if r_a.max(r_b) < config.skip_threshold {
        return Ok(Label::Skip);
    }
    let p = rational_prob(r_a, r_b, config.beta);
    let mut prefer_a = rng.gen::<f64>() < p;
    if rng.gen::<f64>() < config.epsilon_mistake {
        prefer_a = !prefer_a;
    }
    Ok(if prefer_a { Label::PreferA } else { Label::PreferB })
}
