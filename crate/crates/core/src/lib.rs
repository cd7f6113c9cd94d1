//! Preference-based reward learning with an agent-preference value
//! regulariser, a deep-ish training loop on small environments, and an exact
//! tabular verifier for the bilevel reward-learning objective.
//!
//! The numeric core ([`math`], tabular solvers, [`bilevel`]) is generic over
//! [`Scalar`]; the type aliases below fix it to `f64`, which is what the
//! training stack uses.

pub mod bilevel;
pub mod config;
pub mod envs;
pub mod feedback;
pub mod reward;
pub mod teacher;
pub mod trainer;
pub mod error;
pub mod math;
pub mod policy;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Random stream used by every stochastic component.
pub type SimRng = rand_chacha::ChaCha8Rng;

pub type ParamVector = math::ParamVector<f64>;
pub type ParamVector32 = math::ParamVector<f32>;
pub type Mlp = math::Mlp<f64>;
pub type TabularMdp = envs::TabularMdp<f64>;
