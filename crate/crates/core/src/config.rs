//! Run configuration: a TOML document with flat `env`, `teacher`, `train`,
//! `model`, `service` and `verify` sections. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bilevel::VerifyConfig;
use crate::envs::{Env, GridSpec, GridWorld, PointMass};
use crate::error::{Error, Result};
use crate::policy::TdConfig;
use crate::teacher::TeacherConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    Grid,
    PointMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub name: EnvName,
    /// Defaults: 25 on the grid, 60 on the point mass.
    pub horizon: Option<usize>,
    /// Defaults: 0.9 on the grid, 0.95 on the point mass.
    pub gamma: Option<f64>,
    // grid: start in the top-left corner, goal in the bottom-right one
    pub width: usize,
    pub height: usize,
    pub slip: f64,
    // point mass
    pub dt: f64,
    pub a_max: f64,
    pub v_max: f64,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub goal_radius: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        let pm = PointMass::default();
        let grid = GridSpec::default();
        Self {
            name: EnvName::PointMass,
            horizon: None,
            gamma: None,
            width: grid.width,
            height: grid.height,
            slip: grid.slip,
            dt: pm.dt,
            a_max: pm.a_max,
            v_max: pm.v_max,
            start: pm.start,
            goal: pm.goal,
            goal_radius: pm.goal_radius,
        }
    }
}

impl EnvConfig {
    pub fn grid_spec(&self) -> GridSpec {
        let d = GridSpec::default();
        GridSpec {
            width: self.width,
            height: self.height,
            goal: (self.height.saturating_sub(1), self.width.saturating_sub(1)),
            start: (0, 0),
            horizon: self.horizon.unwrap_or(d.horizon),
            gamma: self.gamma.unwrap_or(d.gamma),
            slip: self.slip,
        }
    }

    pub fn point_mass(&self) -> PointMass {
        let d = PointMass::default();
        PointMass {
            dt: self.dt,
            a_max: self.a_max,
            v_max: self.v_max,
            start: self.start,
            goal: self.goal,
            goal_radius: self.goal_radius,
            horizon: self.horizon.unwrap_or(d.horizon),
            gamma: self.gamma.unwrap_or(d.gamma),
        }
    }

    pub fn build(&self) -> Result<Env> {
        match self.name {
            EnvName::Grid => {
                let spec = self.grid_spec();
                if spec.horizon == 0 || !(spec.gamma > 0.0 && spec.gamma < 1.0) {
                    return Err(Error::config("grid horizon must be >= 1 and gamma in (0, 1)"));
                }
                Ok(Env::Grid(GridWorld::new(spec)?))
            }
            EnvName::PointMass => {
                let pm = self.point_mass();
                pm.validate()?;
                Ok(Env::PointMass(pm))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherMode {
    Scripted,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherSection {
    pub mode: TeacherMode,
    /// Human mode only; absent means wait indefinitely.
    pub timeout_s: Option<f64>,
    pub beta: f64,
    pub epsilon_mistake: f64,
    pub gamma_myopic: Option<f64>,
    pub skip_threshold: f64,
}

impl Default for TeacherSection {
    fn default() -> Self {
        let t = TeacherConfig::default();
        Self {
            mode: TeacherMode::Scripted,
            timeout_s: None,
            beta: t.beta,
            epsilon_mistake: t.epsilon_mistake,
            gamma_myopic: t.gamma_myopic,
            skip_threshold: t.skip_threshold,
        }
    }
}

impl TeacherSection {
    pub fn scripted(&self) -> TeacherConfig {
        TeacherConfig {
            beta: self.beta,
            epsilon_mistake: self.epsilon_mistake,
            gamma_myopic: self.gamma_myopic,
            skip_threshold: self.skip_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seeds: Vec<u64>,
    /// Iterations `T`.
    pub iterations: usize,
    /// Feedback sessions run in the first `feedback_iterations` iterations only.
    pub feedback_iterations: usize,
    /// Labelled pairs per session `M`.
    pub pairs_per_session: usize,
    /// Reward updates per iteration `k1`.
    pub reward_steps: usize,
    pub reward_batch: usize,
    pub lambda: f64,
    /// Current-policy rollouts for the agent-preference term.
    pub agent_trajectories: usize,
    pub policy_steps: usize,
    pub policy_batch: usize,
    /// Random-policy transitions in the pre-fill.
    pub pretrain_steps: usize,
    pub buffer_capacity: usize,
    pub eval_episodes: usize,
    pub eval_greedy: bool,
    /// Teacher attempts per session are capped at this multiple of `M`.
    pub max_attempts_factor: usize,
    /// Train the policy on the true reward (reference runs).
    pub oracle_reward: bool,
    pub checkpoints: bool,
    /// Writes elapsed seconds into the CSV; off gives bit-reproducible logs.
    pub log_wallclock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            iterations: 40,
            feedback_iterations: 30,
            pairs_per_session: 20,
            reward_steps: 50,
            reward_batch: 32,
            lambda: 0.5,
            agent_trajectories: 16,
            policy_steps: 500,
            policy_batch: 128,
            pretrain_steps: 2000,
            buffer_capacity: 50_000,
            eval_episodes: 10,
            eval_greedy: true,
            max_attempts_factor: 50,
            oracle_reward: false,
            checkpoints: true,
            log_wallclock: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub reward_hidden: Vec<usize>,
    pub reward_lr: f64,
    pub reward_clip_norm: f64,
    pub policy_hidden: Vec<usize>,
    pub policy_lr: f64,
    pub policy_clip_norm: f64,
    /// Softmax temperature of the policy.
    pub alpha: f64,
    pub target_every: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let td = TdConfig::default();
        Self {
            reward_hidden: vec![32, 32],
            reward_lr: 3e-3,
            reward_clip_norm: 10.0,
            policy_hidden: vec![64, 64],
            policy_lr: td.lr,
            policy_clip_norm: td.clip_norm,
            alpha: td.alpha,
            target_every: td.target_every,
        }
    }
}

impl ModelConfig {
    pub fn td(&self) -> TdConfig {
        TdConfig {
            alpha: self.alpha,
            lr: self.policy_lr,
            target_every: self.target_every,
            clip_norm: self.policy_clip_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 7878,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub teacher: TeacherSection,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub service: ServiceConfig,
    pub verify: VerifyConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Applies `key=value`. Keys are `section.key`, or a bare key when it
    /// names exactly one field across all sections.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{assignment}` is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let mut doc = toml::Table::try_from(&*self).map_err(|e| Error::config(e.to_string()))?;
        let (section, field) = resolve_key(&doc, key)?;
        let table = doc
            .get_mut(&section)
            .and_then(|v| v.as_table_mut())
            .ok_or_else(|| Error::config(format!("unknown config section `{section}`")))?;
        let mut value = parse_value(raw);
        if let (Some(toml::Value::Float(_)), toml::Value::Integer(i)) = (table.get(&field), &value) {
            value = toml::Value::Float(*i as f64);
        }
        table.insert(field, value);
        *self = RunConfig::deserialize(toml::Value::Table(doc))
            .map_err(|e| Error::config(format!("override `{assignment}`: {}", e.message())))?;
        Ok(())
    }

    /// Every problem found, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Err(e) = self.env.build() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.teacher.scripted().validate() {
            problems.push(e.to_string());
        }
        if let Some(t) = self.teacher.timeout_s {
            if !(t > 0.0) {
                problems.push("teacher.timeout_s must be positive".into());
            }
        }
        let t = &self.train;
        if t.seeds.is_empty() {
            problems.push("train.seeds must not be empty".into());
        }
        let counts = [
            ("iterations", t.iterations),
            ("pairs_per_session", t.pairs_per_session),
            ("reward_batch", t.reward_batch),
            ("agent_trajectories", t.agent_trajectories),
            ("policy_batch", t.policy_batch),
            ("buffer_capacity", t.buffer_capacity),
            ("eval_episodes", t.eval_episodes),
            ("max_attempts_factor", t.max_attempts_factor),
        ];
        for (name, v) in counts {
            if v == 0 {
                problems.push(format!("train.{name} must be at least 1"));
            }
        }
        if !(t.lambda >= 0.0 && t.lambda.is_finite()) {
            problems.push("train.lambda must be a finite value >= 0".into());
        }
        let m = &self.model;
        if m.reward_hidden.is_empty() || m.reward_hidden.contains(&0) {
            problems.push("model.reward_hidden needs at least one non-zero layer".into());
        }
        if m.policy_hidden.is_empty() || m.policy_hidden.contains(&0) {
            problems.push("model.policy_hidden needs at least one non-zero layer".into());
        }
        for (name, v) in [
            ("reward_lr", m.reward_lr),
            ("reward_clip_norm", m.reward_clip_norm),
            ("policy_lr", m.policy_lr),
            ("policy_clip_norm", m.policy_clip_norm),
            ("alpha", m.alpha),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                problems.push(format!("model.{name} must be positive"));
            }
        }
        if m.target_every == 0 {
            problems.push("model.target_every must be at least 1".into());
        }
        if let Err(e) = self.verify.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

fn resolve_key(doc: &toml::Table, key: &str) -> Result<(String, String)> {
    if let Some((s, f)) = key.split_once('.') {
        return Ok((s.to_string(), f.to_string()));
    }
    let owners: Vec<&String> = doc
        .iter()
        .filter(|(_, v)| v.as_table().is_some_and(|t| t.contains_key(key)))
        .map(|(k, _)| k)
        .collect();
    match owners.as_slice() {
        [one] => Ok(((*one).clone(), key.to_string())),
        [] => Err(Error::config(format!("unknown config key `{key}`"))),
        _ => Err(Error::config(format!("config key `{key}` is ambiguous; qualify it with a section"))),
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn customised_round_trips() {
        let mut c = RunConfig::default();
        c.env.name = EnvName::Grid;
        c.env.horizon = Some(12);
        c.teacher.beta = f64::INFINITY;
        c.teacher.gamma_myopic = Some(0.5);
        c.train.seeds = vec![3, 1, 4];
        c.verify.lambdas = vec![0.0, 2.0];
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[train]\nlamda = 0.1\n").is_err());
        assert!(RunConfig::from_toml("[trian]\n").is_err());
        let c = RunConfig::from_toml("# comment\n[train]\nlambda = 0.1 # inline\n").unwrap();
        assert_eq!(c.train.lambda, 0.1);
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::default();
        c.apply_override("lambda=0").unwrap();
        assert_eq!(c.train.lambda, 0.0);
        c.apply_override("env.name=grid").unwrap();
        assert_eq!(c.env.name, EnvName::Grid);
        c.apply_override("train.seeds=[1,2]").unwrap();
        assert_eq!(c.train.seeds, vec![1, 2]);
        c.apply_override("teacher.gamma_myopic=0.7").unwrap();
        assert_eq!(c.teacher.gamma_myopic, Some(0.7));
        c.apply_override("teacher.beta=inf").unwrap();
        assert!(c.teacher.beta.is_infinite());
        assert!(c.apply_override("nonsense=1").is_err());
        assert!(c.apply_override("lambda").is_err());
        assert!(c.apply_override("train.lambda=\"x\"").is_err());
        c.apply_override("seed=4").unwrap();
        assert_eq!(c.verify.seed, 4);
    }

    #[test]
    fn bare_keys_resolve_only_when_unique() {
        let doc: toml::Table = "[a]\nx = 1\ny = 2\n[b]\nx = 3\n".parse().unwrap();
        assert_eq!(resolve_key(&doc, "y").unwrap(), ("a".into(), "y".into()));
        assert!(resolve_key(&doc, "x").unwrap_err().to_string().contains("ambiguous"));
        assert!(resolve_key(&doc, "z").is_err());
        assert_eq!(resolve_key(&doc, "b.x").unwrap(), ("b".into(), "x".into()));
    }

    #[test]
    fn validation_lists_every_problem() {
        let mut c = RunConfig::default();
        c.train.iterations = 0;
        c.train.lambda = -1.0;
        c.model.alpha = 0.0;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("iterations") && msg.contains("lambda") && msg.contains("alpha"), "{msg}");
    }

    #[test]
    fn env_defaults_follow_the_environment() {
        let mut c = EnvConfig::default();
        assert_eq!(c.build().unwrap().horizon(), 60);
        c.name = EnvName::Grid;
        let env = c.build().unwrap();
        assert_eq!((env.horizon(), env.gamma()), (25, 0.9));
    }

    proptest! {
        #[test]
        fn overridden_configs_round_trip(
            lambda in 0.0..10.0_f64,
            iterations in 1..100_usize,
            beta in 0.0..20.0_f64,
            hidden in prop::collection::vec(1..64_usize, 1..4),
        ) {
            let mut c = RunConfig::default();
            c.apply_override(&format!("lambda={lambda}")).unwrap();
            c.apply_override(&format!("train.iterations={iterations}")).unwrap();
            c.apply_override(&format!("teacher.beta={beta}")).unwrap();
            c.model.reward_hidden = hidden;
            prop_assert_eq!(c.train.lambda, lambda);
            let back = RunConfig::from_toml(&c.to_toml()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
