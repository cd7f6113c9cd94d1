//! The training loop: random pre-fill, then per iteration feedback →
//! reward learning → buffer relabel → policy learning → evaluation, with one
//! CSV row per iteration and per-iteration rollback on failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::config::{EnvName, RunConfig, TeacherMode};
use crate::envs::{rollout, BehaviorTag, Env, Trajectory};
use crate::error::{Error, Result};
use crate::feedback::{FeedbackHub, PairPayload};
use crate::policy::{
    evaluate_policy, evaluate_policy_table, mean_std, soft_value_iteration, Backup, EvalStats, Horizon, PolicyTable,
    QPolicy, ReplayBuffer,
};
use crate::reward::{agent_pref_value, rebel_loss, reward_update, PreferenceDataset, RewardFn, RewardModel};
use crate::teacher::{teacher_label, Preference, PreferenceRecord, TeacherSource};
use crate::SimRng;

/// The environment's hidden reward. Used only for oracle-reward reference
/// runs and for evaluation; never passed to reward learning.
pub struct TrueReward<'a>(pub &'a Env);

impl RewardFn for TrueReward<'_> {
    fn reward(&self, state: &[f64], action: usize) -> f64 {
        self.0.true_reward(state, action)
    }
}

pub const CSV_HEADER: [&str; 11] = [
    "seed",
    "iter",
    "env_steps",
    "feedback_total",
    "bt_nll",
    "agent_pref",
    "rebel_loss",
    "true_return_mean",
    "true_return_std",
    "learned_return_mean",
    "wallclock_s",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub seed: u64,
    pub iter: usize,
    pub env_steps: u64,
    pub feedback_total: usize,
    pub bt_nll: f64,
    pub agent_pref: f64,
    pub rebel_loss: f64,
    pub true_return_mean: f64,
    pub true_return_std: f64,
    pub learned_return_mean: f64,
    pub wallclock_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Feedback,
    RewardLearning,
    Relabel,
    PolicyLearning,
    Eval,
}

const PHASE_ORDER: [Phase; 5] = [
    Phase::Feedback,
    Phase::RewardLearning,
    Phase::Relabel,
    Phase::PolicyLearning,
    Phase::Eval,
];

/// Independent random streams derived from one master seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Streams {
    pub env: SimRng,
    pub teacher: SimRng,
    pub agent: SimRng,
    pub reward: SimRng,
    pub policy: SimRng,
    pub eval: SimRng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = SimRng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Self {
            env: stream(1),
            teacher: stream(2),
            agent: stream(3),
            reward: stream(4),
            policy: stream(5),
            eval: stream(6),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    /// Completed iterations.
    pub iteration: usize,
    pub dataset: PreferenceDataset,
    pub buffer: ReplayBuffer,
    pub reward: RewardModel,
    pub policy: QPolicy,
    pub env_steps: u64,
    pub rngs: Streams,
    /// Phases entered during the current iteration.
    pub phases: Vec<Phase>,
}

/// Exact soft optimum under the learned reward versus the soft value of the
/// current policy (gridworld only), both at the policy temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubstitutionGap {
    pub iter: usize,
    pub v_opt: f64,
    pub v_policy: f64,
}

pub struct Trainer {
    pub config: RunConfig,
    pub env: Env,
    pub seed: u64,
    pub state: RunState,
    hub: Option<Arc<FeedbackHub>>,
    started: Instant,
}

impl Trainer {
    /// Validates the configuration and runs the pre-fill.
    pub fn new(config: RunConfig, seed: u64, hub: Option<Arc<FeedbackHub>>) -> Result<Self> {
        config.validate()?;
        if config.teacher.mode == TeacherMode::Human && hub.is_none() {
            return Err(Error::config("human teacher mode needs a feedback service"));
        }
        let env = config.env.build()?;
        let state = pretrain(&config, &env, seed)?;
        Ok(Self {
            config,
            env,
            seed,
            state,
            hub,
            started: Instant::now(),
        })
    }

    fn learned_reward(&self) -> &dyn RewardFn {
        &self.state.reward
    }

    fn advance(state: &mut RunState, phase: Phase) -> Result<()> {
        let expected = PHASE_ORDER.get(state.phases.len()).copied();
        if expected != Some(phase) {
            return Err(Error::contract(format!(
                "phase {phase:?} entered out of order after {:?}",
                state.phases
            )));
        }
        state.phases.push(phase);
        Ok(())
    }

    fn buffer_reward(&self, state: &[f64], action: usize) -> f64 {
        if self.config.train.oracle_reward {
            self.env.true_reward(state, action)
        } else {
            self.state.reward.reward(state, action)
        }
    }

    fn store(&mut self, traj: &Trajectory) {
        let seg = &traj.segment;
        for h in 0..seg.len() {
            let (s, a) = (seg.state(h), seg.actions()[h]);
            let r = self.buffer_reward(s, a);
            self.state.buffer.push(s, a, seg.state(h + 1), r);
        }
    }

    fn policy_rollout(&mut self, tag: BehaviorTag, use_agent_stream: bool) -> Result<Trajectory> {
        let policy = &self.state.policy;
        let rng = if use_agent_stream {
            &mut self.state.rngs.agent
        } else {
            &mut self.state.rngs.env
        };
        let t = rollout(&self.env, |s, r| policy.act(s, r), self.env.horizon(), tag, rng)?;
        self.state.env_steps += t.len() as u64;
        Ok(t)
    }

    /// Appends exactly `m` labelled pairs to the dataset. Skipped pairs are
    /// discarded but their environment steps still count.
    pub fn collect_pairs(&mut self, m: usize) -> Result<()> {
        if m == 0 {
            return Err(Error::contract("a feedback session needs at least one pair"));
        }
        let tag = BehaviorTag::PolicyIter(self.state.iteration + 1);
        let max_attempts = self.config.train.max_attempts_factor * m;
        let human = self.config.teacher.mode == TeacherMode::Human;
        if human {
            if let Some(hub) = &self.hub {
                hub.begin_session(self.state.iteration + 1, m);
            }
        }
        let result = (|| {
            let mut labeled = 0;
            let mut attempts = 0;
            while labeled < m {
                if attempts == max_attempts {
                    return Err(Error::Starvation {
                        attempts,
                        labeled,
                        wanted: m,
                    });
                }
                attempts += 1;
                let a = self.policy_rollout(tag, false)?;
                let b = self.policy_rollout(tag, false)?;
                self.store(&a);
                self.store(&b);
                let (label, source) = if human {
                    let hub = self.hub.as_ref().expect("checked at construction");
                    let id = hub.enqueue(PairPayload::new(&self.env, &a.segment, &b.segment));
                    let timeout = self.config.teacher.timeout_s.map(Duration::from_secs_f64);
                    (hub.wait_label(&id, timeout)?, TeacherSource::Human)
                } else {
                    let cfg = self.config.teacher.scripted();
                    let gamma = self.env.gamma();
                    (
                        teacher_label(&a, &b, &cfg, gamma, &mut self.state.rngs.teacher)?,
                        TeacherSource::Scripted,
                    )
                };
                if let Some(pref) = Preference::from_label(label) {
                    self.state
                        .dataset
                        .push(PreferenceRecord::new(a.segment, b.segment, pref, source)?);
                    labeled += 1;
                }
            }
            Ok(())
        })();
        if human {
            if let Some(hub) = &self.hub {
                hub.end_session();
            }
        }
        result
    }

    /// Recomputes every buffered reward with the current reward model (or
    /// the true reward in oracle mode).
    pub fn relabel_buffer(&mut self) {
        if self.config.train.oracle_reward {
            let env = &self.env;
            self.state.buffer.relabel(&TrueReward(env));
        } else {
            self.state.buffer.relabel(&self.state.reward);
        }
    }

    /// One full iteration. On error the state is restored to what it was
    /// before the call.
    pub fn iterate(&mut self) -> Result<LogRow> {
        let snapshot = self.state.clone();
        match self.iterate_inner() {
            Ok(row) => Ok(row),
            Err(e) => {
                self.state = snapshot;
                Err(e)
            }
        }
    }

    fn iterate_inner(&mut self) -> Result<LogRow> {
        let k = self.state.iteration + 1;
        let t = self.config.train.clone();
        let gamma = self.env.gamma();
        self.state.phases.clear();

        Self::advance(&mut self.state, Phase::Feedback)?;
        if k <= t.feedback_iterations {
            self.collect_pairs(t.pairs_per_session)?;
        }
        let mut agent = Vec::with_capacity(t.agent_trajectories);
        for _ in 0..t.agent_trajectories {
            let traj = self.policy_rollout(BehaviorTag::PolicyIter(k), true)?;
            self.store(&traj);
            agent.push(traj);
        }
        let agent_segs: Vec<_> = agent.iter().map(|t| &t.segment).collect();

        Self::advance(&mut self.state, Phase::RewardLearning)?;
        if !t.oracle_reward && !self.state.dataset.is_empty() {
            let m = &self.config.model;
            for _ in 0..t.reward_steps {
                let batch = self.state.dataset.sample(t.reward_batch, &mut self.state.rngs.reward);
                reward_update(
                    &mut self.state.reward,
                    &batch,
                    &agent_segs,
                    t.lambda,
                    gamma,
                    m.reward_lr,
                    m.reward_clip_norm,
                )?;
            }
        }

        Self::advance(&mut self.state, Phase::Relabel)?;
        self.relabel_buffer();

        Self::advance(&mut self.state, Phase::PolicyLearning)?;
        if !self.state.buffer.is_empty() {
            for _ in 0..t.policy_steps {
                let batch = self.state.buffer.sample(t.policy_batch, &mut self.state.rngs.policy);
                self.state.policy.td_update(&batch, gamma)?;
            }
        }

        Self::advance(&mut self.state, Phase::Eval)?;
        let stats = self.evaluate()?;
        // loss terms under the updated model: NLL over all of D
        let (nll, agent_pref, total) = if self.state.dataset.is_empty() {
            let v = agent_pref_value(self.learned_reward(), &agent_segs, gamma)?;
            (f64::NAN, v, f64::NAN)
        } else {
            let parts = rebel_loss(self.learned_reward(), &self.state.dataset.all(), &agent_segs, t.lambda, gamma)?;
            (parts.nll, parts.agent_pref, parts.total)
        };
        self.state.iteration = k;
        Ok(LogRow {
            seed: self.seed,
            iter: k,
            env_steps: self.state.env_steps,
            feedback_total: self.state.dataset.len(),
            bt_nll: nll,
            agent_pref,
            rebel_loss: total,
            true_return_mean: stats.true_return_mean,
            true_return_std: stats.true_return_std,
            learned_return_mean: stats.learned_return_mean,
            wallclock_s: if t.log_wallclock {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        })
    }

    pub fn evaluate(&mut self) -> Result<EvalStats> {
        let mut policy = self.state.policy.clone();
        policy.greedy = self.config.train.eval_greedy;
        evaluate_policy(
            &self.env,
            &policy,
            self.config.train.eval_episodes,
            self.env.gamma(),
            Some(&self.state.reward),
            &mut self.state.rngs.eval,
        )
    }

    /// `None` unless the environment is a gridworld.
    pub fn substitution_gap(&self) -> Result<Option<SubstitutionGap>> {
        let Env::Grid(g) = &self.env else {
            return Ok(None);
        };
        let (ns, na) = (g.mdp.n_states(), g.mdp.n_actions());
        let mut reward = Vec::with_capacity(ns * na);
        let mut table = Vec::with_capacity(ns * na);
        for s in 0..ns {
            let x = g.one_hot(s);
            for a in 0..na {
                reward.push(self.state.reward.reward(&x, a));
            }
            table.extend(self.state.policy.action_probs(&x));
        }
        let tau = self.state.policy.config.alpha;
        let horizon = Horizon::Finite(g.mdp.horizon);
        let opt = soft_value_iteration(&g.mdp, &reward, Backup::Soft(tau), horizon)?;
        let policy = PolicyTable::new(vec![table], ns, na)?;
        let v = evaluate_policy_table(&g.mdp, &reward, &policy, Some(tau), horizon)?;
        let s0 = g.mdp.start_state;
        Ok(Some(SubstitutionGap {
            iter: self.state.iteration,
            v_opt: opt.value(s0),
            v_policy: v[0][s0],
        }))
    }

    pub fn write_checkpoints(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let k = self.state.iteration;
        fs::write(dir.join(format!("reward_iter{k}.ckpt")), self.state.reward.to_checkpoint())?;
        fs::write(dir.join(format!("policy_iter{k}.ckpt")), self.state.policy.to_checkpoint())?;
        Ok(())
    }
}

/// Fresh models and a buffer pre-filled with `pretrain_steps` transitions
/// from the uniform random policy.
pub fn pretrain(config: &RunConfig, env: &Env, seed: u64) -> Result<RunState> {
    let m = &config.model;
    let t = &config.train;
    let dim = env.state_dim();
    let reward = RewardModel::new(dim, env.n_actions(), m.reward_hidden.clone(), seed.wrapping_mul(2).wrapping_add(1))?;
    let policy = QPolicy::new(dim, env.n_actions(), m.policy_hidden.clone(), m.td(), seed.wrapping_mul(2).wrapping_add(2))?;
    let mut state = RunState {
        iteration: 0,
        dataset: PreferenceDataset::new(),
        buffer: ReplayBuffer::new(t.buffer_capacity, dim),
        reward,
        policy,
        env_steps: 0,
        rngs: Streams::new(seed),
        phases: Vec::new(),
    };
    let n_actions = env.n_actions();
    let mut remaining = t.pretrain_steps;
    while remaining > 0 {
        let traj = rollout(
            env,
            |_, r| r.gen_range(0..n_actions),
            env.horizon(),
            BehaviorTag::Pretrain,
            &mut state.rngs.env,
        )?;
        let seg = &traj.segment;
        for h in 0..seg.len().min(remaining) {
            let (s, a) = (seg.state(h), seg.actions()[h]);
            let r = if t.oracle_reward {
                env.true_reward(s, a)
            } else {
                state.reward.reward(s, a)
            };
            state.buffer.push(s, a, seg.state(h + 1), r);
            state.env_steps += 1;
        }
        remaining -= seg.len().min(remaining);
    }
    Ok(state)
}

/// Output of [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    /// Per seed, in configuration order.
    pub rows: Vec<Vec<LogRow>>,
}

pub fn seed_csv_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.csv"))
}

pub fn write_rows(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::parse(format!("{}: unexpected CSV header {header:?}", path.display())));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Mean and population std across seeds of every numeric column, per iteration.
pub fn summarize(per_seed: &[Vec<LogRow>]) -> Result<Vec<SummaryRow>> {
    let Some(first) = per_seed.first() else {
        return Ok(Vec::new());
    };
    if per_seed.iter().any(|rows| rows.len() != first.len()) {
        return Err(Error::contract("seeds have different iteration counts"));
    }
    let metrics: [fn(&LogRow) -> f64; 9] = [
        |r| r.env_steps as f64,
        |r| r.feedback_total as f64,
        |r| r.bt_nll,
        |r| r.agent_pref,
        |r| r.rebel_loss,
        |r| r.true_return_mean,
        |r| r.true_return_std,
        |r| r.learned_return_mean,
        |r| r.wallclock_s,
    ];
    let mut out = Vec::with_capacity(first.len());
    for i in 0..first.len() {
        let mut values = Vec::with_capacity(metrics.len() * 2);
        for f in metrics {
            let xs: Vec<f64> = per_seed.iter().map(|rows| f(&rows[i])).collect();
            let (m, s) = mean_std(&xs);
            values.push(m);
            values.push(s);
        }
        out.push(SummaryRow {
            iter: first[i].iter,
            n_seeds: per_seed.len(),
            values,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub iter: usize,
    pub n_seeds: usize,
    /// `(mean, std)` pairs in [`CSV_HEADER`] order, starting at `env_steps`.
    pub values: Vec<f64>,
}

pub fn summary_header() -> Vec<String> {
    let mut h = vec!["iter".to_string(), "n_seeds".to_string()];
    for name in &CSV_HEADER[2..] {
        h.push(format!("{name}_mean"));
        h.push(format!("{name}_std"));
    }
    h
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(summary_header())?;
    for r in rows {
        let mut rec = vec![r.iter.to_string(), r.n_seeds.to_string()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Pre-fill plus `T` iterations for every seed. Writes the frozen config,
/// `seed_{s}.csv` per seed, `summary.csv`, and checkpoints under `seed_{s}/`.
/// A failed seed leaves a `FAILED` marker with the error and aborts the run.
pub fn run_experiment(config: &RunConfig, out: &Path, hub: Option<Arc<FeedbackHub>>) -> Result<ExperimentOutcome> {
    config.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), config.to_toml())?;
    let mut all_rows = Vec::with_capacity(config.train.seeds.len());
    for &seed in &config.train.seeds {
        let result = run_seed(config, seed, out, hub.clone());
        match result {
            Ok(rows) => all_rows.push(rows),
            Err(e) => {
                fs::write(out.join("FAILED"), format!("seed {seed}: {e}\n"))?;
                return Err(e);
            }
        }
    }
    write_summary(&out.join("summary.csv"), &summarize(&all_rows)?)?;
    Ok(ExperimentOutcome {
        dir: out.to_path_buf(),
        rows: all_rows,
    })
}

fn run_seed(config: &RunConfig, seed: u64, out: &Path, hub: Option<Arc<FeedbackHub>>) -> Result<Vec<LogRow>> {
    let mut trainer = Trainer::new(config.clone(), seed, hub)?;
    let seed_dir = out.join(format!("seed_{seed}"));
    let mut rows = Vec::with_capacity(config.train.iterations);
    let mut gaps = Vec::new();
    for _ in 0..config.train.iterations {
        rows.push(trainer.iterate()?);
        if config.train.checkpoints {
            trainer.write_checkpoints(&seed_dir)?;
        }
        if config.env.name == EnvName::Grid {
            gaps.extend(trainer.substitution_gap()?);
        }
    }
    write_rows(&seed_csv_path(out, seed), &rows)?;
    if !gaps.is_empty() {
        fs::create_dir_all(&seed_dir)?;
        let mut w = csv::Writer::from_path(seed_dir.join("substitution_gap.csv"))?;
        w.write_record(["iter", "v_opt", "v_policy", "gap"])?;
        for g in gaps {
            w.write_record(&[
                g.iter.to_string(),
                g.v_opt.to_string(),
                g.v_policy.to_string(),
                (g.v_opt - g.v_policy).to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(rows)
}

/// Greedy or sampled evaluation of a saved policy checkpoint.
pub fn evaluate_checkpoint(config: &RunConfig, checkpoint: &Path, seed: u64) -> Result<EvalStats> {
    let env = config.env.build()?;
    let text = fs::read_to_string(checkpoint)?;
    let mut policy = QPolicy::from_checkpoint(&text, config.model.td())?;
    policy.greedy = config.train.eval_greedy;
    if policy.state_dim() != env.state_dim() || policy.n_actions() != env.n_actions() {
        return Err(Error::config("checkpoint does not match the configured environment"));
    }
    let mut rng = Streams::new(seed).eval;
    evaluate_policy(&env, &policy, config.train.eval_episodes, env.gamma(), None, &mut rng)
}
