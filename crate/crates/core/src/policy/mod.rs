//! Policy optimisation on a (learned) reward: a soft Q-learner with a
//! softmax policy over a finite action set, a relabelable replay buffer,
//! Monte-Carlo evaluation, and exact tabular solvers.

mod replay;
pub mod tabular;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use replay::{ReplayBuffer, Transition};
pub use tabular::{
    evaluate_policy_table, soft_value_iteration, state_distributions, Backup, Horizon, PolicyTable, ValueSolution,
};

use crate::envs::{discounted_return, rollout, BehaviorTag, Env};
use crate::error::{Error, Result};
use crate::math::{Adam, AdamConfig, ForwardCache, NetSpec, OutputActivation};
use crate::reward::RewardFn;
use crate::scalar::{log_sum_exp, softmax_into};
use crate::{Mlp, ParamVector, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TdConfig {
    /// Softmax temperature of the policy and the soft backup.
    pub alpha: f64,
    pub lr: f64,
    /// Target network refresh period, in updates.
    pub target_every: usize,
    /// Gradient norm cap applied before the optimiser step.
    pub clip_norm: f64,
}

impl Default for TdConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            lr: 1e-3,
            target_every: 100,
            clip_norm: 10.0,
        }
    }
}

/// Action-value network `Q_θ(s, ·)` inducing `π(a|s) ∝ exp(Q(s,a)/α)`.
#[derive(Debug, Clone)]
pub struct QPolicy {
    pub net: Mlp,
    target: Mlp,
    pub config: TdConfig,
    /// Act greedily instead of sampling (the `α → 0` limit).
    pub greedy: bool,
    updates: usize,
    optimizer: Adam<f64>,
}

impl PartialEq for QPolicy {
    fn eq(&self, other: &Self) -> bool {
        self.net == other.net && self.target == other.target && self.updates == other.updates
    }
}

impl QPolicy {
    /// The output layer starts at zero, so the initial policy is uniform.
    pub fn new(state_dim: usize, n_actions: usize, hidden: Vec<usize>, config: TdConfig, seed: u64) -> Result<Self> {
        let spec = NetSpec::new(state_dim, hidden, n_actions, OutputActivation::Identity)?;
        let mut net = Mlp::new(spec, seed)?;
        let last = net.params.layout().len() - 1;
        let start = net.params.layer_offset(last);
        net.params.as_mut_slice()[start..].iter_mut().for_each(|w| *w = 0.0);
        Self::from_net(net, config)
    }

    pub fn from_net(net: Mlp, config: TdConfig) -> Result<Self> {
        if !(config.alpha > 0.0) {
            return Err(Error::config("policy temperature alpha must be positive"));
        }
        if config.target_every == 0 {
            return Err(Error::config("target_every must be at least 1"));
        }
        let optimizer = Adam::new(AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        });
        Ok(Self {
            target: net.clone(),
            net,
            config,
            greedy: false,
            updates: 0,
            optimizer,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.net.spec.output_dim
    }

    pub fn state_dim(&self) -> usize {
        self.net.spec.input_dim
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn params(&self) -> &ParamVector {
        &self.net.params
    }

    pub fn q_values(&self, state: &[f64]) -> Vec<f64> {
        let mut cache = ForwardCache::default();
        self.net.forward(state, &mut cache).to_vec()
    }

    /// `softmax(Q(state)/α)`.
    pub fn action_probs(&self, state: &[f64]) -> Vec<f64> {
        let q = self.q_values(state);
        let mut p = vec![0.0; q.len()];
        softmax_into(&q, self.config.alpha, &mut p);
        p
    }

    /// Samples `a ~ π(·|state)`, or the argmax in greedy mode (lowest index on ties).
    pub fn act(&self, state: &[f64], rng: &mut SimRng) -> usize {
        let q = self.q_values(state);
        if self.greedy {
            return argmax(&q);
        }
        let mut p = vec![0.0; q.len()];
        softmax_into(&q, self.config.alpha, &mut p);
        sample_categorical(&p, rng)
    }

    /// Mean squared soft-TD error and its gradient.
    ///
    /// Target: `r + γ α log Σ_a' exp(Q_target(s', a')/α)`.
    pub fn td_loss_grad(&self, batch: &[Transition<'_>], gamma: f64) -> Result<(f64, ParamVector)> {
        if batch.is_empty() {
            return Err(Error::contract("TD batch is empty"));
        }
        let alpha = self.config.alpha;
        let n = batch.len() as f64;
        let mut grad = self.net.params.zeros_like();
        let mut cache = ForwardCache::default();
        let mut tcache = ForwardCache::default();
        let mut scaled = vec![0.0; self.n_actions()];
        let mut out_grad = vec![0.0; self.n_actions()];
        let mut loss = 0.0;
        for t in batch {
            let next_q = self.target.forward(t.next_state, &mut tcache);
            for (z, &q) in scaled.iter_mut().zip(next_q) {
                *z = q / alpha;
            }
            let y = t.reward + gamma * alpha * log_sum_exp(&scaled);
            if !y.is_finite() {
                return Err(Error::NonFinite(format!("TD target for action {}", t.action)));
            }
            let q = self.net.forward(t.state, &mut cache)[t.action];
            let err = q - y;
            loss += err * err;
            out_grad.iter_mut().for_each(|g| *g = 0.0);
            out_grad[t.action] = 2.0 * err / n;
            self.net.backward(&mut cache, &out_grad, grad.as_mut_slice());
        }
        Ok((loss / n, grad))
    }

    /// One optimiser step on the TD loss; refreshes the target network every
    /// `target_every` updates. Returns the pre-step loss.
    pub fn td_update(&mut self, batch: &[Transition<'_>], gamma: f64) -> Result<f64> {
        let (loss, mut grad) = self.td_loss_grad(batch, gamma)?;
        if !grad.is_finite() {
            return Err(Error::NonFinite("TD gradient".into()));
        }
        crate::math::clip_global_norm(grad.as_mut_slice(), self.config.clip_norm);
        self.optimizer.step(self.net.params.as_mut_slice(), grad.as_slice());
        self.updates += 1;
        if self.updates % self.config.target_every == 0 {
            self.sync_target();
        }
        Ok(loss)
    }

    pub fn sync_target(&mut self) {
        self.target.params = self.net.params.clone();
    }

    pub fn to_checkpoint(&self) -> String {
        format!(
            "policy alpha={} greedy={}\n{}",
            self.config.alpha,
            self.greedy,
            self.net.to_checkpoint()
        )
    }

    /// Restores network weights; optimiser state starts fresh.
    pub fn from_checkpoint(text: &str, config: TdConfig) -> Result<Self> {
        let (head, rest) = text
            .split_once('\n')
            .ok_or_else(|| Error::parse("empty policy checkpoint"))?;
        let mut it = head.split_whitespace();
        if it.next() != Some("policy") {
            return Err(Error::parse(format!("bad policy checkpoint header `{head}`")));
        }
        let mut config = config;
        let mut greedy = false;
        for kv in it {
            match kv.split_once('=') {
                Some(("alpha", v)) => {
                    config.alpha = v.parse().map_err(|_| Error::parse(format!("bad alpha `{v}`")))?
                }
                Some(("greedy", v)) => greedy = v == "true",
                _ => return Err(Error::parse(format!("bad policy header field `{kv}`"))),
            }
        }
        let mut p = Self::from_net(Mlp::from_checkpoint(rest)?, config)?;
        p.greedy = greedy;
        Ok(p)
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn sample_categorical(p: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub true_return_mean: f64,
    /// Population standard deviation over episodes.
    pub true_return_std: f64,
    /// `NaN` when no learned reward was supplied.
    pub learned_return_mean: f64,
}

/// Monte-Carlo evaluation on fresh rollouts; true and learned returns are
/// computed on the same trajectories.
pub fn evaluate_policy(
    env: &Env,
    policy: &QPolicy,
    n_episodes: usize,
    gamma: f64,
    learned: Option<&dyn RewardFn>,
    rng: &mut SimRng,
) -> Result<EvalStats> {
    if n_episodes == 0 {
        return Err(Error::contract("evaluation needs at least one episode"));
    }
    let mut true_returns = Vec::with_capacity(n_episodes);
    let mut learned_sum = 0.0;
    for _ in 0..n_episodes {
        let t = rollout(env, |s, r| policy.act(s, r), env.horizon(), BehaviorTag::Eval, rng)?;
        true_returns.push(discounted_return(t.true_rewards(), gamma));
        if let Some(model) = learned {
            learned_sum += discounted_return(&model.segment_rewards(&t.segment), gamma);
        }
    }
    let (mean, std) = mean_std(&true_returns);
    Ok(EvalStats {
        true_return_mean: mean,
        true_return_std: std,
        learned_return_mean: if learned.is_some() {
            learned_sum / n_episodes as f64
        } else {
            f64::NAN
        },
    })
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
