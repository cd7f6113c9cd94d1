//! Exact tabular checks of the bilevel reward-learning objective and its
//! first-order reformulations: the value-constrained problem, the envelope
//! gradient identity, the penalty objective and its lower bound.
//!
//! Everything here is finite-horizon with time-indexed policies, and the
//! inner problem is entropy-regularised at temperature `τ` so that
//! `ν ↦ V(π*(ν))` is smooth. `V(π_θ)` is always the soft value at the same
//! temperature, so `V(π_θ) ≤ V(π*(ν))` with equality at the soft optimum.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::envs::{GridSpec, TabularMdp};
use crate::error::{Error, Result};
use crate::policy::{evaluate_policy_table, soft_value_iteration, state_distributions, Backup, Horizon, PolicyTable};
use crate::scalar::{logistic, softmax_into, softplus, Scalar};
use crate::SimRng;

/// Per-(s, a) feature vectors, flat `[s][a][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    n_states: usize,
    n_actions: usize,
    dim: usize,
    values: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(n_states: usize, n_actions: usize, dim: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != n_states * n_actions * dim {
            return Err(Error::Dimension {
                context: "feature map",
                expected: n_states * n_actions * dim,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            dim,
            values,
        })
    }

    /// State one-hot followed by action one-hot.
    pub fn indicator(n_states: usize, n_actions: usize) -> Self {
        let dim = n_states + n_actions;
        let mut values = vec![T::zero(); n_states * n_actions * dim];
        for s in 0..n_states {
            for a in 0..n_actions {
                let base = (s * n_actions + a) * dim;
                values[base + s] = T::one();
                values[base + n_states + a] = T::one();
            }
        }
        Self {
            n_states,
            n_actions,
            dim,
            values,
        }
    }

    /// Bias, normalised row and column, closeness to the goal, a goal
    /// indicator, and the action one-hot.
    pub fn grid(spec: &GridSpec) -> Self {
        let n = spec.width * spec.height;
        let dim = 5 + 4;
        let norm = |x: usize, n: usize| if n > 1 { x as f64 / (n - 1) as f64 } else { 0.0 };
        let max_dist = ((spec.width - 1) + (spec.height - 1)).max(1) as f64;
        let mut values = vec![T::zero(); n * 4 * dim];
        for s in 0..n {
            let (r, c) = spec.cell(s);
            let dist = r.abs_diff(spec.goal.0) + c.abs_diff(spec.goal.1);
            let base_feats = [
                1.0,
                norm(r, spec.height),
                norm(c, spec.width),
                1.0 - dist as f64 / max_dist,
                if dist == 0 { 1.0 } else { 0.0 },
            ];
            for a in 0..4 {
                let base = (s * 4 + a) * dim;
                for (k, &f) in base_feats.iter().enumerate() {
                    values[base + k] = T::lit(f);
                }
                values[base + 5 + a] = T::one();
            }
        }
        Self {
            n_states: n,
            n_actions: 4,
            dim,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn phi(&self, s: usize, a: usize) -> &[T] {
        let base = (s * self.n_actions + a) * self.dim;
        &self.values[base..base + self.dim]
    }
}

/// `r_ν(s, a) = σ(φ(s, a)·ν)`, strictly inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRewardModel<T> {
    pub weights: Vec<T>,
    pub features: FeatureMap<T>,
}

impl<T: Scalar> LinearRewardModel<T> {
    pub fn new(features: FeatureMap<T>, weights: Vec<T>) -> Result<Self> {
        if weights.len() != features.dim {
            return Err(Error::Dimension {
                context: "linear reward weights",
                expected: features.dim,
                got: weights.len(),
            });
        }
        Ok(Self { weights, features })
    }

    pub fn zeros(features: FeatureMap<T>) -> Self {
        Self {
            weights: vec![T::zero(); features.dim],
            features,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn logit(&self, s: usize, a: usize) -> T {
        self.features.phi(s, a).iter().zip(&self.weights).map(|(&f, &w)| f * w).sum()
    }

    pub fn reward(&self, s: usize, a: usize) -> T {
        logistic(self.logit(s, a))
    }

    /// `∇_ν r = r(1 − r)·φ`, accumulated with weight `scale`.
    pub fn add_reward_grad(&self, s: usize, a: usize, scale: T, out: &mut [T]) {
        let r = self.reward(s, a);
        let k = scale * r * (T::one() - r);
        for (o, &f) in out.iter_mut().zip(self.features.phi(s, a)) {
            *o += k * f;
        }
    }

    pub fn reward_table(&self) -> Vec<T> {
        let (ns, na) = (self.features.n_states, self.features.n_actions);
        let mut out = Vec::with_capacity(ns * na);
        for s in 0..ns {
            for a in 0..na {
                out.push(self.reward(s, a));
            }
        }
        out
    }
}

/// A trajectory through a tabular MDP, as state and action indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TabularSegment {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TabularPreference {
    pub a: TabularSegment,
    pub b: TabularSegment,
    pub prefer_a: bool,
}

fn check_model<T: Scalar>(mdp: &TabularMdp<T>, model: &LinearRewardModel<T>) -> Result<()> {
    if model.features.n_states != mdp.n_states() || model.features.n_actions != mdp.n_actions() {
        return Err(Error::contract("feature map does not match the MDP"));
    }
    Ok(())
}

fn check_temperature<T: Scalar>(tau: T) -> Result<()> {
    if tau > T::zero() && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::contract("temperature must be positive"))
    }
}

/// Uniform-random rollouts from the start state, labelled by a Bradley-Terry
/// teacher with rationality `beta` on `true_reward` (flat `[s][a]`).
pub fn sample_preference_batch<T: Scalar>(
    mdp: &TabularMdp<T>,
    true_reward: &[T],
    n_pairs: usize,
    beta: f64,
    rng: &mut SimRng,
) -> Vec<TabularPreference> {
    let na = mdp.n_actions();
    let roll = |rng: &mut SimRng| {
        let mut s = mdp.start_state;
        let mut seg = TabularSegment {
            states: Vec::with_capacity(mdp.horizon),
            actions: Vec::with_capacity(mdp.horizon),
        };
        for _ in 0..mdp.horizon {
            let a = rng.gen_range(0..na);
            seg.states.push(s);
            seg.actions.push(a);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let row = mdp.transition(s, a);
            let mut next = row.len() - 1;
            for (i, p) in row.iter().enumerate() {
                acc += p.as_f64();
                if u < acc {
                    next = i;
                    break;
                }
            }
            s = next;
        }
        seg
    };
    let gamma = mdp.gamma.as_f64();
    let score = |seg: &TabularSegment| -> f64 {
        let mut g = 0.0;
        let mut disc = 1.0;
        for (&s, &a) in seg.states.iter().zip(&seg.actions) {
            g += disc * true_reward[s * na + a].as_f64();
            disc *= gamma;
        }
        g
    };
    (0..n_pairs)
        .map(|_| {
            let a = roll(rng);
            let b = roll(rng);
            let p = logistic(beta * (score(&a) - score(&b)));
            let prefer_a = rng.gen::<f64>() < p;
            TabularPreference { a, b, prefer_a }
        })
        .collect()
}

fn segment_score<T: Scalar>(model: &LinearRewardModel<T>, seg: &TabularSegment, gamma: T) -> T {
    let mut g = T::zero();
    let mut disc = T::one();
    for (&s, &a) in seg.states.iter().zip(&seg.actions) {
        g += disc * model.reward(s, a);
        disc *= gamma;
    }
    g
}

fn add_segment_grad<T: Scalar>(model: &LinearRewardModel<T>, seg: &TabularSegment, gamma: T, scale: T, out: &mut [T]) {
    let mut disc = scale;
    for (&s, &a) in seg.states.iter().zip(&seg.actions) {
        model.add_reward_grad(s, a, disc, out);
        disc *= gamma;
    }
}

/// Mean Bradley-Terry log-likelihood of the batch (to be maximised).
pub fn log_likelihood<T: Scalar>(model: &LinearRewardModel<T>, batch: &[TabularPreference], gamma: T) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::contract("preference batch is empty"));
    }
    let mut total = T::zero();
    for p in batch {
        let diff = segment_score(model, &p.a, gamma) - segment_score(model, &p.b, gamma);
        let signed = if p.prefer_a { diff } else { -diff };
        total -= softplus(-signed);
    }
    Ok(total / T::from_usize_lossy(batch.len()))
}

/// Gradient of [`log_likelihood`] in `ν`.
pub fn log_likelihood_grad<T: Scalar>(
    model: &LinearRewardModel<T>,
    batch: &[TabularPreference],
    gamma: T,
) -> Result<Vec<T>> {
    if batch.is_empty() {
        return Err(Error::contract("preference batch is empty"));
    }
    let n = T::from_usize_lossy(batch.len());
    let mut grad = vec![T::zero(); model.dim()];
    for p in batch {
        let diff = segment_score(model, &p.a, gamma) - segment_score(model, &p.b, gamma);
        let y = if p.prefer_a { T::one() } else { T::zero() };
        let w = (y - logistic(diff)) / n;
        add_segment_grad(model, &p.a, gamma, w, &mut grad);
        add_segment_grad(model, &p.b, gamma, -w, &mut grad);
    }
    Ok(grad)
}

/// Soft-optimal inner solution under `r_ν`.
pub fn inner_solve<T: Scalar>(
    mdp: &TabularMdp<T>,
    model: &LinearRewardModel<T>,
    tau: T,
) -> Result<crate::policy::ValueSolution<T>> {
    check_model(mdp, model)?;
    check_temperature(tau)?;
    soft_value_iteration(mdp, &model.reward_table(), Backup::Soft(tau), Horizon::Finite(mdp.horizon))
}

/// Start-state soft value of a fixed time-indexed policy.
pub fn policy_value<T: Scalar>(
    mdp: &TabularMdp<T>,
    model: &LinearRewardModel<T>,
    policy: &PolicyTable<T>,
    tau: T,
) -> Result<T> {
    check_model(mdp, model)?;
    let v = evaluate_policy_table(mdp, &model.reward_table(), policy, Some(tau), Horizon::Finite(mdp.horizon))?;
    Ok(v[0][mdp.start_state])
}

/// `∇_ν V(π)` with `π` held fixed: `Σ_h γ^h E_{d_h, π}[∇_ν r_ν]`. The
/// entropy bonus does not depend on `ν`.
pub fn fixed_policy_value_grad<T: Scalar>(
    mdp: &TabularMdp<T>,
    model: &LinearRewardModel<T>,
    policy: &PolicyTable<T>,
) -> Result<Vec<T>> {
    check_model(mdp, model)?;
    let dists = state_distributions(mdp, policy, mdp.horizon);
    let mut grad = vec![T::zero(); model.dim()];
    let mut disc = T::one();
    for (h, d) in dists.iter().enumerate() {
        for (s, &ds) in d.iter().enumerate() {
            if ds == T::zero() {
                continue;
            }
            for (a, &p) in policy.probs(h, s).iter().enumerate() {
                if p > T::zero() {
                    model.add_reward_grad(s, a, disc * ds * p, &mut grad);
                }
            }
        }
        disc *= mdp.gamma;
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterValue<T> {
    pub likelihood: T,
    pub v_opt: T,
}

pub fn exact_outer_value<T: Scalar>(
    mdp: &TabularMdp<T>,
    model: &LinearRewardModel<T>,
    batch: &[TabularPreference],
    tau: T,
) -> Result<OuterValue<T>> {
    let sol = inner_solve(mdp, model, tau)?;
    Ok(OuterValue {
        likelihood: log_likelihood(model, batch, mdp.gamma)?,
        v_opt: sol.value(mdp.start_state),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeReport<T> {
    pub fd_grad: Vec<T>,
    pub partial_grad: Vec<T>,
    pub max_abs_diff: T,
}

/// Compares a central difference of `V(π*(ν))` (re-solving at every probe)
/// with the gradient at the optimum held fixed, on the listed coordinates.
pub fn envelope_check<T: Scalar>(
    mdp: &TabularMdp<T>,
    model: &LinearRewardModel<T>,
    probe_dims: &[usize],
    fd_step: T,
    tau: T,
) -> Result<EnvelopeReport<T>> {
    if !(fd_step > T::zero()) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    if let Some(&k) = probe_dims.iter().find(|&&k| k >= model.dim()) {
        return Err(Error::contract(format!("probe dimension {k} out of range")));
    }
    let sol = inner_solve(mdp, model, tau)?;
    let full = fixed_policy_value_grad(mdp, model, &sol.policy)?;
    let mut probe = model.clone();
    let two = T::lit(2.0);
    let mut fd_grad = Vec::with_capacity(probe_dims.len());
    let mut partial_grad = Vec::with_capacity(probe_dims.len());
    let mut max_abs_diff = T::zero();
    for &k in probe_dims {
        let w = model.weights[k];
        probe.weights[k] = w + fd_step;
        let plus = inner_solve(mdp, &probe, tau)?.value(mdp.start_state);
        probe.weights[k] = w - fd_step;
        let minus = inner_solve(mdp, &probe, tau)?.value(mdp.start_state);
        probe.weights[k] = w;
        let fd = (plus - minus) / (two * fd_step);
        max_abs_diff = max_abs_diff.max((fd - full[k]).abs());
        fd_grad.push(fd);
        partial_grad.push(full[k]);
    }
    Ok(EnvelopeReport {
        fd_grad,
        partial_grad,
        max_abs_diff,
    })
}

/// `L(ν) + λ (V(π_θ) − V(π*(ν)))`.
pub fn penalty_objective<T: Scalar>(
    mdp: &TabularMdp<T>,
    model: &LinearRewardModel<T>,
    policy: &PolicyTable<T>,
    batch: &[TabularPreference],
    lambda: T,
    tau: T,
) -> Result<T> {
    let outer = exact_outer_value(mdp, model, batch, tau)?;
    let v = policy_value(mdp, model, policy, tau)?;
    Ok(outer.likelihood + lambda * (v - outer.v_opt))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerBound<T> {
    pub eq8_value: T,
    /// `L(ν) − λ V(π*(ν))`.
    pub eq9_value: T,
    pub policy_value: T,
    pub holds: bool,
}

impl<T: Scalar> LowerBound<T> {
    pub fn gap(&self) -> T {
        self.eq8_value - self.eq9_value
    }
}

pub fn lower_bound_check<T: Scalar>(
    mdp: &TabularMdp<T>,
    model: &LinearRewardModel<T>,
    policy: &PolicyTable<T>,
    batch: &[TabularPreference],
    lambda: T,
    tau: T,
) -> Result<LowerBound<T>> {
    if !(lambda >= T::zero()) {
        return Err(Error::contract("penalty coefficient must be non-negative"));
    }
    let outer = exact_outer_value(mdp, model, batch, tau)?;
    let v = policy_value(mdp, model, policy, tau)?;
    let eq8_value = outer.likelihood + lambda * (v - outer.v_opt);
    let eq9_value = outer.likelihood - lambda * outer.v_opt;
    Ok(LowerBound {
        eq8_value,
        eq9_value,
        policy_value: v,
        holds: eq9_value <= eq8_value + T::lit(1e-12),
    })
}

/// Time-indexed softmax policy `π_h(a|s) ∝ exp(z_h(s, a))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitPolicy<T> {
    /// `[h][s * A + a]`.
    pub logits: Vec<Vec<T>>,
    pub n_states: usize,
    pub n_actions: usize,
}

impl<T: Scalar> LogitPolicy<T> {
    pub fn zeros(n_steps: usize, n_states: usize, n_actions: usize) -> Self {
        Self {
            logits: vec![vec![T::zero(); n_states * n_actions]; n_steps],
            n_states,
            n_actions,
        }
    }

    pub fn random(n_steps: usize, n_states: usize, n_actions: usize, scale: f64, rng: &mut SimRng) -> Self {
        let logits = (0..n_steps)
            .map(|_| {
                (0..n_states * n_actions)
                    .map(|_| T::lit(rng.gen_range(-scale..scale)))
                    .collect()
            })
            .collect();
        Self {
            logits,
            n_states,
            n_actions,
        }
    }

    pub fn table(&self) -> PolicyTable<T> {
        let na = self.n_actions;
        let steps = self
            .logits
            .iter()
            .map(|z| {
                let mut p = vec![T::zero(); z.len()];
                for (zr, pr) in z.chunks(na).zip(p.chunks_mut(na)) {
                    softmax_into(zr, T::one(), pr);
                }
                p
            })
            .collect();
        PolicyTable::new(steps, self.n_states, self.n_actions).expect("softmax rows are distributions")
    }
}

/// Exact `∂V(π_z)/∂z_h(s, b) = γ^h d_h(s) π_h(b|s) (Q_h(s,b) − τ log π_h(b|s) − V_h(s))`
/// for the soft value of a softmax policy.
pub fn policy_value_logit_grad<T: Scalar>(
    mdp: &TabularMdp<T>,
    model: &LinearRewardModel<T>,
    policy: &LogitPolicy<T>,
    tau: T,
) -> Result<Vec<Vec<T>>> {
    check_model(mdp, model)?;
    let horizon = mdp.horizon;
    if policy.logits.len() != horizon {
        return Err(Error::Dimension {
            context: "logit policy steps",
            expected: horizon,
            got: policy.logits.len(),
        });
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let table = policy.table();
    let reward = model.reward_table();
    let values = evaluate_policy_table(mdp, &reward, &table, Some(tau), Horizon::Finite(horizon))?;
    let dists = state_distributions(mdp, &table, horizon);
    let mut grad = vec![vec![T::zero(); ns * na]; horizon];
    let mut disc = T::one();
    for h in 0..horizon {
        for s in 0..ns {
            let ds = dists[h][s];
            if ds == T::zero() {
                continue;
            }
            let probs = table.probs(h, s);
            for b in 0..na {
                let p = probs[b];
                if p == T::zero() {
                    continue;
                }
                let ev: T = mdp
                    .transition(s, b)
                    .iter()
                    .zip(&values[h + 1])
                    .map(|(&pr, &v)| pr * v)
                    .sum();
                let q = reward[s * na + b] + mdp.gamma * ev;
                grad[h][s * na + b] = disc * ds * p * (q - tau * p.ln() - values[h][s]);
            }
        }
        disc *= mdp.gamma;
    }
    Ok(grad)
}

/// `Σ_{h<H} γ^h`: the largest achievable undiscounted-reward value.
pub fn value_scale<T: Scalar>(mdp: &TabularMdp<T>) -> T {
    let mut total = T::zero();
    let mut disc = T::one();
    for _ in 0..mdp.horizon {
        total += disc;
        disc *= mdp.gamma;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow<T> {
    pub lambda: T,
    /// `V(π*(ν)) − V(π_θ)` at the final iterate.
    pub constraint_gap: T,
    pub likelihood: T,
}

/// For each `λ`, gradient ascent on the penalty objective jointly in `ν`
/// and the policy logits, from `ν = 0` and a uniform policy.
pub fn penalty_sweep<T: Scalar>(
    mdp: &TabularMdp<T>,
    features: &FeatureMap<T>,
    batch: &[TabularPreference],
    lambdas: &[T],
    tau: T,
    outer_steps: usize,
    step_size: T,
) -> Result<Vec<SweepRow<T>>> {
    if lambdas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::contract("lambda list must be strictly ascending"));
    }
    if lambdas.iter().any(|&l| !(l >= T::zero())) {
        return Err(Error::contract("penalty coefficients must be non-negative"));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut model = LinearRewardModel::zeros(features.clone());
        let mut policy = LogitPolicy::zeros(mdp.horizon, ns, na);
        for _ in 0..outer_steps {
            let mut g_nu = log_likelihood_grad(&model, batch, mdp.gamma)?;
            if lambda > T::zero() {
                let optimum = inner_solve(mdp, &model, tau)?;
                let table = policy.table();
                let g_pi = fixed_policy_value_grad(mdp, &model, &table)?;
                let g_opt = fixed_policy_value_grad(mdp, &model, &optimum.policy)?;
                let g_theta = policy_value_logit_grad(mdp, &model, &policy, tau)?;
                for ((g, &a), &b) in g_nu.iter_mut().zip(&g_pi).zip(&g_opt) {
                    *g += lambda * (a - b);
                }
                for (z, g) in policy.logits.iter_mut().zip(&g_theta) {
                    for (zi, &gi) in z.iter_mut().zip(g) {
                        *zi += step_size * lambda * gi;
                    }
                }
            }
            if g_nu.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite("penalty ascent step".into()));
            }
            for (w, &g) in model.weights.iter_mut().zip(&g_nu) {
                *w += step_size * g;
            }
        }
        let optimum = inner_solve(mdp, &model, tau)?;
        let v = policy_value(mdp, &model, &policy.table(), tau)?;
        rows.push(SweepRow {
            lambda,
            constraint_gap: optimum.value(mdp.start_state) - v,
            likelihood: log_likelihood(&model, batch, mdp.gamma)?,
        });
    }
    Ok(rows)
}

/// Settings for the full verification suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub seed: u64,
    pub temperature: f64,
    pub fd_step: f64,
    pub envelope_tol: f64,
    pub envelope_draws: usize,
    pub lower_bound_draws: usize,
    pub gap_tol: f64,
    pub lambdas: Vec<f64>,
    pub outer_steps: usize,
    pub step_size: f64,
    /// Allowed increase of the constraint gap between consecutive `λ`.
    pub sweep_noise_tol: f64,
    /// The largest `λ` must end with a gap below this fraction of the value scale.
    pub sweep_gap_fraction: f64,
    pub n_pairs: usize,
    pub teacher_beta: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            temperature: 0.1,
            fd_step: 1e-5,
            envelope_tol: 1e-3,
            envelope_draws: 20,
            lower_bound_draws: 200,
            gap_tol: 1e-10,
            lambdas: vec![0.0, 0.1, 1.0, 10.0],
            outer_steps: 300,
            step_size: 0.5,
            sweep_noise_tol: 1e-3,
            sweep_gap_fraction: 0.05,
            n_pairs: 32,
            teacher_beta: 5.0,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("temperature", self.temperature),
            ("fd_step", self.fd_step),
            ("envelope_tol", self.envelope_tol),
            ("gap_tol", self.gap_tol),
            ("step_size", self.step_size),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("verify.{name} must be positive")));
            }
        }
        if self.envelope_draws == 0 || self.lower_bound_draws == 0 || self.n_pairs == 0 {
            return Err(Error::config("verify draw and pair counts must be at least 1"));
        }
        if self.lambdas.is_empty() || self.lambdas.windows(2).any(|w| !(w[0] < w[1])) || self.lambdas[0] < 0.0 {
            return Err(Error::config("verify.lambdas must be non-negative and strictly ascending"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// The worst observed value of the checked quantity.
    pub achieved: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    pub sweep: Vec<SweepRow<f64>>,
    pub value_scale: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("bilevel verification\n");
        for c in &self.checks {
            out.push_str(&format!(
                "{} {:<14} achieved={:.3e} tol={:.3e}  {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.achieved,
                c.tolerance,
                c.detail
            ));
        }
        out.push_str(&format!("value scale {:.6}\n", self.value_scale));
        out.push_str("lambda constraint_gap likelihood\n");
        for r in &self.sweep {
            out.push_str(&format!("{} {:.9} {:.9}\n", r.lambda, r.constraint_gap, r.likelihood));
        }
        out.push_str(if self.passed() { "result: PASS\n" } else { "result: FAIL\n" });
        out
    }

    pub fn sweep_csv(&self) -> String {
        let mut out = String::from("lambda,constraint_gap,likelihood\n");
        for r in &self.sweep {
            out.push_str(&format!("{},{},{}\n", r.lambda, r.constraint_gap, r.likelihood));
        }
        out
    }
}

fn draw_weights(dim: usize, rng: &mut SimRng) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

pub fn run_envelope_suite(spec: &GridSpec, config: &VerifyConfig) -> Result<CheckResult> {
    let mdp: TabularMdp<f64> = spec.build()?;
    let features = FeatureMap::grid(spec);
    let dims: Vec<usize> = (0..features.dim()).collect();
    let mut rng = SimRng::seed_from_u64(config.seed);
    let mut worst = 0.0_f64;
    for _ in 0..config.envelope_draws {
        let model = LinearRewardModel::new(features.clone(), draw_weights(features.dim(), &mut rng))?;
        let rep = envelope_check(&mdp, &model, &dims, config.fd_step, config.temperature)?;
        worst = worst.max(rep.max_abs_diff);
    }
    Ok(CheckResult {
        name: "envelope",
        passed: worst <= config.envelope_tol,
        achieved: worst,
        tolerance: config.envelope_tol,
        detail: format!("{} draws, temperature {}, fd_step {}", config.envelope_draws, config.temperature, config.fd_step),
    })
}

pub fn run_lower_bound_suite(spec: &GridSpec, config: &VerifyConfig) -> Result<CheckResult> {
    let mdp: TabularMdp<f64> = spec.build()?;
    let features = FeatureMap::grid(spec);
    let mut rng = SimRng::seed_from_u64(config.seed.wrapping_add(1));
    let batch = sample_preference_batch(&mdp, mdp.reward_table(), config.n_pairs, config.teacher_beta, &mut rng);
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut worst = 0.0_f64;
    let mut all_hold = true;
    for _ in 0..config.lower_bound_draws {
        let model = LinearRewardModel::new(features.clone(), draw_weights(features.dim(), &mut rng))?;
        let policy = LogitPolicy::random(mdp.horizon, ns, na, 3.0, &mut rng).table();
        let lambda = rng.gen_range(0.0..10.0);
        let lb = lower_bound_check(&mdp, &model, &policy, &batch, lambda, config.temperature)?;
        all_hold &= lb.holds && lb.policy_value >= 0.0;
        worst = worst.max((lb.gap() - lambda * lb.policy_value).abs());
    }
    Ok(CheckResult {
        name: "lower_bound",
        passed: all_hold && worst <= config.gap_tol,
        achieved: worst,
        tolerance: config.gap_tol,
        detail: format!(
            "{} draws, bound {}",
            config.lower_bound_draws,
            if all_hold { "held in every draw" } else { "VIOLATED" }
        ),
    })
}

pub fn run_penalty_suite(spec: &GridSpec, config: &VerifyConfig) -> Result<(CheckResult, Vec<SweepRow<f64>>, f64)> {
    let mdp: TabularMdp<f64> = spec.build()?;
    let features = FeatureMap::grid(spec);
    let mut rng = SimRng::seed_from_u64(config.seed.wrapping_add(2));
    let batch = sample_preference_batch(&mdp, mdp.reward_table(), config.n_pairs, config.teacher_beta, &mut rng);
    let rows = penalty_sweep(
        &mdp,
        &features,
        &batch,
        &config.lambdas,
        config.temperature,
        config.outer_steps,
        config.step_size,
    )?;
    let scale = value_scale(&mdp);
    let worst_increase = rows
        .windows(2)
        .map(|w| w[1].constraint_gap - w[0].constraint_gap)
        .fold(0.0_f64, f64::max);
    let last = rows.last().map_or(0.0, |r| r.constraint_gap);
    let limit = config.sweep_gap_fraction * scale;
    let check = CheckResult {
        name: "penalty_sweep",
        passed: worst_increase <= config.sweep_noise_tol && last <= limit,
        achieved: worst_increase,
        tolerance: config.sweep_noise_tol,
        detail: format!("final gap {last:.6} (limit {limit:.6}), {} steps", config.outer_steps),
    };
    Ok((check, rows, scale))
}

/// Runs the envelope, lower-bound and penalty-sweep suites on a grid.
pub fn run_verification(spec: &GridSpec, config: &VerifyConfig) -> Result<VerifyReport> {
    config.validate()?;
    let envelope = run_envelope_suite(spec, config)?;
    let lower = run_lower_bound_suite(spec, config)?;
    let (penalty, sweep, value_scale) = run_penalty_suite(spec, config)?;
    Ok(VerifyReport {
        checks: vec![envelope, lower, penalty],
        sweep,
        value_scale,
    })
}
