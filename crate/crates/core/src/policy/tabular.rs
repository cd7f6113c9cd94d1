//! Exact tabular solvers: soft (entropy-regularised) and hard value
//! iteration, policy evaluation and state-occupancy propagation.

use crate::envs::TabularMdp;
use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Scalar};

/// Bellman backup operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Backup<T> {
    /// `V = τ log Σ_a exp(Q/τ)`, policy `softmax(Q/τ)`.
    Soft(T),
    /// `V = max_a Q`, policy uniform over maximisers.
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    /// Discounted infinite horizon, iterated to a fixed point.
    Infinite,
    /// `H` backward passes; values and policies are indexed by step.
    Finite(usize),
}

/// A (possibly time-indexed) tabular policy. A single step means stationary.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable<T> {
    steps: Vec<Vec<T>>,
    n_states: usize,
    n_actions: usize,
}

impl<T: Scalar> PolicyTable<T> {
    /// Each step is a flat `[s][a]` table whose rows are distributions.
    pub fn new(steps: Vec<Vec<T>>, n_states: usize, n_actions: usize) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::contract("policy table has no steps"));
        }
        let tol = T::lit(1e-9);
        for (h, table) in steps.iter().enumerate() {
            if table.len() != n_states * n_actions {
                return Err(Error::Dimension {
                    context: "policy table",
                    expected: n_states * n_actions,
                    got: table.len(),
                });
            }
            for (s, row) in table.chunks(n_actions).enumerate() {
                let sum: T = row.iter().copied().sum();
                if row.iter().any(|&p| !p.is_finite() || p < T::zero()) || (sum - T::one()).abs() > tol {
                    return Err(Error::contract(format!("policy row (h={h}, s={s}) is not a distribution")));
                }
            }
        }
        Ok(Self {
            steps,
            n_states,
            n_actions,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize, n_steps: usize) -> Self {
        let p = T::one() / T::from_usize_lossy(n_actions);
        Self {
            steps: vec![vec![p; n_states * n_actions]; n_steps.max(1)],
            n_states,
            n_actions,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn is_stationary(&self) -> bool {
        self.steps.len() == 1
    }

    /// Action distribution at step `h` in state `s`. Stationary tables ignore `h`.
    #[inline]
    pub fn probs(&self, h: usize, s: usize) -> &[T] {
        let table = &self.steps[h.min(self.steps.len() - 1)];
        &table[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn step_table(&self, h: usize) -> &[T] {
        &self.steps[h.min(self.steps.len() - 1)]
    }
}

/// Solution of a value-iteration run.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSolution<T> {
    /// `[h][s]`; `H + 1` rows for finite horizons (last row zero), 1 otherwise.
    pub values: Vec<Vec<T>>,
    /// `[h][s * A + a]`; `H` rows for finite horizons, 1 otherwise.
    pub q: Vec<Vec<T>>,
    pub policy: PolicyTable<T>,
    /// Sup-norm change per sweep (infinite horizon only).
    pub residuals: Vec<T>,
}

impl<T: Scalar> ValueSolution<T> {
    pub fn value(&self, s: usize) -> T {
        self.values[0][s]
    }
}

fn check_reward<T: Scalar>(mdp: &TabularMdp<T>, reward: &[T]) -> Result<()> {
    if reward.len() != mdp.n_states() * mdp.n_actions() {
        return Err(Error::Dimension {
            context: "reward table",
            expected: mdp.n_states() * mdp.n_actions(),
            got: reward.len(),
        });
    }
    if reward.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("reward table".into()));
    }
    Ok(())
}

fn backup_row<T: Scalar>(q: &[T], backup: Backup<T>, policy_out: &mut [T]) -> T {
    match backup {
        Backup::Soft(tau) => {
            let scaled: Vec<T> = q.iter().map(|&x| x / tau).collect();
            let lse = log_sum_exp(&scaled);
            for (p, &z) in policy_out.iter_mut().zip(&scaled) {
                *p = (z - lse).exp();
            }
            tau * lse
        }
        Backup::Hard => {
            let max = q.iter().copied().fold(T::neg_infinity(), T::max);
            let ties = q.iter().filter(|&&x| x == max).count();
            let share = T::one() / T::from_usize_lossy(ties);
            for (p, &x) in policy_out.iter_mut().zip(q) {
                *p = if x == max { share } else { T::zero() };
            }
            max
        }
    }
}

/// `Q(s, a) = r(s, a) + γ Σ_s' P(s'|s,a) V(s')`, written into `q`.
fn q_from_values<T: Scalar>(mdp: &TabularMdp<T>, reward: &[T], next_v: &[T], q: &mut [T]) {
    let na = mdp.n_actions();
    for s in 0..mdp.n_states() {
        for a in 0..na {
            let ev: T = mdp
                .transition(s, a)
                .iter()
                .zip(next_v)
                .map(|(&p, &v)| p * v)
                .sum();
            q[s * na + a] = reward[s * na + a] + mdp.gamma * ev;
        }
    }
}

pub const VI_TOLERANCE: f64 = 1e-10;
pub const VI_MAX_ITERATIONS: usize = 100_000;

/// Value iteration under `reward` (flat `[s][a]`).
pub fn soft_value_iteration<T: Scalar>(
    mdp: &TabularMdp<T>,
    reward: &[T],
    backup: Backup<T>,
    horizon: Horizon,
) -> Result<ValueSolution<T>> {
    check_reward(mdp, reward)?;
    if let Backup::Soft(tau) = backup {
        if !(tau > T::zero()) {
            return Err(Error::contract("temperature must be positive"));
        }
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    match horizon {
        Horizon::Finite(h) => {
            if h == 0 {
                return Err(Error::contract("finite horizon must be at least 1"));
            }
            let mut values = vec![vec![T::zero(); ns]; h + 1];
            let mut qs = vec![vec![T::zero(); ns * na]; h];
            let mut steps = vec![vec![T::zero(); ns * na]; h];
            for t in (0..h).rev() {
                q_from_values(mdp, reward, &values[t + 1], &mut qs[t]);
                for s in 0..ns {
                    values[t][s] =
                        backup_row(&qs[t][s * na..(s + 1) * na], backup, &mut steps[t][s * na..(s + 1) * na]);
                }
            }
            Ok(ValueSolution {
                values,
                q: qs,
                policy: PolicyTable {
                    steps,
                    n_states: ns,
                    n_actions: na,
                },
                residuals: Vec::new(),
            })
        }
        Horizon::Infinite => {
            let mut v = vec![T::zero(); ns];
            let mut q = vec![T::zero(); ns * na];
            let mut pi = vec![T::zero(); ns * na];
            let mut residuals = Vec::new();
            let tol = T::lit(VI_TOLERANCE);
            for _ in 0..VI_MAX_ITERATIONS {
                q_from_values(mdp, reward, &v, &mut q);
                let mut change = T::zero();
                for s in 0..ns {
                    let nv = backup_row(&q[s * na..(s + 1) * na], backup, &mut pi[s * na..(s + 1) * na]);
                    change = change.max((nv - v[s]).abs());
                    v[s] = nv;
                }
                residuals.push(change);
                if change < tol {
                    // refresh Q and the policy at the converged values
                    q_from_values(mdp, reward, &v, &mut q);
                    for s in 0..ns {
                        backup_row(&q[s * na..(s + 1) * na], backup, &mut pi[s * na..(s + 1) * na]);
                    }
                    return Ok(ValueSolution {
                        values: vec![v],
                        q: vec![q],
                        policy: PolicyTable {
                            steps: vec![pi],
                            n_states: ns,
                            n_actions: na,
                        },
                        residuals,
                    });
                }
            }
            Err(Error::Convergence {
                iterations: VI_MAX_ITERATIONS,
                residual: residuals.last().map_or(f64::NAN, |r| r.as_f64()),
            })
        }
    }
}

/// Values of a fixed policy. With `entropy = Some(τ)` each step also earns
/// `τ · H(π(·|s))`, matching the soft objective.
pub fn evaluate_policy_table<T: Scalar>(
    mdp: &TabularMdp<T>,
    reward: &[T],
    policy: &PolicyTable<T>,
    entropy: Option<T>,
    horizon: Horizon,
) -> Result<Vec<Vec<T>>> {
    check_reward(mdp, reward)?;
    if policy.n_states != mdp.n_states() || policy.n_actions != mdp.n_actions() {
        return Err(Error::contract("policy table does not match MDP"));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = vec![T::zero(); ns * na];
    let step_value = |h: usize, s: usize, q: &[T]| -> T {
        let probs = policy.probs(h, s);
        let mut v = T::zero();
        for a in 0..na {
            let p = probs[a];
            if p > T::zero() {
                v += p * q[s * na + a];
                if let Some(tau) = entropy {
                    v -= tau * p * p.ln();
                }
            }
        }
        v
    };
    match horizon {
        Horizon::Finite(h) => {
            let mut values = vec![vec![T::zero(); ns]; h + 1];
            for t in (0..h).rev() {
                q_from_values(mdp, reward, &values[t + 1], &mut q);
                for s in 0..ns {
                    values[t][s] = step_value(t, s, &q);
                }
            }
            Ok(values)
        }
        Horizon::Infinite => {
            if !policy.is_stationary() {
                return Err(Error::contract("infinite-horizon evaluation needs a stationary policy"));
            }
            let mut v = vec![T::zero(); ns];
            let tol = T::lit(VI_TOLERANCE);
            for _ in 0..VI_MAX_ITERATIONS {
                q_from_values(mdp, reward, &v, &mut q);
                let mut change = T::zero();
                for s in 0..ns {
                    let nv = step_value(0, s, &q);
                    change = change.max((nv - v[s]).abs());
                    v[s] = nv;
                }
                if change < tol {
                    return Ok(vec![v]);
                }
            }
            Err(Error::Convergence {
                iterations: VI_MAX_ITERATIONS,
                residual: f64::NAN,
            })
        }
    }
}

/// State distributions `d_h(s)` for `h = 0..steps`, starting from the MDP's
/// start state.
pub fn state_distributions<T: Scalar>(mdp: &TabularMdp<T>, policy: &PolicyTable<T>, steps: usize) -> Vec<Vec<T>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut d = vec![T::zero(); ns];
    d[mdp.start_state] = T::one();
    let mut out = Vec::with_capacity(steps);
    for h in 0..steps {
        let mut next = vec![T::zero(); ns];
        for s in 0..ns {
            if d[s] == T::zero() {
                continue;
            }
            let probs = policy.probs(h, s);
            for a in 0..na {
                let w = d[s] * probs[a];
                if w == T::zero() {
                    continue;
                }
                for (n, &p) in next.iter_mut().zip(mdp.transition(s, a)) {
                    *n += w * p;
                }
            }
        }
        out.push(std::mem::replace(&mut d, next));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::GridSpec;

    fn single() -> TabularMdp<f64> {
        TabularMdp::new(1, 1, vec![1.0], vec![1.0], 0, 10, 0.5).unwrap()
    }

    #[test]
    fn geometric_series() {
        let sol = soft_value_iteration(&single(), &[1.0], Backup::Hard, Horizon::Infinite).unwrap();
        assert!((sol.value(0) - 2.0).abs() < 1e-9);
        let soft = soft_value_iteration(&single(), &[1.0], Backup::Soft(0.3), Horizon::Infinite).unwrap();
        // one action: no entropy bonus
        assert!((soft.value(0) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_rewards() {
        let mdp: TabularMdp<f64> = GridSpec::default().build().unwrap();
        let zero = vec![0.0; 100];
        let hard = soft_value_iteration(&mdp, &zero, Backup::Hard, Horizon::Infinite).unwrap();
        assert!(hard.values[0].iter().all(|&v| v.abs() < 1e-12));
        let tau = 0.2;
        let soft = soft_value_iteration(&mdp, &zero, Backup::Soft(tau), Horizon::Infinite).unwrap();
        let bonus = tau * 4.0_f64.ln() / (1.0 - 0.9);
        assert!(soft.values[0].iter().all(|&v| (v - bonus).abs() < 1e-8));
    }

    #[test]
    fn three_state_chain_backward_induction() {
        // 0 -> 1 -> 2 (self-loop), reward 1 only in state 2; one action.
        let t = vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let r = vec![0.0, 0.0, 1.0];
        let mdp = TabularMdp::new(3, 1, t, r.clone(), 0, 3, 0.9).unwrap();
        let sol = soft_value_iteration(&mdp, &r, Backup::Hard, Horizon::Finite(3)).unwrap();
        // hand-coded backward induction
        let mut v = [0.0_f64; 3];
        let next = [1usize, 2, 2];
        for _ in 0..3 {
            let mut nv = [0.0; 3];
            for s in 0..3 {
                nv[s] = r[s] + 0.9 * v[next[s]];
            }
            v = nv;
        }
        assert!((v[0] - 0.81).abs() < 1e-12);
        assert!((sol.value(0) - v[0]).abs() < 1e-12);
    }

    #[test]
    fn residuals_contract_monotonically() {
        for slip in [0.0, 0.2, 0.6] {
            let mdp: TabularMdp<f64> = GridSpec {
                slip,
                ..GridSpec::default()
            }
            .build()
            .unwrap();
            let r = mdp.reward_table().to_vec();
            for backup in [Backup::Hard, Backup::Soft(0.05), Backup::Soft(1.0)] {
                let sol = soft_value_iteration(&mdp, &r, backup, Horizon::Infinite).unwrap();
                for w in sol.residuals[1..].windows(2) {
                    assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15, "{w:?}");
                }
            }
        }
    }

    #[test]
    fn soft_hard_gap_is_bounded() {
        let mdp: TabularMdp<f64> = GridSpec {
            slip: 0.1,
            ..GridSpec::default()
        }
        .build()
        .unwrap();
        let r = mdp.reward_table().to_vec();
        let hard = soft_value_iteration(&mdp, &r, Backup::Hard, Horizon::Infinite).unwrap();
        let mut prev = hard.values[0].clone();
        for tau in [0.01, 0.1, 0.5, 2.0] {
            let soft = soft_value_iteration(&mdp, &r, Backup::Soft(tau), Horizon::Infinite).unwrap();
            let bound = tau * 4.0_f64.ln() / (1.0 - 0.9);
            for s in 0..mdp.n_states() {
                let gap = soft.values[0][s] - hard.values[0][s];
                assert!(gap >= -1e-9 && gap <= bound + 1e-9);
                assert!(soft.values[0][s] >= prev[s] - 1e-9);
            }
            prev = soft.values[0].clone();
        }
    }

    #[test]
    fn soft_policy_rows_sum_to_one() {
        let mdp: TabularMdp<f64> = GridSpec::default().build().unwrap();
        let sol = soft_value_iteration(&mdp, mdp.reward_table(), Backup::Soft(0.1), Horizon::Finite(25)).unwrap();
        for h in 0..25 {
            for s in 0..25 {
                let sum: f64 = sol.policy.probs(h, s).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn evaluating_the_soft_optimum_recovers_its_value() {
        let mdp: TabularMdp<f64> = GridSpec {
            slip: 0.2,
            ..GridSpec::default()
        }
        .build()
        .unwrap();
        let r = mdp.reward_table();
        for horizon in [Horizon::Finite(25), Horizon::Infinite] {
            let sol = soft_value_iteration(&mdp, r, Backup::Soft(0.3), horizon).unwrap();
            let v = evaluate_policy_table(&mdp, r, &sol.policy, Some(0.3), horizon).unwrap();
            assert!((v[0][0] - sol.value(0)).abs() < 1e-8);
        }
    }

    #[test]
    fn occupancy_is_a_distribution() {
        let mdp: TabularMdp<f64> = GridSpec {
            slip: 0.3,
            ..GridSpec::default()
        }
        .build()
        .unwrap();
        let pi = PolicyTable::uniform(25, 4, 1);
        for d in state_distributions(&mdp, &pi, 25) {
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mdp = single();
        assert!(soft_value_iteration(&mdp, &[f64::NAN], Backup::Hard, Horizon::Infinite).is_err());
        assert!(soft_value_iteration(&mdp, &[1.0], Backup::Soft(0.0), Horizon::Infinite).is_err());
        assert!(PolicyTable::new(vec![vec![0.5_f64]], 1, 1).is_err());
    }

    #[test]
    fn single_precision_solve() {
        let mdp: TabularMdp<f32> = GridSpec::default().build().unwrap();
        let sol = soft_value_iteration(&mdp, mdp.reward_table(), Backup::Soft(0.1f32), Horizon::Finite(25)).unwrap();
        assert!(sol.value(0) > 0.0);
    }
}
