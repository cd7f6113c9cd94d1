//! Learned reward `r_ν(s, a)`, the Bradley-Terry preference likelihood, the
//! agent-preference value regulariser and the combined training step.

use rand::seq::index::sample;

use crate::envs::{BehaviorTag, Segment};
use crate::error::{Error, Result};
use crate::math::{clip_global_norm, ForwardCache, NetSpec, OutputActivation};
use crate::scalar::{logistic, softplus, Scalar};
use crate::teacher::{Preference, PreferenceRecord};
use crate::{Mlp, ParamVector, SimRng};

/// Anything that scores a `(state, action)` pair.
pub trait RewardFn {
    fn reward(&self, state: &[f64], action: usize) -> f64;

    /// Per-step rewards along a segment.
    fn segment_rewards(&self, seg: &Segment) -> Vec<f64> {
        seg.steps().map(|(s, a)| self.reward(s, a)).collect()
    }
}

/// MLP reward with logistic output, so every reward lies in `(0, 1)`.
/// Input is the state followed by a one-hot action.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    pub net: Mlp,
    state_dim: usize,
    n_actions: usize,
}

impl RewardModel {
    pub fn new(state_dim: usize, n_actions: usize, hidden: Vec<usize>, seed: u64) -> Result<Self> {
        let spec = NetSpec::new(state_dim + n_actions, hidden, 1, OutputActivation::Logistic)?;
        Ok(Self {
            net: Mlp::new(spec, seed)?,
            state_dim,
            n_actions,
        })
    }

    pub fn from_net(net: Mlp, state_dim: usize, n_actions: usize) -> Result<Self> {
        if net.spec.input_dim != state_dim + n_actions || net.spec.output_dim != 1 {
            return Err(Error::contract("reward network shape does not fit state/action space"));
        }
        if net.spec.output_activation != OutputActivation::Logistic {
            return Err(Error::contract("reward network must have a logistic output"));
        }
        Ok(Self {
            net,
            state_dim,
            n_actions,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn params(&self) -> &ParamVector {
        &self.net.params
    }

    #[inline]
    fn encode(&self, state: &[f64], action: usize, buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend_from_slice(state);
        buf.resize(self.state_dim + self.n_actions, 0.0);
        buf[self.state_dim + action] = 1.0;
    }

    fn check(&self, seg: &Segment) -> Result<()> {
        if seg.state_dim() != self.state_dim {
            return Err(Error::Dimension {
                context: "reward model state",
                expected: self.state_dim,
                got: seg.state_dim(),
            });
        }
        if let Some(&a) = seg.actions().iter().find(|&&a| a >= self.n_actions) {
            return Err(Error::contract(format!("action {a} outside reward model action set")));
        }
        Ok(())
    }

    /// Adds `coeff * ∇_ν G_ν(seg)` into `grad`.
    fn accumulate_score_grad(
        &self,
        seg: &Segment,
        gamma: f64,
        coeff: f64,
        grad: &mut [f64],
        cache: &mut ForwardCache<f64>,
        buf: &mut Vec<f64>,
    ) {
        let mut discount = coeff;
        for (s, a) in seg.steps() {
            self.encode(s, a, buf);
            self.net.forward(buf, cache);
            self.net.backward(cache, &[discount], grad);
            discount *= gamma;
        }
    }

    pub fn to_checkpoint(&self) -> String {
        format!(
            "reward state_dim={} n_actions={}\n{}",
            self.state_dim,
            self.n_actions,
            self.net.to_checkpoint()
        )
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let (head, rest) = text
            .split_once('\n')
            .ok_or_else(|| Error::parse("empty reward checkpoint"))?;
        let mut dims = (None, None);
        for kv in head.split_whitespace().skip(1) {
            match kv.split_once('=') {
                Some(("state_dim", v)) => dims.0 = v.parse().ok(),
                Some(("n_actions", v)) => dims.1 = v.parse().ok(),
                _ => return Err(Error::parse(format!("bad reward header field `{kv}`"))),
            }
        }
        match (head.split_whitespace().next(), dims) {
            (Some("reward"), (Some(s), Some(a))) => Self::from_net(Mlp::from_checkpoint(rest)?, s, a),
            _ => Err(Error::parse(format!("bad reward checkpoint header `{head}`"))),
        }
    }
}

impl RewardFn for RewardModel {
    fn reward(&self, state: &[f64], action: usize) -> f64 {
        let mut cache = ForwardCache::default();
        let mut buf = Vec::with_capacity(self.state_dim + self.n_actions);
        self.encode(state, action, &mut buf);
        self.net.forward(&buf, &mut cache)[0]
    }

    fn segment_rewards(&self, seg: &Segment) -> Vec<f64> {
        let mut cache = ForwardCache::default();
        let mut buf = Vec::with_capacity(self.state_dim + self.n_actions);
        seg.steps()
            .map(|(s, a)| {
                self.encode(s, a, &mut buf);
                self.net.forward(&buf, &mut cache)[0]
            })
            .collect()
    }
}

/// Discounted learned return `G_ν(τ) = Σ_h γ^h r_ν(s_h, a_h)`.
pub fn traj_score<R: RewardFn + ?Sized>(model: &R, seg: &Segment, gamma: f64) -> f64 {
    crate::envs::discounted_return(&model.segment_rewards(seg), gamma)
}

fn checked_score(model: &RewardModel, seg: &Segment, gamma: f64) -> Result<f64> {
    model.check(seg)?;
    Ok(traj_score(model, seg, gamma))
}

/// Bradley-Terry probability that `a` is preferred, `1 / (1 + exp(b - a))`.
#[inline]
pub fn bt_prob<T: Scalar>(score_a: T, score_b: T) -> T {
    logistic(score_a - score_b)
}

/// Negative log-likelihood of one label given the score gap `a - b`.
#[inline]
fn label_nll<T: Scalar>(gap: T, label: Preference) -> T {
    match label {
        Preference::A => softplus(-gap),
        Preference::B => softplus(gap),
    }
}

/// Mean negative log-likelihood of the labels under the Bradley-Terry model.
pub fn bt_nll<R: RewardFn + ?Sized>(model: &R, batch: &[&PreferenceRecord], gamma: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::contract("preference batch is empty"));
    }
    let total: f64 = batch
        .iter()
        .map(|rec| {
            let gap = traj_score(model, &rec.a, gamma) - traj_score(model, &rec.b, gamma);
            label_nll(gap, rec.label)
        })
        .sum();
    Ok(total / batch.len() as f64)
}

fn check_agent_trajs(agent: &[&Segment]) -> Result<()> {
    let first = agent
        .first()
        .ok_or_else(|| Error::contract("agent-preference estimate needs at least one trajectory"))?;
    match first.tag {
        BehaviorTag::PolicyIter(_) => {}
        other => {
            return Err(Error::contract(format!(
                "agent trajectories must come from the current policy, got {other:?}"
            )))
        }
    }
    if agent.iter().any(|s| s.tag != first.tag) {
        return Err(Error::contract("agent trajectories mix behaviour tags"));
    }
    Ok(())
}

/// Monte-Carlo value of the current policy under the learned reward: the
/// mean discounted learned return over `agent` rollouts.
pub fn agent_pref_value<R: RewardFn + ?Sized>(model: &R, agent: &[&Segment], gamma: f64) -> Result<f64> {
    check_agent_trajs(agent)?;
    let total: f64 = agent.iter().map(|s| traj_score(model, s, gamma)).sum();
    Ok(total / agent.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub nll: f64,
    pub agent_pref: f64,
    pub total: f64,
}

/// `bt_nll + λ · agent_pref_value`.
pub fn rebel_loss<R: RewardFn + ?Sized>(
    model: &R,
    batch: &[&PreferenceRecord],
    agent: &[&Segment],
    lambda: f64,
    gamma: f64,
) -> Result<LossParts> {
    if !(lambda >= 0.0) {
        return Err(Error::contract("lambda must be >= 0"));
    }
    let nll = bt_nll(model, batch, gamma)?;
    let agent_pref = agent_pref_value(model, agent, gamma)?;
    Ok(LossParts {
        nll,
        agent_pref,
        total: nll + lambda * agent_pref,
    })
}

/// Loss and its exact gradient with respect to the reward parameters.
pub fn rebel_loss_grad(
    model: &RewardModel,
    batch: &[&PreferenceRecord],
    agent: &[&Segment],
    lambda: f64,
    gamma: f64,
) -> Result<(LossParts, ParamVector)> {
    if !(lambda >= 0.0) {
        return Err(Error::contract("lambda must be >= 0"));
    }
    if batch.is_empty() {
        return Err(Error::contract("preference batch is empty"));
    }
    check_agent_trajs(agent)?;

    let mut grad = model.params().zeros_like();
    let mut cache = ForwardCache::default();
    let mut buf = Vec::new();
    let inv_n = 1.0 / batch.len() as f64;
    let mut nll = 0.0;
    for rec in batch {
        let gap = checked_score(model, &rec.a, gamma)? - checked_score(model, &rec.b, gamma)?;
        nll += label_nll(gap, rec.label);
        // d nll / d gap = σ(gap) - y
        let y = if rec.label == Preference::A { 1.0 } else { 0.0 };
        let coeff = (logistic(gap) - y) * inv_n;
        let g = grad.as_mut_slice();
        model.accumulate_score_grad(&rec.a, gamma, coeff, g, &mut cache, &mut buf);
        model.accumulate_score_grad(&rec.b, gamma, -coeff, g, &mut cache, &mut buf);
    }
    nll *= inv_n;

    let inv_k = 1.0 / agent.len() as f64;
    let mut value = 0.0;
    for seg in agent {
        value += checked_score(model, seg, gamma)?;
        if lambda > 0.0 {
            model.accumulate_score_grad(seg, gamma, lambda * inv_k, grad.as_mut_slice(), &mut cache, &mut buf);
        }
    }
    let agent_pref = value * inv_k;
    Ok((
        LossParts {
            nll,
            agent_pref,
            total: nll + lambda * agent_pref,
        },
        grad,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub loss: LossParts,
    pub grad_norm: f64,
}

/// One clipped gradient-descent step on [`rebel_loss`]. On a non-finite
/// gradient the model is left untouched and an error is returned.
#[allow(clippy::too_many_arguments)]
pub fn reward_update(
    model: &mut RewardModel,
    batch: &[&PreferenceRecord],
    agent: &[&Segment],
    lambda: f64,
    gamma: f64,
    lr: f64,
    clip_norm: f64,
) -> Result<UpdateStats> {
    if !(lr >= 0.0) || !(clip_norm > 0.0) {
        return Err(Error::contract("learning rate must be >= 0 and clip norm > 0"));
    }
    let (loss, mut grad) = rebel_loss_grad(model, batch, agent, lambda, gamma)?;
    if !grad.is_finite() {
        return Err(Error::NonFinite(format!(
            "reward gradient (loss {:?}, norm {})",
            loss,
            grad.norm()
        )));
    }
    let grad_norm = clip_global_norm(grad.as_mut_slice(), clip_norm);
    model.net.params.axpy(-lr, &grad);
    Ok(UpdateStats { loss, grad_norm })
}

/// Append-only store of labelled pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PreferenceDataset {
    records: Vec<PreferenceRecord>,
}

impl PreferenceDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: PreferenceRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[PreferenceRecord] {
        &self.records
    }

    pub fn all(&self) -> Vec<&PreferenceRecord> {
        self.records.iter().collect()
    }

    /// Uniform minibatch without replacement; the whole set if `size >= len`.
    pub fn sample(&self, size: usize, rng: &mut SimRng) -> Vec<&PreferenceRecord> {
        if size >= self.records.len() {
            return self.all();
        }
        sample(rng, self.records.len(), size)
            .into_iter()
            .map(|i| &self.records[i])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::math::finite_diff_grad;
    use crate::teacher::TeacherSource;
    use rand::{Rng, SeedableRng};

    struct Const(f64);
    impl RewardFn for Const {
        fn reward(&self, _: &[f64], _: usize) -> f64 {
            self.0
        }
    }

    fn random_segment(rng: &mut SimRng, h: usize, dim: usize, n_actions: usize, tag: BehaviorTag) -> Segment {
        let states = (0..(h + 1) * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let actions = (0..h).map(|_| rng.gen_range(0..n_actions)).collect();
        Segment::new(states, dim, actions, tag).unwrap()
    }

    fn random_record(rng: &mut SimRng, h: usize) -> PreferenceRecord {
        let a = random_segment(rng, h, 3, 2, BehaviorTag::Pretrain);
        let b = random_segment(rng, h, 3, 2, BehaviorTag::Pretrain);
        let label = if rng.gen() { Preference::A } else { Preference::B };
        PreferenceRecord::new(a, b, label, TeacherSource::Scripted).unwrap()
    }

    #[test]
    fn score_of_constant_doubles() {
        let mut rng = SimRng::seed_from_u64(0);
        let seg = random_segment(&mut rng, 3, 3, 2, BehaviorTag::Eval);
        assert_eq!(traj_score(&Const(0.0), &seg, 0.5), 0.0);
        assert_eq!(traj_score(&Const(1.0), &seg, 0.5), 1.75);
    }

    #[test]
    fn score_composes_per_step_rewards() {
        let mut rng = SimRng::seed_from_u64(1);
        let model = RewardModel::new(3, 2, vec![8], 3).unwrap();
        let seg = random_segment(&mut rng, 10, 3, 2, BehaviorTag::Eval);
        let per_step: Vec<f64> = seg.steps().map(|(s, a)| model.reward(s, a)).collect();
        let expected = crate::envs::discounted_return(&per_step, 0.9);
        assert!((traj_score(&model, &seg, 0.9) - expected).abs() < 1e-15);
        let upper = (1.0 - 0.9_f64.powi(10)) / (1.0 - 0.9);
        let s = traj_score(&model, &seg, 0.9);
        assert!(s > 0.0 && s < upper);
    }

    #[test]
    fn bt_prob_examples() {
        assert_eq!(bt_prob(2.0, 2.0), 0.5);
        assert!((bt_prob(3.0_f64.ln(), 0.0) - 0.75).abs() < 1e-15);
        let p = bt_prob(1000.0_f64, 0.0);
        assert!(p.is_finite() && (1.0 - p) < 1e-12);
    }

    #[test]
    fn nll_examples() {
        let mut rng = SimRng::seed_from_u64(2);
        let recs: Vec<_> = (0..5).map(|_| random_record(&mut rng, 4)).collect();
        let batch: Vec<_> = recs.iter().collect();
        let ln2 = std::f64::consts::LN_2;
        assert!((bt_nll(&Const(0.3), &batch, 0.9).unwrap() - ln2).abs() < 1e-15);
        assert!(bt_nll(&Const(0.3), &[], 0.9).is_err());
    }

    #[test]
    fn nll_vanishes_when_labels_are_saturated() {
        // Reward 1 on action 0 and ~0 elsewhere; long horizon, label A where A took action 0.
        struct Picky;
        impl RewardFn for Picky {
            fn reward(&self, _: &[f64], a: usize) -> f64 {
                if a == 0 {
                    1e6
                } else {
                    0.0
                }
            }
        }
        let a = Segment::new(vec![0.0; 3], 1, vec![0, 0], BehaviorTag::Pretrain).unwrap();
        let b = Segment::new(vec![0.0; 3], 1, vec![1, 1], BehaviorTag::Pretrain).unwrap();
        let rec = PreferenceRecord::new(a, b, Preference::A, TeacherSource::Scripted).unwrap();
        assert!(bt_nll(&Picky, &[&rec], 1.0).unwrap() < 1e-12);
    }

    #[test]
    fn nll_matches_naive_summation() {
        let mut rng = SimRng::seed_from_u64(3);
        let model = RewardModel::new(3, 2, vec![6], 9).unwrap();
        let recs: Vec<_> = (0..20).map(|_| random_record(&mut rng, 12)).collect();
        let batch: Vec<_> = recs.iter().collect();
        let naive: f64 = batch
            .iter()
            .map(|r| {
                let ga = traj_score(&model, &r.a, 0.95).clamp(-20.0, 20.0);
                let gb = traj_score(&model, &r.b, 0.95).clamp(-20.0, 20.0);
                let pa = ga.exp() / (ga.exp() + gb.exp());
                match r.label {
                    Preference::A => -pa.ln(),
                    Preference::B => -(1.0 - pa).ln(),
                }
            })
            .sum::<f64>()
            / batch.len() as f64;
        assert!((bt_nll(&model, &batch, 0.95).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn agent_pref_contracts() {
        let mut rng = SimRng::seed_from_u64(4);
        let model = RewardModel::new(3, 2, vec![4], 1).unwrap();
        let seg = random_segment(&mut rng, 5, 3, 2, BehaviorTag::PolicyIter(2));
        let single = agent_pref_value(&model, &[&seg], 0.9).unwrap();
        assert_eq!(single, traj_score(&model, &seg, 0.9));
        let dup = agent_pref_value(&model, &[&seg, &seg, &seg], 0.9).unwrap();
        assert!((dup - single).abs() < 1e-15);
        assert!(agent_pref_value(&model, &[], 0.9).is_err());
        let other = random_segment(&mut rng, 5, 3, 2, BehaviorTag::Pretrain);
        assert!(agent_pref_value(&model, &[&other], 0.9).is_err());
        let stale = random_segment(&mut rng, 5, 3, 2, BehaviorTag::PolicyIter(1));
        assert!(agent_pref_value(&model, &[&seg, &stale], 0.9).is_err());
    }

    #[test]
    fn agent_pref_is_the_arithmetic_mean() {
        let mut rng = SimRng::seed_from_u64(5);
        let model = RewardModel::new(3, 2, vec![4], 1).unwrap();
        let segs: Vec<_> = (0..16)
            .map(|_| random_segment(&mut rng, 7, 3, 2, BehaviorTag::PolicyIter(0)))
            .collect();
        let refs: Vec<_> = segs.iter().collect();
        let mut mean = 0.0;
        for (i, s) in segs.iter().enumerate() {
            mean += (traj_score(&model, s, 0.9) - mean) / (i + 1) as f64;
        }
        assert!((agent_pref_value(&model, &refs, 0.9).unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn rebel_loss_composition() {
        let mut rng = SimRng::seed_from_u64(6);
        let model = RewardModel::new(3, 2, vec![5], 2).unwrap();
        let recs: Vec<_> = (0..6).map(|_| random_record(&mut rng, 5)).collect();
        let batch: Vec<_> = recs.iter().collect();
        let agent = random_segment(&mut rng, 5, 3, 2, BehaviorTag::PolicyIter(0));
        let nll = bt_nll(&model, &batch, 0.9).unwrap();
        let v = agent_pref_value(&model, &[&agent], 0.9).unwrap();
        assert_eq!(rebel_loss(&model, &batch, &[&agent], 0.0, 0.9).unwrap().total, nll);
        let half = rebel_loss(&model, &batch, &[&agent], 0.5, 0.9).unwrap();
        assert!((half.total - (nll + 0.5 * v)).abs() < 1e-14);
        let zero = rebel_loss(&Const(0.0), &batch, &[&agent], 1.0, 0.9).unwrap();
        assert!((zero.total - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(rebel_loss(&model, &batch, &[&agent], -0.1, 0.9).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut rng = SimRng::seed_from_u64(7);
        let mut model = RewardModel::new(3, 2, vec![5], 2).unwrap();
        let before = model.clone();
        let recs: Vec<_> = (0..4).map(|_| random_record(&mut rng, 5)).collect();
        let batch: Vec<_> = recs.iter().collect();
        let agent = random_segment(&mut rng, 5, 3, 2, BehaviorTag::PolicyIter(0));
        reward_update(&mut model, &batch, &[&agent], 0.5, 0.9, 0.0, 10.0).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn small_step_decreases_loss() {
        let mut rng = SimRng::seed_from_u64(8);
        // smallest admissible reward net: one tanh unit
        let mut model = RewardModel::new(3, 2, vec![1], 4).unwrap();
        let recs: Vec<_> = (0..8).map(|_| random_record(&mut rng, 5)).collect();
        let batch: Vec<_> = recs.iter().collect();
        let agent = random_segment(&mut rng, 5, 3, 2, BehaviorTag::PolicyIter(0));
        let before = rebel_loss(&model, &batch, &[&agent], 0.5, 0.9).unwrap().total;
        let (_, grad) = rebel_loss_grad(&model, &batch, &[&agent], 0.5, 0.9).unwrap();
        // scan along the negative gradient ray
        let mut prev = before;
        for k in 1..=5 {
            let mut probe = model.clone();
            probe.net.params.axpy(-1e-4 * k as f64, &grad);
            let l = rebel_loss(&probe, &batch, &[&agent], 0.5, 0.9).unwrap().total;
            assert!(l < prev);
            prev = l;
        }
        reward_update(&mut model, &batch, &[&agent], 0.5, 0.9, 1e-3, 1e6).unwrap();
        assert!(rebel_loss(&model, &batch, &[&agent], 0.5, 0.9).unwrap().total < before);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = SimRng::seed_from_u64(9);
        let model = RewardModel::new(3, 2, vec![6, 4], 5).unwrap();
        let recs: Vec<_> = (0..5).map(|_| random_record(&mut rng, 6)).collect();
        let batch: Vec<_> = recs.iter().collect();
        let agents: Vec<_> = (0..3)
            .map(|_| random_segment(&mut rng, 6, 3, 2, BehaviorTag::PolicyIter(1)))
            .collect();
        let agent: Vec<_> = agents.iter().collect();
        let (_, g) = rebel_loss_grad(&model, &batch, &agent, 0.7, 0.9).unwrap();
        let fd = finite_diff_grad(
            |p: &ParamVector| {
                let mut m = model.clone();
                m.net.params = p.clone();
                rebel_loss(&m, &batch, &agent, 0.7, 0.9).unwrap().total
            },
            model.params(),
            1e-6,
        )
        .unwrap();
        for (a, b) in g.as_slice().iter().zip(fd.as_slice()) {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
            assert!(rel <= 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn dataset_sampling() {
        let mut rng = SimRng::seed_from_u64(10);
        let mut d = PreferenceDataset::new();
        for _ in 0..10 {
            d.push(random_record(&mut rng, 2));
        }
        assert_eq!(d.sample(4, &mut rng).len(), 4);
        assert_eq!(d.sample(40, &mut rng).len(), 10);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = RewardModel::new(4, 9, vec![16], 3).unwrap();
        assert_eq!(RewardModel::from_checkpoint(&m.to_checkpoint()).unwrap(), m);
    }

    proptest! {
        #[test]
        fn bt_is_normalised_and_shift_invariant(a in -50.0..50.0_f64, b in -50.0..50.0_f64, c in -50.0..50.0_f64) {
            prop_assert!((bt_prob(a, b) + bt_prob(b, a) - 1.0).abs() <= 1e-12);
            prop_assert!((bt_prob(a + c, b + c) - bt_prob(a, b)).abs() <= 1e-12);
        }

        #[test]
        fn loss_is_affine_and_nondecreasing_in_lambda(seed in 0..1000_u64, l1 in 0.0..5.0_f64, l2 in 0.0..5.0_f64) {
            let mut rng = SimRng::seed_from_u64(seed);
            let model = RewardModel::new(3, 2, vec![4], seed).unwrap();
            let recs: Vec<_> = (0..3).map(|_| random_record(&mut rng, 4)).collect();
            let agents: Vec<_> = (0..2).map(|_| random_segment(&mut rng, 4, 3, 2, BehaviorTag::PolicyIter(1))).collect();
            let batch: Vec<_> = recs.iter().collect();
            let agent: Vec<_> = agents.iter().collect();
            let (lo, hi) = (l1.min(l2), l1.max(l2));
            let p_lo = rebel_loss(&model, &batch, &agent, lo, 0.9).unwrap();
            let p_hi = rebel_loss(&model, &batch, &agent, hi, 0.9).unwrap();
            prop_assert!(p_lo.agent_pref >= 0.0);
            prop_assert!(p_hi.total >= p_lo.total - 1e-12);
            prop_assert!((p_hi.total - p_lo.total - (hi - lo) * p_lo.agent_pref).abs() <= 1e-12);
        }
    }
}
