use rand::Rng;

use crate::reward::RewardFn;
use crate::SimRng;

/// One stored transition with its (learned) reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<'a> {
    pub state: &'a [f64],
    pub action: usize,
    pub next_state: &'a [f64],
    pub reward: f64,
}

/// Fixed-capacity ring buffer of `(s, a, s', r)`; the oldest entry is
/// overwritten once full.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    dim: usize,
    capacity: usize,
    states: Vec<f64>,
    next_states: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self {
            dim,
            capacity,
            states: Vec::new(),
            next_states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, state: &[f64], action: usize, next_state: &[f64], reward: f64) {
        debug_assert_eq!(state.len(), self.dim);
        if self.capacity == 0 {
            return;
        }
        if self.len() < self.capacity {
            self.states.extend_from_slice(state);
            self.next_states.extend_from_slice(next_state);
            self.actions.push(action);
            self.rewards.push(reward);
        } else {
            let i = self.cursor;
            self.states[i * self.dim..(i + 1) * self.dim].copy_from_slice(state);
            self.next_states[i * self.dim..(i + 1) * self.dim].copy_from_slice(next_state);
            self.actions[i] = action;
            self.rewards[i] = reward;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> Transition<'_> {
        Transition {
            state: &self.states[i * self.dim..(i + 1) * self.dim],
            action: self.actions[i],
            next_state: &self.next_states[i * self.dim..(i + 1) * self.dim],
            reward: self.rewards[i],
        }
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// Recomputes every stored reward with `model`; order and count are kept.
    pub fn relabel<R: RewardFn + ?Sized>(&mut self, model: &R) {
        for i in 0..self.len() {
            let s = &self.states[i * self.dim..(i + 1) * self.dim];
            self.rewards[i] = model.reward(s, self.actions[i]);
        }
    }

    /// `size` uniform draws with replacement.
    pub fn sample(&self, size: usize, rng: &mut SimRng) -> Vec<Transition<'_>> {
        if self.is_empty() {
            return Vec::new();
        }
        (0..size).map(|_| self.get(rng.gen_range(0..self.len()))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    struct Zero;
    impl RewardFn for Zero {
        fn reward(&self, _: &[f64], _: usize) -> f64 {
            0.0
        }
    }

    struct SumPlusAction;
    impl RewardFn for SumPlusAction {
        fn reward(&self, s: &[f64], a: usize) -> f64 {
            s.iter().sum::<f64>() + a as f64
        }
    }

    fn filled(n: usize, cap: usize) -> ReplayBuffer {
        let mut b = ReplayBuffer::new(cap, 2);
        for i in 0..n {
            let x = i as f64;
            b.push(&[x, -x], i % 3, &[x + 1.0, 0.0], 0.5);
        }
        b
    }

    #[test]
    fn ring_overwrites_oldest() {
        let b = filled(7, 5);
        assert_eq!(b.len(), 5);
        // entries 5 and 6 overwrote slots 0 and 1
        assert_eq!(b.get(0).state, &[5.0, -5.0]);
        assert_eq!(b.get(1).state, &[6.0, -6.0]);
        assert_eq!(b.get(2).state, &[2.0, -2.0]);
    }

    #[test]
    fn relabel_is_idempotent_and_exact() {
        let mut b = filled(300, 300);
        b.relabel(&SumPlusAction);
        let first = b.clone();
        b.relabel(&SumPlusAction);
        assert_eq!(first, b);
        let mut rng = SimRng::seed_from_u64(0);
        for _ in 0..100 {
            let i = rng.gen_range(0..b.len());
            let t = b.get(i);
            assert_eq!(t.reward, SumPlusAction.reward(t.state, t.action));
        }
        b.relabel(&Zero);
        assert!(b.rewards().iter().all(|&r| r == 0.0));
        assert_eq!(b.len(), 300);
    }

    #[test]
    fn zero_capacity_stays_empty() {
        let b = filled(4, 0);
        assert!(b.is_empty());
        let mut rng = SimRng::seed_from_u64(0);
        assert!(b.sample(8, &mut rng).is_empty());
    }
}
