use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 2-D point mass in the arena `[-1, 1]^2` driven by nine discrete
/// accelerations `{-a_max, 0, +a_max}^2`. Reward is 1 while the mass sits
/// inside the goal disc and 0 elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointMass {
    pub dt: f64,
    pub a_max: f64,
    pub v_max: f64,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub horizon: usize,
    pub gamma: f64,
}

impl Default for PointMass {
    fn default() -> Self {
        Self {
            dt: 0.1,
            a_max: 1.0,
            v_max: 1.0,
            start: [0.0, 0.0],
            goal: [0.5, 0.5],
            goal_radius: 0.15,
            horizon: 60,
            gamma: 0.95,
        }
    }
}

pub const ARENA: f64 = 1.0;

impl PointMass {
    pub const N_ACTIONS: usize = 9;
    pub const STATE_DIM: usize = 4;

    pub fn validate(&self) -> Result<()> {
        let positive = [self.dt, self.a_max, self.v_max, self.goal_radius];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::config("point-mass dt, a_max, v_max, goal_radius must be positive"));
        }
        if self.horizon == 0 {
            return Err(Error::config("point-mass horizon must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("point-mass gamma must lie in (0, 1)"));
        }
        if self.start.iter().chain(&self.goal).any(|c| c.abs() > ARENA) {
            return Err(Error::config("point-mass start and goal must lie in the arena"));
        }
        Ok(())
    }

    /// Acceleration vector for action index `k` (row-major over `{-1,0,1}^2`).
    pub fn acceleration(&self, k: usize) -> [f64; 2] {
        let ax = (k % 3) as f64 - 1.0;
        let ay = (k / 3) as f64 - 1.0;
        [ax * self.a_max, ay * self.a_max]
    }

    pub fn start_state(&self) -> [f64; 4] {
        [self.start[0], self.start[1], 0.0, 0.0]
    }

    pub fn in_goal(&self, state: &[f64]) -> bool {
        let dx = state[0] - self.goal[0];
        let dy = state[1] - self.goal[1];
        dx * dx + dy * dy <= self.goal_radius * self.goal_radius
    }

    /// Reward for acting in `state`.
    pub fn reward(&self, state: &[f64]) -> f64 {
        if self.in_goal(state) {
            1.0
        } else {
            0.0
        }
    }

    /// Semi-implicit Euler step: velocity first, then position, each clipped.
    pub fn step(&self, state: &[f64], action: usize) -> Result<([f64; 4], f64)> {
        if action >= Self::N_ACTIONS {
            return Err(Error::contract(format!("point-mass action {action} out of range")));
        }
        let r = self.reward(state);
        let a = self.acceleration(action);
        let vx = (state[2] + a[0] * self.dt).clamp(-self.v_max, self.v_max);
        let vy = (state[3] + a[1] * self.dt).clamp(-self.v_max, self.v_max);
        let x = (state[0] + vx * self.dt).clamp(-ARENA, ARENA);
        let y = (state[1] + vy * self.dt).clamp(-ARENA, ARENA);
        Ok(([x, y, vx, vy], r))
    }

    /// Optimal discounted return from the start state, computed exactly on
    /// the integer lattice the dynamics live on.
    ///
    /// Requires `a_max * dt` to divide `v_max` and `v_max`, positions, goal to
    /// be multiples of `a_max * dt^2`; returns `None` otherwise. The search
    /// expands reachable states breadth-first, so it is meant for the default
    /// instance and similar small arenas.
    pub fn optimal_return(&self) -> Option<f64> {
        lattice::optimal_return(self)
    }
}

mod lattice {
    use std::collections::HashSet;

    use super::{PointMass, ARENA};

    fn to_units(x: f64, unit: f64) -> Option<i64> {
        let q = x / unit;
        let r = q.round();
        ((q - r).abs() < 1e-9).then_some(r as i64)
    }

    type State = (i64, i64, i64, i64);

    /// The reward is 1 only inside the goal disc, so the return is bounded by
    /// the discounted tail starting at the earliest step the disc can be
    /// reached. The bound is attained when some earliest-entry state can brake
    /// to rest without leaving the disc; that is checked by search over
    /// in-disc states. States are `(x, y, vx, vy)` in integer units (positions
    /// in `a dt^2`, velocities in `a dt`), so all arithmetic is exact.
    pub(super) fn optimal_return(pm: &PointMass) -> Option<f64> {
        let dv = pm.a_max * pm.dt;
        let dx = dv * pm.dt;
        let vmax = to_units(pm.v_max, dv)?;
        let arena = to_units(ARENA, dx)?;
        let sx = to_units(pm.start[0], dx)?;
        let sy = to_units(pm.start[1], dx)?;
        let gx = to_units(pm.goal[0], dx)?;
        let gy = to_units(pm.goal[1], dx)?;
        let radius = pm.goal_radius / dx;
        let step = |s: State, k: usize| -> State {
            let ax = (k % 3) as i64 - 1;
            let ay = (k / 3) as i64 - 1;
            let vx = (s.2 + ax).clamp(-vmax, vmax);
            let vy = (s.3 + ay).clamp(-vmax, vmax);
            let x = (s.0 + vx).clamp(-arena, arena);
            let y = (s.1 + vy).clamp(-arena, arena);
            (x, y, vx, vy)
        };
        let in_goal = |s: State| {
            let ddx = (s.0 - gx) as f64;
            let ddy = (s.1 - gy) as f64;
            ddx * ddx + ddy * ddy <= radius * radius + 1e-9
        };
        let can_settle = |entry: State| {
            let mut seen = HashSet::from([entry]);
            let mut stack = vec![entry];
            while let Some(s) = stack.pop() {
                if s.2 == 0 && s.3 == 0 {
                    return true;
                }
                for k in 0..PointMass::N_ACTIONS {
                    let n = step(s, k);
                    if in_goal(n) && seen.insert(n) {
                        stack.push(n);
                    }
                }
            }
            false
        };

        let mut layer: Vec<State> = vec![(sx, sy, 0, 0)];
        for t in 0..pm.horizon {
            let entries: Vec<State> = layer.iter().copied().filter(|&s| in_goal(s)).collect();
            if !entries.is_empty() {
                if !entries.into_iter().any(can_settle) {
                    return None;
                }
                let tail = (t..pm.horizon).map(|h| pm.gamma.powi(h as i32)).sum();
                return Some(tail);
            }
            let mut seen = HashSet::new();
            let mut next = Vec::new();
            for &s in &layer {
                for k in 0..PointMass::N_ACTIONS {
                    let n = step(s, k);
                    if seen.insert(n) {
                        next.push(n);
                    }
                }
            }
            if next.len() > 5_000_000 {
                return None;
            }
            layer = next;
        }
        Some(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rest_state_is_a_fixed_point() {
        let pm = PointMass::default();
        let s = [0.3, -0.2, 0.0, 0.0];
        let (n, _) = pm.step(&s, 4).unwrap();
        assert_eq!(n, s);
    }

    #[test]
    fn goal_pays_one() {
        let pm = PointMass::default();
        assert_eq!(pm.step(&[0.5, 0.55, 0.0, 0.0], 4).unwrap().1, 1.0);
        assert_eq!(pm.step(&[0.0, 0.0, 0.0, 0.0], 4).unwrap().1, 0.0);
    }

    #[test]
    fn rejects_bad_action() {
        assert!(PointMass::default().step(&[0.0; 4], 9).is_err());
    }

    #[test]
    fn accelerations_cover_the_grid() {
        let pm = PointMass::default();
        assert_eq!(pm.acceleration(0), [-1.0, -1.0]);
        assert_eq!(pm.acceleration(4), [0.0, 0.0]);
        assert_eq!(pm.acceleration(8), [1.0, 1.0]);
    }

    #[test]
    fn optimal_return_on_tiny_instance_matches_brute_force() {
        let pm = PointMass {
            start: [0.0, 0.0],
            goal: [0.03, 0.0],
            goal_radius: 0.015,
            horizon: 4,
            ..PointMass::default()
        };
        fn brute(pm: &PointMass, s: [f64; 4], depth: usize) -> f64 {
            if depth == 0 {
                return 0.0;
            }
            (0..9)
                .map(|k| {
                    let (n, r) = pm.step(&s, k).unwrap();
                    r + pm.gamma * brute(pm, n, depth - 1)
                })
                .fold(f64::NEG_INFINITY, f64::max)
        }
        let exact = brute(&pm, pm.start_state(), pm.horizon);
        let lattice = pm.optimal_return().unwrap();
        assert!((exact - lattice).abs() < 1e-12, "{exact} vs {lattice}");
        assert!(exact > 0.0);
    }

    proptest! {
        #[test]
        fn state_stays_in_arena_and_under_speed_limit(
            start in prop::array::uniform4(-1.0..1.0_f64),
            actions in prop::collection::vec(0..PointMass::N_ACTIONS, 1..80),
        ) {
            let pm = PointMass::default();
            let mut s = [start[0], start[1], 0.5 * start[2], 0.5 * start[3]];
            for a in actions {
                s = pm.step(&s, a).unwrap().0;
                prop_assert!(s[0].abs() <= ARENA && s[1].abs() <= ARENA);
                prop_assert!(s[2].abs() <= pm.v_max && s[3].abs() <= pm.v_max);
            }
        }
    }
}
