//! Hand-off point between a trainer waiting for human labels and the HTTP
//! service that shows pairs to a person. The trainer enqueues pairs and
//! blocks; the service reads the oldest pending pair and submits labels.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::envs::{Env, RenderPoint, Segment};
use crate::error::{Error, Result};
use crate::teacher::Label;

pub const PAYLOAD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderStep {
    pub step: usize,
    pub point: RenderPoint,
    /// `None` for the final state.
    pub action: Option<usize>,
}

/// What the console draws. Built from segments only, so it cannot carry
/// reward information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPayload {
    pub v: u32,
    pub env: String,
    pub horizon: usize,
    pub a: Vec<RenderStep>,
    pub b: Vec<RenderStep>,
    /// Point-mass goal disc `[x, y, radius]`, or the goal cell `[row, col]` on a grid.
    pub goal: Vec<f64>,
}

impl PairPayload {
    pub fn new(env: &Env, a: &Segment, b: &Segment) -> Self {
        let render = |seg: &Segment| {
            (0..=seg.len())
                .map(|h| RenderStep {
                    step: h,
                    point: env.render(seg.state(h)),
                    action: seg.actions().get(h).copied(),
                })
                .collect()
        };
        let goal = match env {
            Env::Grid(g) => vec![g.spec.goal.0 as f64, g.spec.goal.1 as f64],
            Env::PointMass(pm) => vec![pm.goal[0], pm.goal[1], pm.goal_radius],
        };
        Self {
            v: PAYLOAD_VERSION,
            env: env.name().to_string(),
            horizon: a.len(),
            a: render(a),
            b: render(b),
            goal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingPair {
    pub pair_id: String,
    pub payload: PairPayload,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub active: bool,
    pub iteration: usize,
    /// Non-skip labels received in the current session.
    pub labels_collected: usize,
    pub session_quota: usize,
    pub pending: usize,
}

/// Why a submission was refused.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    UnknownPair,
    AlreadyLabeled,
    OtherClient,
}

impl Rejection {
    pub fn reason(&self) -> &'static str {
        match self {
            Rejection::UnknownPair => "unknown pair_id",
            Rejection::AlreadyLabeled => "pair already labeled",
            Rejection::OtherClient => "another console is already connected",
        }
    }
}

#[derive(Debug, Default)]
struct HubState {
    next_id: u64,
    queue: VecDeque<PendingPair>,
    answered: Vec<(String, Label)>,
    labeled_ids: Vec<String>,
    status: SessionStatus,
    client: Option<String>,
    closed: bool,
}

impl Default for SessionStatus {
    fn default() -> Self {
        Self {
            active: false,
            iteration: 0,
            labels_collected: 0,
            session_quota: 0,
            pending: 0,
        }
    }
}

/// Shared queue of pairs awaiting a human label.
#[derive(Debug, Default)]
pub struct FeedbackHub {
    state: Mutex<HubState>,
    changed: Condvar,
}

impl FeedbackHub {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, HubState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn begin_session(&self, iteration: usize, quota: usize) {
        let mut st = self.lock();
        st.status = SessionStatus {
            active: true,
            iteration,
            labels_collected: 0,
            session_quota: quota,
            pending: st.queue.len(),
        };
    }

    /// Ends the session and drops anything still queued.
    pub fn end_session(&self) {
        let mut st = self.lock();
        st.status.active = false;
        st.queue.clear();
        st.status.pending = 0;
        self.changed.notify_all();
    }

    /// Wakes every waiter with an error; later waits fail immediately.
    pub fn close(&self) {
        self.lock().closed = true;
        self.changed.notify_all();
    }

    pub fn enqueue(&self, payload: PairPayload) -> String {
        let mut st = self.lock();
        st.next_id += 1;
        let pair_id = format!("p{}", st.next_id);
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64);
        st.queue.push_back(PendingPair {
            pair_id: pair_id.clone(),
            payload,
            created_at,
        });
        st.status.pending = st.queue.len();
        self.changed.notify_all();
        pair_id
    }

    /// Oldest unlabeled pair while a session is active.
    pub fn current(&self) -> Option<PendingPair> {
        let st = self.lock();
        if !st.status.active {
            return None;
        }
        st.queue.front().cloned()
    }

    pub fn status(&self) -> SessionStatus {
        self.lock().status
    }

    /// Records a label exactly once. The first client to submit binds the
    /// hub; other client ids are refused from then on.
    pub fn submit(&self, pair_id: &str, label: Label, client: &str) -> Result<(), Rejection> {
        let mut st = self.lock();
        match &st.client {
            Some(c) if c != client => return Err(Rejection::OtherClient),
            Some(_) => {}
            None => st.client = Some(client.to_string()),
        }
        if st.labeled_ids.iter().any(|id| id == pair_id) {
            return Err(Rejection::AlreadyLabeled);
        }
        let pos = st
            .queue
            .iter()
            .position(|p| p.pair_id == pair_id)
            .ok_or(Rejection::UnknownPair)?;
        st.queue.remove(pos);
        st.labeled_ids.push(pair_id.to_string());
        st.answered.push((pair_id.to_string(), label));
        if label != Label::Skip {
            st.status.labels_collected += 1;
        }
        st.status.pending = st.queue.len();
        self.changed.notify_all();
        Ok(())
    }

    /// Blocks until `pair_id` is labeled. `None` waits indefinitely.
    pub fn wait_label(&self, pair_id: &str, timeout: Option<Duration>) -> Result<Label> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut st = self.lock();
        loop {
            if let Some(i) = st.answered.iter().position(|(id, _)| id == pair_id) {
                return Ok(st.answered.swap_remove(i).1);
            }
            if st.closed {
                return Err(Error::FeedbackClosed);
            }
            st = match deadline {
                None => self.changed.wait(st).unwrap_or_else(|e| e.into_inner()),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return Err(Error::FeedbackTimeout);
                    }
                    self.changed
                        .wait_timeout(st, d - now)
                        .unwrap_or_else(|e| e.into_inner())
                        .0
                }
            };
        }
    }
}
