//! Adaptive-Wait-Depth batching for the short-prefill queue, plus the
//! deadline-free token-max admission rule.

use serde::{Deserialize, Serialize};

use super::grid::{shape_for, GraphGrid};
use super::queue::{BucketQueue, Pending, Selection};
use super::{BatchPlan, DispatchReason, SchedConfig, SchedMode};

const EWMA_DECAY: f64 = 0.2;

/// Adaptive window and depth plus the two online estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AwdState {
    pub w: f64,
    pub d: u32,
    /// Per-request service estimate.
    pub s_hat: f64,
    /// Short-arrival rate estimate (requests per ms).
    pub r_hat: f64,
}

impl AwdState {
    /// Starting point: the widest window and the deepest captured shape that
    /// fits the memory budget.
    pub fn initial(cfg: &SchedConfig, grid: &GraphGrid, s_hat: f64) -> Self {
        Self {
            w: cfg.w_max,
            d: grid.max_depth(),
            s_hat,
            r_hat: 0.0,
        }
    }

    /// Post-dispatch update: a batch that reached the target depth shrinks
    /// the window to the observed fill time; otherwise the target depth drops
    /// to what was achieved.
    pub fn apply_dispatch(&mut self, depth: u32, fill_time: f64, cfg: &SchedConfig) {
        if depth >= self.d {
            self.w = cfg.clip_window(fill_time);
        } else {
            self.d = depth.max(1);
        }
    }

    pub fn observe_service(&mut self, batch_ms: f64, depth: u32) {
        let per = batch_ms / depth.max(1) as f64;
        self.s_hat = (1.0 - EWMA_DECAY) * self.s_hat + EWMA_DECAY * per;
    }

    pub fn observe_rate(&mut self, arrivals: u64, elapsed_ms: f64) {
        if elapsed_ms > 0.0 {
            let obs = arrivals as f64 / elapsed_ms;
            self.r_hat = (1.0 - EWMA_DECAY) * self.r_hat + EWMA_DECAY * obs;
        }
    }
}

/// Last safe time to wait: `max(0, min_i(DDL_i - now - S) - delta)`, or
/// `w_max` when nothing pending carries a deadline.
pub fn sla_window(queue: &BucketQueue, now: f64, st: &AwdState, cfg: &SchedConfig) -> f64 {
    match queue.earliest_deadline() {
        None => cfg.w_max,
        Some(ddl) => (ddl - now - st.s_hat - cfg.delta).max(0.0),
    }
}

/// Expected time to reach the target depth at the estimated arrival rate.
pub fn graph_window(st: &AwdState, current_depth: u32, cfg: &SchedConfig) -> f64 {
    let missing = st.d.saturating_sub(current_depth) as f64;
    missing / st.r_hat.max(cfg.epsilon)
}

pub fn combined_window(queue: &BucketQueue, now: f64, st: &AwdState, cfg: &SchedConfig, current_depth: u32) -> f64 {
    let w = sla_window(queue, now, st, cfg).min(graph_window(st, current_depth, cfg));
    cfg.clip_window(w)
}

/// What a scheduler wants the instance to do next.
#[derive(Debug, Clone, PartialEq)]
pub enum Poll {
    Dispatch(BatchPlan),
    /// Nothing to do before this time unless the queue changes.
    WaitUntil(f64),
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Round {
    start: f64,
    window: f64,
}

/// Per-instance short-queue scheduler.
#[derive(Debug, Clone)]
pub struct AwdScheduler {
    pub state: AwdState,
    /// Cap on `depth * l_pad` for a dispatched batch.
    pub padded_budget: Option<u64>,
    round: Option<Round>,
    rate_mark: Option<(f64, u64)>,
}

impl AwdScheduler {
    pub fn new(state: AwdState) -> Self {
        Self {
            state,
            padded_budget: None,
            round: None,
            rate_mark: None,
        }
    }

    /// Start time and window of the batching round in progress, if any.
    pub fn round(&self) -> Option<(f64, f64)> {
        self.round.map(|r| (r.start, r.window))
    }

    /// Abandons the current round, e.g. when another instance drained the
    /// shared queue.
    pub fn reset_round(&mut self) {
        self.round = None;
    }

    /// One scheduling decision at `now`. On dispatch the selected requests
    /// are removed from `queue` and the adaptive state is updated.
    pub fn step(&mut self, queue: &mut BucketQueue, now: f64, grid: &GraphGrid, cfg: &SchedConfig) -> Poll {
        if self.rate_mark.is_none() {
            self.rate_mark = Some((now, queue.enqueued_total().saturating_sub(queue.len() as u64)));
        }
        if queue.is_empty() {
            self.round = None;
            return Poll::Idle;
        }
        match cfg.mode {
            SchedMode::Sla => self.step_sla(queue, now, grid, cfg),
            SchedMode::DeadlineFree => match token_max_admit_within(queue, now, cfg, grid, self.padded_budget) {
                Admit::Plan(plan) => {
                    self.after_dispatch(queue, now, &plan, 0.0, cfg, false);
                    Poll::Dispatch(plan)
                }
                Admit::WaitUntil(t) => Poll::WaitUntil(t),
            },
        }
    }

    fn step_sla(&mut self, queue: &mut BucketQueue, now: f64, grid: &GraphGrid, cfg: &SchedConfig) -> Poll {
        let cap = self.state.d.min(grid.max_depth()).max(1) as usize;
        let sel = queue.select_within(cap, self.padded_budget);
        let depth = sel.depth() as u32;
        let round = *self.round.get_or_insert_with(|| Round {
            start: now,
            window: combined_window(queue, now, &self.state, cfg, depth),
        });
        let expiry = round.start + round.window;
        let head = *queue.head().expect("non-empty queue");
        let hol_at = head.arrival_ms + cfg.t_max;
        let slack_at = self.slack_break_time(queue, &sel, cfg);

        let reason = if depth >= self.state.d {
            Some(DispatchReason::DepthReached)
        } else if slack_at.is_some_and(|t| now >= t) {
            Some(DispatchReason::SlaBreak)
        } else if now >= hol_at {
            Some(DispatchReason::HolCap)
        } else if now >= expiry {
            Some(DispatchReason::WindowExpired)
        } else {
            None
        };
        let Some(reason) = reason else {
            let wake = [Some(expiry), Some(hol_at), slack_at]
                .into_iter()
                .flatten()
                .fold(f64::INFINITY, f64::min);
            return Poll::WaitUntil(wake);
        };

        let members = queue.take(&sel);
        let fill_done = members.iter().map(|m| m.arrival_ms).fold(round.start, f64::max);
        let plan = BatchPlan {
            shape: shape_for(&members, grid),
            members,
            dispatch_ms: now,
            reason,
        };
        self.after_dispatch(queue, now, &plan, fill_done - round.start, cfg, true);
        if cfg.depth_regrow && depth >= self.state.d && !queue.is_empty() {
            if let Some(&next) = grid.depths.iter().find(|&&g| g > self.state.d) {
                self.state.d = next;
            }
        }
        Poll::Dispatch(plan)
    }

    /// Earliest time at which `min over batch ∪ {next} of DDL - (t + S)`
    /// drops to the slack threshold.
    fn slack_break_time(&self, queue: &BucketQueue, sel: &Selection, cfg: &SchedConfig) -> Option<f64> {
        queue
            .selected(sel)
            .iter()
            .chain(queue.next_after(sel))
            .filter_map(|p| p.deadline_ms)
            .min_by(f64::total_cmp)
            .map(|ddl| ddl - self.state.s_hat - cfg.sigma)
    }

    fn after_dispatch(
        &mut self,
        queue: &BucketQueue,
        now: f64,
        plan: &BatchPlan,
        fill_time: f64,
        cfg: &SchedConfig,
        adapt: bool,
    ) {
        if adapt {
            self.state.apply_dispatch(plan.members.len() as u32, fill_time, cfg);
        }
        let total = queue.enqueued_total();
        if let Some((t0, n0)) = self.rate_mark {
            self.state.observe_rate(total - n0, now - t0);
        }
        self.rate_mark = Some((now, total));
        self.round = None;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Admit {
    Plan(BatchPlan),
    WaitUntil(f64),
}

/// Deadline-free admission: dispatch the largest shape-similar batch once it
/// holds at least `m_s` real tokens, or once the head of line has waited
/// `t_max`.
pub fn token_max_admit(queue: &mut BucketQueue, now: f64, cfg: &SchedConfig, grid: &GraphGrid) -> Admit {
    token_max_admit_within(queue, now, cfg, grid, None)
}

pub fn token_max_admit_within(
    queue: &mut BucketQueue,
    now: f64,
    cfg: &SchedConfig,
    grid: &GraphGrid,
    padded_budget: Option<u64>,
) -> Admit {
    let sel = queue.select_within(grid.max_depth() as usize, padded_budget);
    let tokens: u64 = queue.selected(&sel).iter().map(|p| p.new_tokens as u64).sum();
    let hol_at = match queue.head() {
        Some(h) => h.arrival_ms + cfg.t_max,
        None => return Admit::WaitUntil(f64::INFINITY),
    };
    let reason = if tokens >= cfg.m_s as u64 {
        DispatchReason::TokenMax
    } else if now >= hol_at {
        DispatchReason::HolCap
    } else {
        return Admit::WaitUntil(hol_at);
    };
    let members: Vec<Pending> = queue.take(&sel);
    Admit::Plan(BatchPlan {
        shape: shape_for(&members, grid),
        members,
        dispatch_ms: now,
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_model::KernelKind;

    fn pend(id: u64, l: u32, at: f64, ddl: Option<f64>) -> Pending {
        Pending {
            id,
            new_tokens: l,
            history_tokens: 0,
            arrival_ms: at,
            deadline_ms: ddl,
        }
    }

    fn cfg() -> SchedConfig {
        SchedConfig {
            w_min: 5.0,
            w_max: 50.0,
            ..SchedConfig::default()
        }
    }

    fn queue_of(grid: &GraphGrid, items: &[Pending]) -> BucketQueue {
        let mut q = BucketQueue::new(grid);
        for p in items {
            q.push(*p, grid);
        }
        q
    }

    #[test]
    fn sla_window_examples() {
        let grid = GraphGrid::default();
        let c = SchedConfig { delta: 5.0, ..cfg() };
        let st = AwdState {
            w: 50.0,
            d: 8,
            s_hat: 30.0,
            r_hat: 1.0,
        };
        let q = queue_of(&grid, &[pend(0, 10, 0.0, Some(1100.0)), pend(1, 10, 0.0, Some(1200.0))]);
        assert_eq!(sla_window(&q, 1000.0, &st, &c), 65.0);
        let q = queue_of(&grid, &[pend(0, 10, 0.0, Some(1030.0))]);
        assert_eq!(sla_window(&q, 1000.0, &st, &c), 0.0);
        let empty = BucketQueue::new(&grid);
        assert_eq!(sla_window(&empty, 1000.0, &st, &c), c.w_max);
    }

    #[test]
    fn graph_window_examples() {
        let c = cfg();
        let st = AwdState {
            w: 50.0,
            d: 32,
            s_hat: 1.0,
            r_hat: 2.0,
        };
        assert_eq!(graph_window(&st, 8, &c), 12.0);
        assert_eq!(graph_window(&st, 32, &c), 0.0);
        assert_eq!(graph_window(&st, 40, &c), 0.0);
        let idle = AwdState { r_hat: 0.0, ..st };
        let c = SchedConfig { epsilon: 1e-6, ..c };
        assert_eq!(graph_window(&idle, 8, &c), 24.0 / 1e-6);
    }

    #[test]
    fn combined_window_examples() {
        let grid = GraphGrid::default();
        let c = SchedConfig { delta: 5.0, ..cfg() };
        // W_SLA = 65, W_GR = 12 -> 12
        let st = AwdState {
            w: 50.0,
            d: 32,
            s_hat: 30.0,
            r_hat: 2.0,
        };
        let q = queue_of(&grid, &[pend(0, 10, 0.0, Some(1100.0))]);
        assert_eq!(combined_window(&q, 1000.0, &st, &c, 8), 12.0);
        // W_SLA = 0 -> w_min
        let q0 = queue_of(&grid, &[pend(0, 10, 0.0, Some(1010.0))]);
        assert_eq!(combined_window(&q0, 1000.0, &st, &c, 8), c.w_min);
        // both above w_max -> w_max
        let slow = AwdState { r_hat: 0.1, ..st };
        let far = queue_of(&grid, &[pend(0, 10, 0.0, Some(9000.0))]);
        assert_eq!(combined_window(&far, 1000.0, &slow, &c, 8), c.w_max);
    }

    #[test]
    fn depth_reached_dispatches_immediately() {
        let grid = GraphGrid::default();
        let c = cfg();
        let items: Vec<Pending> = (0..8).map(|i| pend(i, 40, 0.0, Some(10_000.0))).collect();
        let mut q = queue_of(&grid, &items);
        let mut s = AwdScheduler::new(AwdState {
            w: 50.0,
            d: 8,
            s_hat: 1.0,
            r_hat: 0.0,
        });
        match s.step(&mut q, 0.0, &grid, &c) {
            Poll::Dispatch(plan) => {
                assert_eq!(plan.reason, DispatchReason::DepthReached);
                assert_eq!(plan.members.len(), 8);
                assert_eq!(
                    (plan.shape.l_pad, plan.shape.depth, plan.shape.kind),
                    (64, 8, KernelKind::Graph)
                );
            }
            other => panic!("{other:?}"),
        }
        assert!(q.is_empty());
    }

    #[test]
    fn zero_slack_forces_singleton() {
        let grid = GraphGrid::default();
        let c = SchedConfig { sigma: 10.0, ..cfg() };
        let mut q = queue_of(&grid, &[pend(0, 40, 0.0, Some(100.0))]);
        let mut s = AwdScheduler::new(AwdState {
            w: 50.0,
            d: 8,
            s_hat: 100.0,
            r_hat: 0.0,
        });
        match s.step(&mut q, 0.0, &grid, &c) {
            Poll::Dispatch(plan) => {
                assert_eq!(plan.reason, DispatchReason::SlaBreak);
                assert_eq!(plan.members.len(), 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn waits_for_window_then_expires() {
        let grid = GraphGrid::default();
        let c = SchedConfig { t_max: 1000.0, ..cfg() };
        let mut q = queue_of(&grid, &[pend(0, 40, 0.0, Some(10_000.0))]);
        let mut s = AwdScheduler::new(AwdState {
            w: 50.0,
            d: 8,
            s_hat: 1.0,
            r_hat: 0.0,
        });
        // r_hat = 0 -> graph window is huge, clipped to w_max.
        assert_eq!(s.step(&mut q, 0.0, &grid, &c), Poll::WaitUntil(50.0));
        match s.step(&mut q, 50.0, &grid, &c) {
            Poll::Dispatch(plan) => assert_eq!(plan.reason, DispatchReason::WindowExpired),
            other => panic!("{other:?}"),
        }
        // d = 1 < D = 8 -> D drops to 1.
        assert_eq!(s.state.d, 1);
    }

    #[test]
    fn hol_cap_preempts_window() {
        let grid = GraphGrid::default();
        let c = SchedConfig { t_max: 20.0, ..cfg() };
        let mut q = queue_of(&grid, &[pend(0, 40, 0.0, None)]);
        let mut s = AwdScheduler::new(AwdState {
            w: 50.0,
            d: 8,
            s_hat: 1.0,
            r_hat: 0.0,
        });
        assert_eq!(s.step(&mut q, 0.0, &grid, &c), Poll::WaitUntil(20.0));
        match s.step(&mut q, 20.0, &grid, &c) {
            Poll::Dispatch(plan) => assert_eq!(plan.reason, DispatchReason::HolCap),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn update_rules() {
        let c = cfg();
        let mut st = AwdState {
            w: 50.0,
            d: 8,
            s_hat: 1.0,
            r_hat: 0.0,
        };
        st.apply_dispatch(8, 15.0, &c);
        assert_eq!((st.w, st.d), (15.0, 8));
        st.apply_dispatch(4, 3.0, &c);
        assert_eq!((st.w, st.d), (15.0, 4));
        st.apply_dispatch(4, 1.0, &c);
        assert_eq!((st.w, st.d), (5.0, 4));
        st.apply_dispatch(6, 80.0, &c);
        assert_eq!((st.w, st.d), (50.0, 4));
    }

    #[test]
    fn token_max_examples() {
        let grid = GraphGrid::default();
        let c = SchedConfig {
            m_s: 512,
            t_max: 100.0,
            mode: SchedMode::DeadlineFree,
            ..cfg()
        };
        let mut q = queue_of(&grid, &[pend(0, 50, 0.0, None), pend(1, 50, 1.0, None)]);
        assert_eq!(token_max_admit(&mut q, 10.0, &c, &grid), Admit::WaitUntil(100.0));
        match token_max_admit(&mut q, 150.0, &c, &grid) {
            Admit::Plan(p) => assert_eq!(p.reason, DispatchReason::HolCap),
            other => panic!("{other:?}"),
        }
        let items: Vec<Pending> = (0..6).map(|i| pend(i, 100, 0.0, None)).collect();
        let mut q = queue_of(&grid, &items);
        match token_max_admit(&mut q, 1.0, &c, &grid) {
            Admit::Plan(p) => {
                assert_eq!(p.reason, DispatchReason::TokenMax);
                assert_eq!(p.members.len(), 6);
            }
            other => panic!("{other:?}"),
        }
    }
}
