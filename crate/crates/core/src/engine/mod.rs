//! Deterministic discrete-event simulation of a prefill tier.
//!
//! One run is single-threaded over a heap ordered by `(time, seq)`. Every
//! observable effect goes into an [`EventLog`], from which metrics are
//! derived.

pub mod audit;
pub mod log;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{self, ControllerConfig, InstanceStats, Pool, PoolState};
use crate::cost_model::{
    batch_service_time, prefill_boundary, reprefill_boundary, BatchShape, CostModelError, CostParams, ExecOverheads,
    KernelKind,
};
use crate::metrics::MetricsReport;
use crate::scheduler::{
    long_chunk_dispatch, standard_shape, AwdScheduler, AwdState, BatchPlan, BucketQueue, Chunk, DispatchReason,
    GraphGrid, Pending, Poll, SchedConfig,
};
use crate::workload::{classify, Request, RequestClass, WorkloadError};

pub use audit::{audit, AuditError};
pub use log::{ChunkPos, Entry, EventLog, LogParseError, Record};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Cost(#[from] CostModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Laps,
    FcfsUnified,
    BucketNoDisagg,
}

impl Policy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Policy::Laps => "laps",
            Policy::FcfsUnified => "fcfs_unified",
            Policy::BucketNoDisagg => "bucket_no_disagg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Policy::Laps, Policy::FcfsUnified, Policy::BucketNoDisagg]
            .into_iter()
            .find(|p| p.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disagg {
    Temporal,
    Spatial,
}

impl Disagg {
    pub fn as_str(&self) -> &'static str {
        match self {
            Disagg::Temporal => "temporal",
            Disagg::Spatial => "spatial",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "temporal" => Some(Disagg::Temporal),
            "spatial" => Some(Disagg::Spatial),
            _ => None,
        }
    }
}

/// Memory-budget batching for the unified baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FcfsConfig {
    /// Cap on padded tokens (`depth * longest row`) per batch.
    pub max_batch_tokens: u64,
    pub max_batch_requests: u32,
}

impl Default for FcfsConfig {
    fn default() -> Self {
        Self {
            max_batch_tokens: 8192,
            max_batch_requests: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_instances: u32,
    pub policy: Policy,
    pub disagg: Disagg,
    pub controller: bool,
    /// Short-pool size at start in spatial mode; half the instances (rounded
    /// up) when unset.
    pub initial_short: Option<u32>,
    pub seed: u64,
    /// Arrival horizon for synthetic workloads. The engine itself always
    /// runs until every request completes.
    pub duration_ms: f64,
    pub slo_ms: f64,
    /// First-turn class boundary; defaults to the cost model's.
    pub short_boundary: Option<f64>,
    /// Later-turn class boundary; defaults to the large-history limit.
    pub reprefill_short_boundary: Option<f64>,
    /// Classify later turns with the history-dependent boundary instead.
    pub per_history_boundary: bool,
    pub cost: CostParams,
    pub overheads: ExecOverheads,
    pub grid: GraphGrid,
    pub sched: SchedConfig,
    pub ctrl: ControllerConfig,
    pub fcfs: FcfsConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_instances: 1,
            policy: Policy::Laps,
            disagg: Disagg::Temporal,
            controller: false,
            initial_short: None,
            seed: 0,
            duration_ms: 60_000.0,
            slo_ms: 400.0,
            short_boundary: None,
            reprefill_short_boundary: None,
            per_history_boundary: false,
            cost: CostParams::default(),
            overheads: ExecOverheads::default(),
            grid: GraphGrid::default(),
            sched: SchedConfig::default(),
            ctrl: ControllerConfig::default(),
            fcfs: FcfsConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        self.cost.validate()?;
        self.overheads.validate()?;
        self.grid.validate().map_err(SimError::Config)?;
        self.sched.validate().map_err(|e| SimError::Config(e.to_string()))?;
        if self.n_instances == 0 {
            return bad("n_instances must be >= 1".into());
        }
        if !(self.slo_ms.is_finite() && self.slo_ms > 0.0) {
            return bad("slo must be > 0".into());
        }
        if !(self.duration_ms.is_finite() && self.duration_ms >= 0.0) {
            return bad("duration must be >= 0".into());
        }
        if self.fcfs.max_batch_tokens == 0 || self.fcfs.max_batch_requests == 0 {
            return bad("fcfs batch limits must be >= 1".into());
        }
        if self.policy == Policy::Laps {
            match self.disagg {
                Disagg::Temporal if self.n_instances != 1 => {
                    return bad(format!("temporal mode runs on 1 instance, got {}", self.n_instances))
                }
                Disagg::Spatial if self.n_instances < 2 => return bad("spatial mode needs >= 2 instances".into()),
                _ => {}
            }
        }
        let spatial = self.policy == Policy::Laps && self.disagg == Disagg::Spatial;
        if self.controller && !spatial {
            return bad("the controller only runs in spatial laps mode".into());
        }
        if spatial {
            let n_s = self.short_pool_size();
            if n_s == 0 || n_s >= self.n_instances {
                return bad(format!("initial short pool {n_s} leaves a pool empty"));
            }
        }
        if self.controller {
            self.ctrl
                .validate(self.n_instances)
                .map_err(|e| SimError::Config(e.to_string()))?;
            if self.ctrl.n_min == 0 {
                return bad("n_min = 0 could leave a class without instances".into());
            }
            let n_s = self.short_pool_size();
            if n_s < self.ctrl.n_min || self.n_instances - n_s < self.ctrl.n_min {
                return bad("initial split violates n_min".into());
            }
        }
        Ok(())
    }

    pub fn short_pool_size(&self) -> u32 {
        self.initial_short.unwrap_or(self.n_instances.div_ceil(2))
    }

    pub fn boundaries(&self) -> (f64, f64) {
        (
            self.short_boundary.unwrap_or_else(|| prefill_boundary(&self.cost)),
            self.reprefill_short_boundary
                .unwrap_or_else(|| self.cost.reprefill_limit()),
        )
    }

    pub fn class_of(&self, r: &Request) -> RequestClass {
        let (first, re) = self.boundaries();
        if self.per_history_boundary && r.turn > 1 {
            classify(r, first, reprefill_boundary(&self.cost, r.history_tokens as f64))
        } else {
            classify(r, first, re)
        }
    }

    pub fn deadline_of(&self, r: &Request) -> f64 {
        r.deadline_ms.unwrap_or(r.arrival_ms + self.slo_ms)
    }
}

/// Result of one simulation.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub report: MetricsReport,
    pub log: EventLog,
}

/// Runs `requests` (sorted by arrival, unique ids) to completion.
pub fn run(cfg: &SimConfig, requests: &[Request]) -> Result<SimOutput, SimError> {
    let log = simulate(cfg, requests)?;
    let report = MetricsReport::from_log(&log, cfg.slo_ms);
    Ok(SimOutput { report, log })
}

/// Runs the simulation and returns only the event log.
pub fn simulate(cfg: &SimConfig, requests: &[Request]) -> Result<EventLog, SimError> {
    cfg.validate()?;
    check_requests(requests)?;
    let mut sim = Sim::new(cfg, requests)?;
    sim.run()?;
    Ok(sim.log)
}

fn check_requests(requests: &[Request]) -> Result<(), SimError> {
    let mut ids = HashSet::with_capacity(requests.len());
    let mut prev = f64::NEG_INFINITY;
    for r in requests {
        r.validate()?;
        if r.arrival_ms < prev {
            return Err(SimError::Config(format!("request {} is out of arrival order", r.id)));
        }
        prev = r.arrival_ms;
        if !ids.insert(r.id) {
            return Err(SimError::Config(format!("duplicate request id {}", r.id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    Arrival,
    Wake { inst: usize, gen: u64 },
    Complete { inst: usize },
    Tick,
}

#[derive(Debug, Clone, Copy)]
struct Queued {
    time: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // Reversed so the max-heap pops the earliest `(time, seq)`.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

struct InFlight {
    ids: Vec<u64>,
    deadlines: Vec<f64>,
    chunk: Option<ChunkPos>,
    depth: u32,
    service: f64,
    awd_batch: bool,
}

struct LongJob {
    req: Pending,
    chunks: Vec<Chunk>,
    next: usize,
}

struct Instance {
    awd: AwdScheduler,
    busy: Option<InFlight>,
    long_job: Option<LongJob>,
    timer: Option<(f64, u64)>,
    gen: u64,
    spans: Vec<(f64, f64)>,
    late_sum: f64,
    late_n: u32,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Work {
    Short,
    Long,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    reqs: &'a [Request],
    next_arrival: usize,
    heap: BinaryHeap<Queued>,
    seq: u64,
    log: EventLog,
    inst: Vec<Instance>,
    short_q: BucketQueue,
    long_q: VecDeque<Pending>,
    fcfs_q: VecDeque<Pending>,
    pools: PoolState,
    done: usize,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig, reqs: &'a [Request]) -> Result<Self, SimError> {
        let top = cfg.grid.max_length();
        let s0 = batch_service_time(
            &BatchShape {
                l_pad: top,
                depth: 1,
                kind: KernelKind::Graph,
            },
            &[(top, 0)],
            &cfg.cost,
            &cfg.overheads,
        )?;
        let budget = (cfg.policy == Policy::BucketNoDisagg).then_some(cfg.fcfs.max_batch_tokens);
        let inst = (0..cfg.n_instances)
            .map(|_| {
                let mut awd = AwdScheduler::new(AwdState::initial(&cfg.sched, &cfg.grid, s0));
                awd.padded_budget = budget;
                Instance {
                    awd,
                    busy: None,
                    long_job: None,
                    timer: None,
                    gen: 0,
                    spans: Vec::new(),
                    late_sum: 0.0,
                    late_n: 0,
                }
            })
            .collect();
        let pools = if cfg.policy == Policy::Laps && cfg.disagg == Disagg::Spatial {
            let n_s = cfg.short_pool_size();
            PoolState::split(n_s, cfg.n_instances - n_s)
        } else {
            PoolState::split(cfg.n_instances, 0)
        };
        Ok(Self {
            cfg,
            reqs,
            next_arrival: 0,
            heap: BinaryHeap::new(),
            seq: 0,
            log: EventLog::default(),
            inst,
            short_q: BucketQueue::new(&cfg.grid),
            long_q: VecDeque::new(),
            fcfs_q: VecDeque::new(),
            pools,
            done: 0,
        })
    }

    fn push(&mut self, time: f64, ev: Ev) {
        self.heap.push(Queued {
            time,
            seq: self.seq,
            ev,
        });
        self.seq += 1;
    }

    fn push_next_arrival(&mut self) {
        if let Some(r) = self.reqs.get(self.next_arrival) {
            self.push(r.arrival_ms, Ev::Arrival);
        }
    }

    fn run(&mut self) -> Result<(), SimError> {
        self.push_next_arrival();
        if self.cfg.controller {
            self.push(self.cfg.ctrl.dt, Ev::Tick);
        }
        while let Some(Queued { time, ev, .. }) = self.heap.pop() {
            match ev {
                Ev::Arrival => self.on_arrival(),
                Ev::Wake { inst, gen } => {
                    if self.inst[inst].timer.is_some_and(|(_, g)| g == gen) {
                        self.inst[inst].timer = None;
                    }
                }
                Ev::Complete { inst } => self.on_complete(inst, time),
                Ev::Tick => self.on_tick(time),
            }
            self.schedule(time)?;
        }
        if self.done != self.reqs.len() {
            return Err(SimError::Config(format!(
                "{} of {} requests never completed",
                self.reqs.len() - self.done,
                self.reqs.len()
            )));
        }
        Ok(())
    }

    fn on_arrival(&mut self) {
        let r = &self.reqs[self.next_arrival];
        self.next_arrival += 1;
        let class = self.cfg.class_of(r);
        let deadline = self.cfg.deadline_of(r);
        self.log.push(
            r.arrival_ms,
            Entry::Arrival {
                id: r.id,
                class,
                deadline_ms: deadline,
            },
        );
        let p = Pending::from_request(r, Some(deadline));
        match (self.cfg.policy, class) {
            (Policy::FcfsUnified, _) => self.fcfs_q.push_back(p),
            (Policy::BucketNoDisagg, _) | (Policy::Laps, RequestClass::Short) => self.short_q.push(p, &self.cfg.grid),
            (Policy::Laps, RequestClass::Long) => self.long_q.push_back(p),
        }
        self.push_next_arrival();
    }

    fn on_complete(&mut self, i: usize, now: f64) {
        let f = self.inst[i].busy.take().expect("completion for an idle instance");
        self.log.push(
            now,
            Entry::Complete {
                instance: i as u32,
                ids: f.ids,
                chunk: f.chunk,
            },
        );
        if f.chunk.is_none_or(|c| c.is_last()) {
            self.done += f.deadlines.len();
            let inst = &mut self.inst[i];
            for d in f.deadlines {
                inst.late_sum += (now - d).max(0.0);
                inst.late_n += 1;
            }
            if f.chunk.is_some() {
                inst.long_job = None;
            }
        }
        if f.awd_batch {
            self.inst[i].awd.state.observe_service(f.service, f.depth);
        }
    }

    fn pending_work(&self) -> bool {
        self.done < self.reqs.len()
    }

    fn on_tick(&mut self, now: f64) {
        let ctrl = &self.cfg.ctrl;
        let start = now - ctrl.dt;
        let n_s = self.pools.n_s().max(1) as f64;
        let n_l = self.pools.n_l().max(1) as f64;
        let mut psi = Vec::with_capacity(self.inst.len());
        for (idx, inst) in self.inst.iter_mut().enumerate() {
            let busy: f64 = inst
                .spans
                .iter()
                .map(|&(s, e)| (e.min(now) - s.max(start)).max(0.0))
                .sum();
            inst.spans.retain(|&(_, e)| e > now);
            let e = if inst.late_n > 0 {
                inst.late_sum / inst.late_n as f64
            } else {
                0.0
            };
            inst.late_sum = 0.0;
            inst.late_n = 0;
            let q = match self.pools.assignment[idx] {
                Pool::Short => self.short_q.len() as f64 / n_s,
                Pool::Long => self.long_q.len() as f64 / n_l,
            };
            let stats = InstanceStats {
                q,
                e,
                u: (busy / ctrl.dt).clamp(0.0, 1.0),
            };
            psi.push(controller::pressure(&stats, ctrl));
        }
        let pool_scores = |pool: Pool| -> Vec<f64> { self.pools.members(pool).map(|i| psi[i]).collect() };
        let p_s = controller::aggregate(&pool_scores(Pool::Short), ctrl.percentile);
        let p_l = controller::aggregate(&pool_scores(Pool::Long), ctrl.percentile);
        if let (Ok(p_s), Ok(p_l)) = (p_s, p_l) {
            if let Some(m) = controller::decide(p_s, p_l, &self.pools, ctrl, now) {
                if let Some(moved) = controller::apply(&mut self.pools, m, &psi, now) {
                    self.inst[moved].awd.reset_round();
                    self.cancel_timer(moved);
                    self.log.push(
                        now,
                        Entry::Migrate {
                            instance: moved as u32,
                            from: m.from,
                            to: m.to,
                            p_short: p_s,
                            p_long: p_l,
                        },
                    );
                }
            }
        }
        if self.pending_work() {
            self.push(now + ctrl.dt, Ev::Tick);
        }
    }

    fn set_timer(&mut self, i: usize, t: f64) {
        if !t.is_finite() || self.inst[i].timer.is_some_and(|(at, _)| at == t) {
            return;
        }
        self.inst[i].gen += 1;
        let gen = self.inst[i].gen;
        self.inst[i].timer = Some((t, gen));
        self.push(t, Ev::Wake { inst: i, gen });
    }

    fn cancel_timer(&mut self, i: usize) {
        self.inst[i].timer = None;
    }

    fn idle(&self, i: usize) -> bool {
        self.inst[i].busy.is_none()
    }

    fn schedule(&mut self, now: f64) -> Result<(), SimError> {
        let n = self.inst.len();
        match (self.cfg.policy, self.cfg.disagg) {
            (Policy::FcfsUnified, _) => {
                for i in 0..n {
                    if self.idle(i) && !self.fcfs_q.is_empty() {
                        self.launch_fcfs(i, now)?;
                    }
                }
            }
            (Policy::BucketNoDisagg, _) => {
                let idle: Vec<usize> = (0..n).filter(|&i| self.idle(i)).collect();
                self.short_pass(&idle, now)?;
            }
            (Policy::Laps, Disagg::Temporal) => self.temporal(now)?,
            (Policy::Laps, Disagg::Spatial) => {
                for i in 0..n {
                    if !self.idle(i) {
                        continue;
                    }
                    if self.inst[i].long_job.is_some()
                        || (self.pools.assignment[i] == Pool::Long && !self.long_q.is_empty())
                    {
                        self.launch_long(i, now)?;
                    }
                }
                let idle_short: Vec<usize> = (0..n)
                    .filter(|&i| self.idle(i) && self.pools.assignment[i] == Pool::Short)
                    .collect();
                self.short_pass(&idle_short, now)?;
            }
        }
        Ok(())
    }

    /// The lowest-id idle instance leads the batching round on the shared
    /// short queue; the next one takes over once it dispatches.
    fn short_pass(&mut self, candidates: &[usize], now: f64) -> Result<(), SimError> {
        let mut leader_waiting = false;
        for &i in candidates {
            if leader_waiting {
                self.inst[i].awd.reset_round();
                self.cancel_timer(i);
                continue;
            }
            match self.inst[i]
                .awd
                .step(&mut self.short_q, now, &self.cfg.grid, &self.cfg.sched)
            {
                Poll::Dispatch(plan) => self.launch_plan(i, plan, now, true)?,
                Poll::WaitUntil(t) => {
                    self.set_timer(i, t);
                    leader_waiting = true;
                }
                Poll::Idle => {
                    self.cancel_timer(i);
                    leader_waiting = true;
                }
            }
        }
        Ok(())
    }

    fn temporal(&mut self, now: f64) -> Result<(), SimError> {
        if !self.idle(0) {
            return Ok(());
        }
        if self.inst[0].long_job.is_some() {
            return self.launch_long(0, now);
        }
        let key = |p: &Pending| (p.arrival_ms, p.id);
        let pick = match (self.short_q.head().map(key), self.long_q.front().map(key)) {
            (None, None) => return Ok(()),
            (Some(_), None) => Work::Short,
            (None, Some(_)) => Work::Long,
            (Some(s), Some(l)) => {
                if s.0.total_cmp(&l.0).then(s.1.cmp(&l.1)).is_le() {
                    Work::Short
                } else {
                    Work::Long
                }
            }
        };
        match pick {
            Work::Short => self.short_pass(&[0], now),
            Work::Long => {
                self.inst[0].awd.reset_round();
                self.cancel_timer(0);
                self.launch_long(0, now)
            }
        }
    }

    fn start(&mut self, i: usize, now: f64, service: f64, flight: InFlight, entry: Entry) {
        self.log.push(now, entry);
        let end = now + service;
        self.inst[i].spans.push((now, end));
        self.inst[i].busy = Some(flight);
        self.push(end, Ev::Complete { inst: i });
    }

    fn launch_plan(&mut self, i: usize, plan: BatchPlan, now: f64, awd_batch: bool) -> Result<(), SimError> {
        let service = batch_service_time(&plan.shape, &plan.rows(), &self.cfg.cost, &self.cfg.overheads)?;
        let ids: Vec<u64> = plan.members.iter().map(|m| m.id).collect();
        let flight = InFlight {
            ids: ids.clone(),
            deadlines: plan
                .members
                .iter()
                .map(|m| m.deadline_ms.unwrap_or(f64::INFINITY))
                .collect(),
            chunk: None,
            depth: plan.members.len() as u32,
            service,
            awd_batch,
        };
        let entry = Entry::Dispatch {
            instance: i as u32,
            ids,
            reason: plan.reason,
            shape: plan.shape,
            real_tokens: plan.real_tokens(),
            service_ms: service,
            chunk: None,
        };
        self.start(i, now, service, flight, entry);
        Ok(())
    }

    fn launch_fcfs(&mut self, i: usize, now: f64) -> Result<(), SimError> {
        let members = fcfs_batch(&mut self.fcfs_q, &self.cfg.fcfs);
        let plan = BatchPlan {
            shape: standard_shape(&members),
            members,
            dispatch_ms: now,
            reason: DispatchReason::Fcfs,
        };
        self.launch_plan(i, plan, now, false)
    }

    /// Runs the next chunk of the instance's long request, first pulling a
    /// new request from the long queue if none is in progress.
    fn launch_long(&mut self, i: usize, now: f64) -> Result<(), SimError> {
        if self.inst[i].long_job.is_none() {
            let Some(req) = self.long_q.pop_front() else {
                return Ok(());
            };
            let chunks = long_chunk_dispatch(req.new_tokens, req.history_tokens, self.cfg.sched.c_l);
            self.inst[i].long_job = Some(LongJob { req, chunks, next: 0 });
        }
        let job = self.inst[i].long_job.as_mut().expect("long job");
        let chunk = job.chunks[job.next];
        job.next += 1;
        let pos = ChunkPos {
            index: job.next as u32,
            count: job.chunks.len() as u32,
        };
        let req = job.req;
        let shape = BatchShape {
            l_pad: chunk.new_tokens,
            depth: 1,
            kind: KernelKind::Standard,
        };
        let service = batch_service_time(
            &shape,
            &[(chunk.new_tokens, chunk.history_tokens)],
            &self.cfg.cost,
            &self.cfg.overheads,
        )?;
        let flight = InFlight {
            ids: vec![req.id],
            deadlines: vec![req.deadline_ms.unwrap_or(f64::INFINITY)],
            chunk: Some(pos),
            depth: 1,
            service,
            awd_batch: false,
        };
        let entry = Entry::Dispatch {
            instance: i as u32,
            ids: vec![req.id],
            reason: DispatchReason::LongChunk,
            shape,
            real_tokens: chunk.new_tokens as u64,
            service_ms: service,
            chunk: Some(pos),
        };
        self.start(i, now, service, flight, entry);
        Ok(())
    }
}

/// FCFS admission: the head always goes; later requests join while the
/// padded size stays within budget.
pub fn fcfs_batch(queue: &mut VecDeque<Pending>, cfg: &FcfsConfig) -> Vec<Pending> {
    let mut out: Vec<Pending> = Vec::new();
    let mut max_len = 0u64;
    while let Some(next) = queue.front() {
        let len = max_len.max(next.new_tokens as u64);
        if !out.is_empty()
            && (out.len() as u32 >= cfg.max_batch_requests || (out.len() as u64 + 1) * len > cfg.max_batch_tokens)
        {
            break;
        }
        max_len = len;
        out.push(queue.pop_front().expect("front exists"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(id: u64, l: u32, at: f64) -> Request {
        Request {
            id,
            session_id: id,
            turn: 1,
            new_tokens: l,
            history_tokens: 0,
            arrival_ms: at,
            deadline_ms: None,
        }
    }

    fn pend(id: u64, l: u32) -> Pending {
        Pending {
            id,
            new_tokens: l,
            history_tokens: 0,
            arrival_ms: 0.0,
            deadline_ms: None,
        }
    }

    #[test]
    fn fcfs_batch_respects_budget() {
        let cfg = FcfsConfig {
            max_batch_tokens: 1000,
            max_batch_requests: 3,
        };
        let mut q: VecDeque<Pending> = [pend(0, 100), pend(1, 200), pend(2, 300), pend(3, 10)].into();
        assert_eq!(fcfs_batch(&mut q, &cfg).len(), 3);
        let mut q: VecDeque<Pending> = [pend(0, 2000), pend(1, 1)].into();
        assert_eq!(fcfs_batch(&mut q, &cfg).len(), 1);
        let one = FcfsConfig {
            max_batch_requests: 1,
            ..cfg
        };
        let mut q: VecDeque<Pending> = [pend(0, 1), pend(1, 1)].into();
        assert_eq!(fcfs_batch(&mut q, &one).len(), 1);
    }

    #[test]
    fn empty_run() {
        let out = run(&SimConfig::default(), &[]).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.report.overall.count, 0);
        assert_eq!(out.report.overall.rps, 0.0);
    }

    #[test]
    fn single_request_ttft() {
        let cfg = SimConfig {
            policy: Policy::FcfsUnified,
            cost: CostParams::new(1e-5, 0.01, 0.02, 0.002).unwrap(),
            overheads: ExecOverheads {
                kappa_graph: 0.05,
                kappa_std: 0.5,
                eta: 0.7,
            },
            fcfs: FcfsConfig {
                max_batch_tokens: 8192,
                max_batch_requests: 1,
            },
            ..SimConfig::default()
        };
        let out = run(&cfg, &[req(0, 100, 0.0)]).unwrap();
        assert!((out.report.overall.ttft_mean - 3.6).abs() < 1e-12);
    }

    #[test]
    fn config_errors() {
        let temporal_many = SimConfig {
            n_instances: 2,
            ..SimConfig::default()
        };
        assert!(matches!(run(&temporal_many, &[]), Err(SimError::Config(_))));
        let spatial_one = SimConfig {
            disagg: Disagg::Spatial,
            ..SimConfig::default()
        };
        assert!(run(&spatial_one, &[]).is_err());
        let ctrl_temporal = SimConfig {
            controller: true,
            ..SimConfig::default()
        };
        assert!(run(&ctrl_temporal, &[]).is_err());
        let unsorted = [req(0, 10, 5.0), req(1, 10, 1.0)];
        assert!(run(&SimConfig::default(), &unsorted).is_err());
        let dup = [req(0, 10, 1.0), req(0, 10, 2.0)];
        assert!(run(&SimConfig::default(), &dup).is_err());
    }

    #[test]
    fn long_request_runs_as_contiguous_chunks() {
        let cfg = SimConfig::default();
        let out = run(&cfg, &[req(0, 1000, 0.0), req(1, 2000, 0.0)]).unwrap();
        let chunks: Vec<(u64, u32)> = out
            .log
            .records
            .iter()
            .filter_map(|r| match &r.entry {
                Entry::Dispatch {
                    ids, chunk: Some(c), ..
                } => Some((ids[0], c.index)),
                _ => None,
            })
            .collect();
        assert_eq!(chunks, vec![(0, 1), (0, 2), (1, 1), (1, 2), (1, 3), (1, 4)]);
    }
}
