//! Short/long prefill scheduling: the captured-shape grid, bucketed queues,
//! adaptive wait/depth batching and chunked long prefills.

pub mod awd;
pub mod chunk;
pub mod grid;
pub mod queue;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_model::BatchShape;

pub use awd::{combined_window, graph_window, sla_window, token_max_admit, Admit, AwdScheduler, AwdState, Poll};
pub use chunk::{long_chunk_dispatch, Chunk};
pub use grid::{bucket_of, nearest_graph, shape_for, standard_shape, GraphGrid, ModelPreset};
pub use queue::{BucketQueue, Pending, Selection};

#[derive(Debug, Error, PartialEq)]
pub enum SchedError {
    #[error("invalid scheduler config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedMode {
    Sla,
    DeadlineFree,
}

impl SchedMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SchedMode::Sla => "sla",
            SchedMode::DeadlineFree => "deadline_free",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sla" => Some(SchedMode::Sla),
            "deadline_free" => Some(SchedMode::DeadlineFree),
            _ => None,
        }
    }
}

/// Scheduler knobs; times in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedConfig {
    pub w_min: f64,
    pub w_max: f64,
    /// Slack below which a forming batch leaves at once.
    pub sigma: f64,
    /// Safety margin subtracted from the deadline window.
    pub delta: f64,
    /// Longest a head-of-line request may wait before a forced dispatch.
    pub t_max: f64,
    /// Floor on the arrival-rate estimate (per ms).
    pub epsilon: f64,
    pub m_s: u32,
    pub c_l: u32,
    pub mode: SchedMode,
    /// Lets the target depth climb back one grid step after a full batch
    /// that leaves a backlog behind.
    pub depth_regrow: bool,
}

impl Default for SchedConfig {
    fn default() -> Self {
        Self {
            w_min: 1.0,
            w_max: 50.0,
            sigma: 10.0,
            delta: 5.0,
            t_max: 100.0,
            epsilon: 1e-6,
            m_s: 2048,
            c_l: 512,
            mode: SchedMode::Sla,
            depth_regrow: false,
        }
    }
}

impl SchedConfig {
    pub fn validate(&self) -> Result<(), SchedError> {
        let bad = |m: &str| Err(SchedError::InvalidConfig(m.into()));
        let finite = [self.w_min, self.w_max, self.sigma, self.delta, self.t_max, self.epsilon];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("non-finite value");
        }
        if !(0.0 <= self.w_min && self.w_min <= self.w_max) {
            return bad("need 0 <= w_min <= w_max");
        }
        if self.sigma < 0.0 || self.delta < 0.0 || self.t_max < 0.0 {
            return bad("sigma, delta and t_max must be >= 0");
        }
        if self.epsilon <= 0.0 {
            return bad("epsilon must be > 0");
        }
        if self.m_s == 0 || self.c_l == 0 {
            return bad("m_s and c_l must be >= 1");
        }
        Ok(())
    }

    pub fn clip_window(&self, w: f64) -> f64 {
        w.clamp(self.w_min, self.w_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchReason {
    DepthReached,
    WindowExpired,
    SlaBreak,
    HolCap,
    TokenMax,
    LongChunk,
    Fcfs,
}

impl DispatchReason {
    pub const ALL: [DispatchReason; 7] = [
        DispatchReason::DepthReached,
        DispatchReason::WindowExpired,
        DispatchReason::SlaBreak,
        DispatchReason::HolCap,
        DispatchReason::TokenMax,
        DispatchReason::LongChunk,
        DispatchReason::Fcfs,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DispatchReason::DepthReached => "depth_reached",
            DispatchReason::WindowExpired => "window_expired",
            DispatchReason::SlaBreak => "sla_break",
            DispatchReason::HolCap => "hol_cap",
            DispatchReason::TokenMax => "token_max",
            DispatchReason::LongChunk => "long_chunk",
            DispatchReason::Fcfs => "fcfs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

/// A batch chosen for launch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub members: Vec<Pending>,
    pub shape: BatchShape,
    pub dispatch_ms: f64,
    pub reason: DispatchReason,
}

impl BatchPlan {
    /// `(L, H)` for every row of the shape, padding rows included.
    pub fn rows(&self) -> Vec<(u32, u32)> {
        let mut rows: Vec<(u32, u32)> = self.members.iter().map(|m| (m.new_tokens, m.history_tokens)).collect();
        rows.resize(self.shape.depth as usize, (self.shape.l_pad, 0));
        rows
    }

    pub fn real_tokens(&self) -> u64 {
        self.members.iter().map(|m| m.new_tokens as u64).sum()
    }

    pub fn padded_tokens(&self) -> u64 {
        self.shape.l_pad as u64 * self.shape.depth as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_bounds() {
        assert!(SchedConfig::default().validate().is_ok());
        let c = SchedConfig {
            w_min: 60.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = SchedConfig {
            epsilon: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = SchedConfig {
            c_l: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn reasons_round_trip() {
        for r in DispatchReason::ALL {
            assert_eq!(DispatchReason::parse(r.as_str()), Some(r));
        }
    }
}
