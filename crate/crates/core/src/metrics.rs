//! TTFT, throughput and batching statistics, computed from an event log.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_model::KernelKind;
use crate::engine::{Entry, EventLog};
use crate::workload::RequestClass;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no samples")]
    EmptySamples,
    #[error("percentile rank {0} outside (0, 100]")]
    BadRank(f64),
}

/// Nearest-rank percentile: the value at rank `ceil(q/100 * n)` of the
/// ascending sort.
pub fn percentile(samples: &[f64], q: f64) -> Result<f64, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    if !(q > 0.0 && q <= 100.0) {
        return Err(MetricsError::BadRank(q));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(nearest_rank(&v, q))
}

fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let rank = (q / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Fraction of samples strictly above `slo`.
pub fn slo_violation_rate(ttfts: &[f64], slo: f64) -> Result<f64, MetricsError> {
    if ttfts.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    Ok(ttfts.iter().filter(|&&t| t > slo).count() as f64 / ttfts.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub count: u64,
    pub ttft_mean: f64,
    pub ttft_p50: f64,
    pub ttft_p90: f64,
    pub ttft_p99: f64,
    /// Arrival to first dispatch.
    pub wait_mean: f64,
    /// Completions per second over the run's active interval.
    pub rps: f64,
    pub slo_violation_rate: f64,
}

impl ClassMetrics {
    fn from_samples(ttft: &mut [f64], waits: &[f64], active_ms: f64, slo: f64) -> Self {
        if ttft.is_empty() {
            return Self::default();
        }
        let n = ttft.len() as f64;
        let ttft_mean = ttft.iter().sum::<f64>() / n;
        let wait_mean = waits.iter().sum::<f64>() / n;
        let violations = ttft.iter().filter(|&&t| t > slo).count() as f64 / n;
        ttft.sort_by(f64::total_cmp);
        Self {
            count: ttft.len() as u64,
            ttft_mean,
            ttft_p50: nearest_rank(ttft, 50.0),
            ttft_p90: nearest_rank(ttft, 90.0),
            ttft_p99: nearest_rank(ttft, 99.0),
            wait_mean,
            rps: if active_ms > 0.0 { n * 1000.0 / active_ms } else { 0.0 },
            slo_violation_rate: violations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BatchStats {
    pub batches: u64,
    /// Requests per batch, chunks counted as one.
    pub mean_depth: f64,
    /// Share of all-short batches launched on a captured shape.
    pub graph_hit_rate: f64,
    /// Padded tokens over real tokens, minus one.
    pub padding_overhead: f64,
    /// Summed service time over all instances.
    pub busy_ms: f64,
    /// Completions per second of busy instance time.
    pub service_rps: f64,
    pub reasons: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: ClassMetrics,
    pub short: ClassMetrics,
    pub long: ClassMetrics,
    pub batches: BatchStats,
    pub migrations: u64,
    /// First arrival to last completion.
    pub active_ms: f64,
}

impl MetricsReport {
    pub fn from_log(log: &EventLog, slo_ms: f64) -> Self {
        struct Req {
            arrival: f64,
            class: RequestClass,
            first_dispatch: Option<f64>,
            done: Option<f64>,
        }
        let mut reqs: HashMap<u64, Req> = HashMap::new();
        let mut order: Vec<u64> = Vec::new();
        let mut batches = BatchStats::default();
        let (mut members, mut short_batches, mut graph_hits) = (0u64, 0u64, 0u64);
        let (mut padded, mut real) = (0u64, 0u64);
        let mut migrations = 0;
        let mut first_arrival = None;
        let mut last_done = None;

        for r in &log.records {
            match &r.entry {
                Entry::Arrival { id, class, .. } => {
                    first_arrival.get_or_insert(r.time_ms);
                    order.push(*id);
                    reqs.insert(
                        *id,
                        Req {
                            arrival: r.time_ms,
                            class: *class,
                            first_dispatch: None,
                            done: None,
                        },
                    );
                }
                Entry::Dispatch {
                    ids,
                    reason,
                    shape,
                    real_tokens,
                    service_ms,
                    chunk,
                    ..
                } => {
                    batches.batches += 1;
                    batches.busy_ms += service_ms;
                    members += ids.len() as u64;
                    *batches.reasons.entry(reason.as_str().to_string()).or_default() += 1;
                    padded += shape.l_pad as u64 * shape.depth as u64;
                    real += real_tokens;
                    let all_short = ids
                        .iter()
                        .all(|id| reqs.get(id).is_some_and(|q| q.class == RequestClass::Short));
                    if chunk.is_none() && all_short {
                        short_batches += 1;
                        if shape.kind == KernelKind::Graph {
                            graph_hits += 1;
                        }
                    }
                    for id in ids {
                        if let Some(q) = reqs.get_mut(id) {
                            q.first_dispatch.get_or_insert(r.time_ms);
                        }
                    }
                }
                Entry::Complete { ids, chunk, .. } => {
                    if chunk.is_none_or(|c| c.is_last()) {
                        last_done = Some(r.time_ms);
                        for id in ids {
                            if let Some(q) = reqs.get_mut(id) {
                                q.done = Some(r.time_ms);
                            }
                        }
                    }
                }
                Entry::Migrate { .. } => migrations += 1,
            }
        }

        let active_ms = match (first_arrival, last_done) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        };
        let mut all = (Vec::new(), Vec::new());
        let mut short = (Vec::new(), Vec::new());
        let mut long = (Vec::new(), Vec::new());
        for id in &order {
            let q = &reqs[id];
            let Some(done) = q.done else { continue };
            let ttft = done - q.arrival;
            let wait = q.first_dispatch.unwrap_or(done) - q.arrival;
            let bucket = match q.class {
                RequestClass::Short => &mut short,
                RequestClass::Long => &mut long,
            };
            bucket.0.push(ttft);
            bucket.1.push(wait);
            all.0.push(ttft);
            all.1.push(wait);
        }
        if batches.batches > 0 {
            batches.mean_depth = members as f64 / batches.batches as f64;
        }
        if short_batches > 0 {
            batches.graph_hit_rate = graph_hits as f64 / short_batches as f64;
        }
        if real > 0 {
            batches.padding_overhead = padded as f64 / real as f64 - 1.0;
        }
        if batches.busy_ms > 0.0 {
            batches.service_rps = all.0.len() as f64 * 1000.0 / batches.busy_ms;
        }
        Self {
            overall: ClassMetrics::from_samples(&mut all.0, &all.1, active_ms, slo_ms),
            short: ClassMetrics::from_samples(&mut short.0, &short.1, active_ms, slo_ms),
            long: ClassMetrics::from_samples(&mut long.0, &long.1, active_ms, slo_ms),
            batches,
            migrations,
            active_ms,
        }
    }

    pub fn class(&self, class: RequestClass) -> &ClassMetrics {
        match class {
            RequestClass::Short => &self.short,
            RequestClass::Long => &self.long,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn percentile_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 90.0), Ok(90.0));
        assert_eq!(percentile(&[7.0], 1.0), Ok(7.0));
        assert_eq!(percentile(&[7.0], 100.0), Ok(7.0));
        assert_eq!(percentile(&[5.0, 5.0, 5.0], 50.0), Ok(5.0));
        assert_eq!(percentile(&[], 50.0), Err(MetricsError::EmptySamples));
        assert_eq!(percentile(&[1.0], 0.0), Err(MetricsError::BadRank(0.0)));
    }

    #[test]
    fn slo_examples() {
        assert_eq!(slo_violation_rate(&[300.0, 500.0], 400.0), Ok(0.5));
        assert_eq!(slo_violation_rate(&[1.0, 400.0], 400.0), Ok(0.0));
        assert_eq!(slo_violation_rate(&[401.0, 900.0], 400.0), Ok(1.0));
        assert_eq!(slo_violation_rate(&[], 400.0), Err(MetricsError::EmptySamples));
    }

    proptest! {
        #[test]
        fn percentiles_monotone_in_rank(v in proptest::collection::vec(-1e6f64..1e6, 1..200), a in 0.1f64..100.0, b in 0.1f64..100.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(percentile(&v, lo).unwrap() <= percentile(&v, hi).unwrap());
            let r = slo_violation_rate(&v, 0.0).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
