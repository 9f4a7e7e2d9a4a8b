//! Post-hoc checks over an event log.

use std::collections::HashMap;

use thiserror::Error;

use super::log::{Entry, EventLog};
use crate::workload::RequestClass;

#[derive(Debug, Error, PartialEq)]
pub enum AuditError {
    #[error("ordering: {0}")]
    Ordering(String),
    #[error("conservation: {0}")]
    Conservation(String),
    #[error("causality: {0}")]
    Causality(String),
    #[error("mixed-class batch: {0}")]
    MixedBatch(String),
}

/// Counts gathered while auditing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AuditSummary {
    pub arrivals: usize,
    pub completions: usize,
    pub batches: usize,
    pub migrations: usize,
}

/// Checks record ordering, that every arrival completes exactly once, that
/// nothing is dispatched before it arrives or completes before it is
/// dispatched, and that instances run one batch at a time. With
/// `exclusive` set, batches must not mix classes.
pub fn audit(log: &EventLog, exclusive: bool) -> Result<AuditSummary, AuditError> {
    let mut arrivals: HashMap<u64, (f64, RequestClass)> = HashMap::new();
    let mut completed: HashMap<u64, f64> = HashMap::new();
    let mut running: HashMap<u32, (f64, f64, Vec<u64>)> = HashMap::new();
    let mut sum = AuditSummary::default();
    let mut prev = (f64::NEG_INFINITY, None::<u64>);

    for r in &log.records {
        if r.time_ms < prev.0 || prev.1.is_some_and(|s| r.seq <= s) {
            return Err(AuditError::Ordering(format!("record {} out of order", r.seq)));
        }
        prev = (r.time_ms, Some(r.seq));
        match &r.entry {
            Entry::Arrival { id, class, .. } => {
                if arrivals.insert(*id, (r.time_ms, *class)).is_some() {
                    return Err(AuditError::Conservation(format!("request {id} arrives twice")));
                }
                sum.arrivals += 1;
            }
            Entry::Dispatch {
                instance,
                ids,
                service_ms,
                ..
            } => {
                if ids.is_empty() {
                    return Err(AuditError::Causality(format!("empty batch at record {}", r.seq)));
                }
                let mut class = None;
                for id in ids {
                    let Some(&(at, c)) = arrivals.get(id) else {
                        return Err(AuditError::Causality(format!("request {id} dispatched before arrival")));
                    };
                    if r.time_ms < at {
                        return Err(AuditError::Causality(format!(
                            "request {id} dispatched at {}",
                            r.time_ms
                        )));
                    }
                    if completed.contains_key(id) {
                        return Err(AuditError::Causality(format!(
                            "request {id} dispatched after completing"
                        )));
                    }
                    if exclusive && class.is_some_and(|k| k != c) {
                        return Err(AuditError::MixedBatch(format!("record {}", r.seq)));
                    }
                    class = Some(c);
                }
                if running
                    .insert(*instance, (r.time_ms, r.time_ms + service_ms, ids.clone()))
                    .is_some()
                {
                    return Err(AuditError::Causality(format!("instance {instance} double-booked")));
                }
                sum.batches += 1;
            }
            Entry::Complete { instance, ids, chunk } => {
                let Some((_, end, batch)) = running.remove(instance) else {
                    return Err(AuditError::Causality(format!(
                        "instance {instance} completes while idle"
                    )));
                };
                if r.time_ms != end || *ids != batch {
                    return Err(AuditError::Causality(format!(
                        "instance {instance} completion at {} does not match its dispatch",
                        r.time_ms
                    )));
                }
                if chunk.is_none_or(|c| c.is_last()) {
                    for id in ids {
                        if completed.insert(*id, r.time_ms).is_some() {
                            return Err(AuditError::Conservation(format!("request {id} completes twice")));
                        }
                        sum.completions += 1;
                    }
                }
            }
            Entry::Migrate { .. } => sum.migrations += 1,
        }
    }
    if let Some(id) = arrivals.keys().filter(|id| !completed.contains_key(id)).min() {
        return Err(AuditError::Conservation(format!("request {id} never completes")));
    }
    if !running.is_empty() {
        return Err(AuditError::Conservation("log ends with batches in flight".into()));
    }
    Ok(sum)
}
