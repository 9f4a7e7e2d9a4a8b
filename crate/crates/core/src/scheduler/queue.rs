use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::grid::GraphGrid;
use crate::workload::Request;

/// The scheduling-relevant view of a queued request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pending {
    pub id: u64,
    pub new_tokens: u32,
    pub history_tokens: u32,
    pub arrival_ms: f64,
    pub deadline_ms: Option<f64>,
}

impl Pending {
    pub fn from_request(r: &Request, deadline_ms: Option<f64>) -> Self {
        Self {
            id: r.id,
            new_tokens: r.new_tokens,
            history_tokens: r.history_tokens,
            arrival_ms: r.arrival_ms,
            deadline_ms,
        }
    }

    fn order_key(&self) -> (f64, u64) {
        (self.arrival_ms, self.id)
    }
}

/// A queue split into per-bucket FIFOs (plus one overflow FIFO for lengths
/// beyond the grid).
#[derive(Debug, Clone)]
pub struct BucketQueue {
    buckets: Vec<VecDeque<Pending>>,
    len: usize,
    enqueued_total: u64,
}

/// Per-bucket prefix counts describing which requests a batch would take.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub counts: Vec<usize>,
}

impl Selection {
    pub fn depth(&self) -> usize {
        self.counts.iter().sum()
    }
}

impl BucketQueue {
    pub fn new(grid: &GraphGrid) -> Self {
        Self {
            buckets: vec![VecDeque::new(); grid.lengths.len() + 1],
            len: 0,
            enqueued_total: 0,
        }
    }

    pub fn push(&mut self, p: Pending, grid: &GraphGrid) {
        let b = grid.bucket_index(p.new_tokens);
        self.buckets[b].push_back(p);
        self.len += 1;
        self.enqueued_total += 1;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Monotone count of every push, used for arrival-rate estimation.
    pub fn enqueued_total(&self) -> u64 {
        self.enqueued_total
    }

    pub fn iter(&self) -> impl Iterator<Item = &Pending> {
        self.buckets.iter().flatten()
    }

    fn head_bucket(&self) -> Option<usize> {
        self.buckets
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.front().map(|p| (p.order_key(), i)))
            .min_by(|a, b| a.0 .0.total_cmp(&b.0 .0).then(a.0 .1.cmp(&b.0 .1)))
            .map(|(_, i)| i)
    }

    /// Oldest queued request.
    pub fn head(&self) -> Option<&Pending> {
        self.head_bucket().and_then(|b| self.buckets[b].front())
    }

    pub fn total_tokens(&self) -> u64 {
        self.iter().map(|p| p.new_tokens as u64).sum()
    }

    pub fn earliest_deadline(&self) -> Option<f64> {
        self.iter().filter_map(|p| p.deadline_ms).min_by(f64::total_cmp)
    }

    /// Bucket-first grouping: take the head-of-line bucket in FIFO order,
    /// then the buckets above it, until `cap` requests are selected.
    pub fn select(&self, cap: usize) -> Selection {
        self.select_within(cap, None)
    }

    /// Like [`select`](Self::select), but also stops before the padded size
    /// `depth * max_len` would exceed `budget`. The first request is always
    /// taken.
    pub fn select_within(&self, cap: usize, budget: Option<u64>) -> Selection {
        let mut counts = vec![0; self.buckets.len()];
        let Some(start) = self.head_bucket() else {
            return Selection { counts };
        };
        let mut depth = 0usize;
        let mut max_len = 0u64;
        'outer: for (b, bucket) in self.buckets.iter().enumerate().skip(start) {
            for p in bucket {
                if depth == cap {
                    break 'outer;
                }
                let len = max_len.max(p.new_tokens as u64);
                if depth > 0 && budget.is_some_and(|m| (depth as u64 + 1) * len > m) {
                    break 'outer;
                }
                max_len = len;
                depth += 1;
                counts[b] += 1;
            }
        }
        Selection { counts }
    }

    pub fn selected(&self, sel: &Selection) -> Vec<Pending> {
        sel.counts
            .iter()
            .zip(&self.buckets)
            .flat_map(|(&n, b)| b.iter().take(n).copied())
            .collect()
    }

    /// The oldest request that `sel` leaves behind.
    pub fn next_after(&self, sel: &Selection) -> Option<&Pending> {
        sel.counts
            .iter()
            .zip(&self.buckets)
            .filter_map(|(&n, b)| b.get(n))
            .min_by(|a, b| a.arrival_ms.total_cmp(&b.arrival_ms).then(a.id.cmp(&b.id)))
    }

    pub fn take(&mut self, sel: &Selection) -> Vec<Pending> {
        let mut out = Vec::with_capacity(sel.depth());
        for (&n, bucket) in sel.counts.iter().zip(self.buckets.iter_mut()) {
            out.extend(bucket.drain(..n));
        }
        self.len -= out.len();
        out
    }

    pub fn drain_all(&mut self) -> Vec<Pending> {
        let mut all: Vec<Pending> = self.buckets.iter_mut().flat_map(|b| b.drain(..)).collect();
        all.sort_by(|a, b| a.arrival_ms.total_cmp(&b.arrival_ms).then(a.id.cmp(&b.id)));
        self.len = 0;
        all
    }
}
