//! One-parameter sweeps over independent runs, and their CSV form.

use std::cmp::Ordering;
use std::fmt::Write as _;

use thiserror::Error;

use crate::config::{ConfigError, Scenario};
use crate::engine::{run, SimError};
use crate::metrics::{ClassMetrics, MetricsReport};
use crate::workload::Request;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("no sweep values given")]
    NoValues,
    #[error("at {param}={value}: {source}")]
    Point {
        param: String,
        value: String,
        source: Box<SweepError>,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Maps `f` over `items`, in parallel with the `parallel` feature. Output
/// order always matches input order.
#[cfg(feature = "parallel")]
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Sequential reference for benchmarking against [`par_map`].
pub fn seq_map<T, U, F: Fn(&T) -> U>(items: &[T], f: F) -> Vec<U> {
    items.iter().map(f).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub report: MetricsReport,
}

/// Numeric order when both parse, lexical otherwise.
fn value_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

fn run_point(base: &Scenario, param: &str, value: &str, trace: Option<&[Request]>) -> Result<SweepRow, SweepError> {
    let mut sc = base.clone();
    sc.set(param, value)?;
    sc.validate()?;
    let owned;
    let reqs = match trace {
        Some(t) => t,
        None => {
            owned = sc.requests()?;
            &owned
        }
    };
    let out = run(&sc.sim, reqs)?;
    Ok(SweepRow {
        value: value.to_string(),
        report: out.report,
    })
}

/// Runs one simulation per value of `param`. A supplied trace is replayed at
/// every point; otherwise each point synthesizes its own stream. Rows come
/// back sorted by value.
pub fn run_sweep(
    base: &Scenario,
    param: &str,
    values: &[String],
    trace: Option<&[Request]>,
) -> Result<Vec<SweepRow>, SweepError> {
    if values.is_empty() {
        return Err(SweepError::NoValues);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| value_order(a, b));
    par_map(&sorted, |v| {
        run_point(base, param, v, trace).map_err(|e| SweepError::Point {
            param: param.to_string(),
            value: v.clone(),
            source: Box::new(e),
        })
    })
    .into_iter()
    .collect()
}

const CLASS_COLS: [&str; 8] = [
    "count",
    "ttft_mean_ms",
    "ttft_p50_ms",
    "ttft_p90_ms",
    "ttft_p99_ms",
    "wait_mean_ms",
    "rps",
    "slo_violation_rate",
];

const TAIL_COLS: [&str; 8] = [
    "batches",
    "mean_depth",
    "graph_hit_rate",
    "padding_overhead",
    "busy_ms",
    "service_rps",
    "migrations",
    "active_ms",
];

pub fn csv_header() -> String {
    let mut cols = vec!["param".to_string(), "value".to_string()];
    for class in ["overall", "short", "long"] {
        cols.extend(CLASS_COLS.iter().map(|c| format!("{class}_{c}")));
    }
    cols.extend(TAIL_COLS.iter().map(|c| c.to_string()));
    cols.join(",")
}

fn class_cells(m: &ClassMetrics) -> [String; 8] {
    [
        m.count.to_string(),
        m.ttft_mean.to_string(),
        m.ttft_p50.to_string(),
        m.ttft_p90.to_string(),
        m.ttft_p99.to_string(),
        m.wait_mean.to_string(),
        m.rps.to_string(),
        m.slo_violation_rate.to_string(),
    ]
}

pub fn csv_row(param: &str, row: &SweepRow) -> String {
    let r = &row.report;
    let mut cells = vec![param.to_string(), row.value.clone()];
    for m in [&r.overall, &r.short, &r.long] {
        cells.extend(class_cells(m));
    }
    let b = &r.batches;
    cells.extend([
        b.batches.to_string(),
        b.mean_depth.to_string(),
        b.graph_hit_rate.to_string(),
        b.padding_overhead.to_string(),
        b.busy_ms.to_string(),
        b.service_rps.to_string(),
        r.migrations.to_string(),
        r.active_ms.to_string(),
    ]);
    cells.join(",")
}

pub fn to_csv(param: &str, rows: &[SweepRow]) -> String {
    let mut out = csv_header();
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{}", csv_row(param, row));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Scenario {
        let mut s =
            Scenario::parse("sim.duration_ms = 2000\nworkload.rate_per_ms = 0.02\nsim.policy = fcfs_unified").unwrap();
        s.sim.seed = 3;
        s
    }

    #[test]
    fn rows_sorted_numerically_and_stable() {
        let vals: Vec<String> = ["10", "2", "5"].iter().map(|s| s.to_string()).collect();
        let a = run_sweep(&small(), "w_max", &vals, None).unwrap();
        let got: Vec<&str> = a.iter().map(|r| r.value.as_str()).collect();
        assert_eq!(got, ["2", "5", "10"]);
        let b = run_sweep(&small(), "w_max", &vals, None).unwrap();
        assert_eq!(to_csv("w_max", &a), to_csv("w_max", &b));
    }

    #[test]
    fn header_matches_row_width() {
        let row = SweepRow {
            value: "1".into(),
            report: MetricsReport::default(),
        };
        let h = csv_header().split(',').count();
        assert_eq!(csv_row("x", &row).split(',').count(), h);
    }

    #[test]
    fn errors_name_the_point() {
        let vals = vec!["1".to_string(), "oops".to_string()];
        let err = run_sweep(&small(), "w_max", &vals, None).unwrap_err();
        assert!(err.to_string().contains("w_max=oops"), "{err}");
        assert!(matches!(
            run_sweep(&small(), "w_max", &[], None),
            Err(SweepError::NoValues)
        ));
    }

    #[test]
    fn par_map_keeps_order() {
        let v: Vec<u64> = (0..1000).collect();
        assert_eq!(par_map(&v, |x| x * 2), seq_map(&v, |x| x * 2));
    }
}
