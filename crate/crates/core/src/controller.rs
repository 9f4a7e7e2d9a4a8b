//! Pressure-driven rebalancing of instances between the short and long pools.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error("cannot aggregate an empty pool")]
    EmptyPool,
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    Short,
    Long,
}

impl Pool {
    pub fn as_str(&self) -> &'static str {
        match self {
            Pool::Short => "short",
            Pool::Long => "long",
        }
    }

    pub fn other(&self) -> Pool {
        match self {
            Pool::Short => Pool::Long,
            Pool::Long => Pool::Short,
        }
    }
}

/// Snapshot of one instance over the last control period.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InstanceStats {
    /// Pending requests attributed to the instance.
    pub q: f64,
    /// Mean positive lateness of recent completions (ms).
    pub e: f64,
    /// Busy fraction.
    pub u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub dt: f64,
    pub t_cool: f64,
    pub tau_hyst: f64,
    pub n_min: u32,
    pub w_q: f64,
    pub w_e: f64,
    pub w_u: f64,
    pub percentile: f64,
    /// Absolute dead-band added to the hysteresis margin.
    pub min_gap: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            dt: 100.0,
            t_cool: 500.0,
            tau_hyst: 0.25,
            n_min: 1,
            w_q: 1.0,
            w_e: 10.0,
            w_u: 5.0,
            percentile: 90.0,
            min_gap: 2.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self, n_instances: u32) -> Result<(), ControllerError> {
        let bad = |m: String| Err(ControllerError::InvalidConfig(m));
        let vals = [
            self.dt,
            self.t_cool,
            self.tau_hyst,
            self.w_q,
            self.w_e,
            self.w_u,
            self.percentile,
            self.min_gap,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return bad("non-finite value".into());
        }
        if self.dt <= 0.0 {
            return bad("dt must be > 0".into());
        }
        if self.t_cool < 0.0 || self.tau_hyst < 0.0 || self.min_gap < 0.0 {
            return bad("t_cool, tau_hyst and min_gap must be >= 0".into());
        }
        if self.w_q < 0.0 || self.w_e < 0.0 || self.w_u < 0.0 {
            return bad("pressure weights must be >= 0".into());
        }
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return bad("percentile must lie in (0, 100]".into());
        }
        if 2 * self.n_min > n_instances {
            return bad(format!(
                "2 * n_min = {} exceeds {n_instances} instances",
                2 * self.n_min
            ));
        }
        Ok(())
    }
}

/// Pool membership of every instance plus the last migration time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    pub assignment: Vec<Pool>,
    pub t_last: Option<f64>,
}

impl PoolState {
    /// First `n_s` instances short, the rest long.
    pub fn split(n_s: u32, n_l: u32) -> Self {
        let mut assignment = vec![Pool::Short; n_s as usize];
        assignment.resize((n_s + n_l) as usize, Pool::Long);
        Self {
            assignment,
            t_last: None,
        }
    }

    pub fn count(&self, pool: Pool) -> u32 {
        self.assignment.iter().filter(|&&p| p == pool).count() as u32
    }

    pub fn n_s(&self) -> u32 {
        self.count(Pool::Short)
    }

    pub fn n_l(&self) -> u32 {
        self.count(Pool::Long)
    }

    pub fn members(&self, pool: Pool) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, &p)| p == pool)
            .map(|(i, _)| i)
    }
}

/// `w_q q + w_e e - w_u u`; negative for idle, empty instances.
pub fn pressure(s: &InstanceStats, cfg: &ControllerConfig) -> f64 {
    cfg.w_q * s.q + cfg.w_e * s.e - cfg.w_u * s.u
}

/// Nearest-rank percentile of the pool's scores.
pub fn aggregate(scores: &[f64], percentile: f64) -> Result<f64, ControllerError> {
    if scores.is_empty() {
        return Err(ControllerError::EmptyPool);
    }
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * v.len() as f64).ceil() as usize;
    Ok(v[rank.clamp(1, v.len()) - 1])
}

/// Direction of a single migration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Migration {
    pub from: Pool,
    pub to: Pool,
}

/// At most one migration, gated by cool-down, hysteresis and `n_min`.
///
/// The hysteresis test is `P_to - P_from > tau |P_from| + min_gap`, so
/// pressures near or below zero still need a real margin.
pub fn decide(p_s: f64, p_l: f64, state: &PoolState, cfg: &ControllerConfig, now: f64) -> Option<Migration> {
    if state.t_last.is_some_and(|t| now - t < cfg.t_cool) {
        return None;
    }
    let beats = |a: f64, b: f64| a - b > cfg.tau_hyst * b.abs() + cfg.min_gap;
    if beats(p_s, p_l) && state.n_l() > cfg.n_min {
        Some(Migration {
            from: Pool::Long,
            to: Pool::Short,
        })
    } else if beats(p_l, p_s) && state.n_s() > cfg.n_min {
        Some(Migration {
            from: Pool::Short,
            to: Pool::Long,
        })
    } else {
        None
    }
}

/// Applies `m`, moving the donor-pool instance with the lowest pressure
/// (lowest id on ties). Returns the moved instance.
pub fn apply(state: &mut PoolState, m: Migration, pressures: &[f64], now: f64) -> Option<usize> {
    let pick = state
        .members(m.from)
        .min_by(|&a, &b| pressures[a].total_cmp(&pressures[b]).then(a.cmp(&b)))?;
    state.assignment[pick] = m.to;
    state.t_last = Some(now);
    Some(pick)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> ControllerConfig {
        ControllerConfig {
            w_q: 1.0,
            w_e: 1.0,
            w_u: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn pressure_examples() {
        let c = unit();
        assert_eq!(pressure(&InstanceStats::default(), &c), 0.0);
        assert_eq!(pressure(&InstanceStats { q: 5.0, e: 2.0, u: 3.0 }, &c), 4.0);
        assert_eq!(pressure(&InstanceStats { q: 5.0, e: 2.0, u: 1.0 }, &c), 6.0);
        // A busy but late instance outranks an idle backlogged one until
        // the utilization weight dominates.
        let idle_backlogged = InstanceStats { q: 2.0, e: 0.0, u: 0.0 };
        let busy_late = InstanceStats { q: 0.0, e: 1.0, u: 1.0 };
        let base = ControllerConfig::default();
        assert!(pressure(&busy_late, &base) > pressure(&idle_backlogged, &base));
        let heavy_u = ControllerConfig { w_u: 20.0, ..base };
        assert!(pressure(&busy_late, &heavy_u) < pressure(&idle_backlogged, &heavy_u));
    }

    #[test]
    fn aggregate_examples() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(aggregate(&v, 90.0), Ok(9.0));
        assert_eq!(aggregate(&[3.5], 90.0), Ok(3.5));
        assert_eq!(aggregate(&[2.0, 2.0, 2.0], 90.0), Ok(2.0));
        assert_eq!(aggregate(&[], 90.0), Err(ControllerError::EmptyPool));
    }

    #[test]
    fn decide_examples() {
        let c = ControllerConfig {
            tau_hyst: 0.5,
            n_min: 1,
            ..Default::default()
        };
        let st = PoolState::split(4, 4);
        assert_eq!(
            decide(10.0, 5.0, &st, &c, 0.0),
            Some(Migration {
                from: Pool::Long,
                to: Pool::Short
            })
        );
        assert_eq!(decide(10.0, 9.0, &st, &c, 0.0), None);
        assert_eq!(
            decide(5.0, 10.0, &st, &c, 0.0),
            Some(Migration {
                from: Pool::Short,
                to: Pool::Long
            })
        );
        let cooling = PoolState {
            t_last: Some(100.0),
            ..st.clone()
        };
        assert_eq!(decide(100.0, 1.0, &cooling, &c, 100.0 + c.t_cool - 1.0), None);
        assert!(decide(100.0, 1.0, &cooling, &c, 100.0 + c.t_cool).is_some());
        let floor = PoolState::split(7, 1);
        assert_eq!(decide(10.0, 5.0, &floor, &c, 0.0), None);
    }

    #[test]
    fn apply_moves_lowest_pressure_donor() {
        let mut st = PoolState::split(2, 3);
        let p = [0.0, 0.0, 4.0, -1.0, 2.0];
        let m = Migration {
            from: Pool::Long,
            to: Pool::Short,
        };
        assert_eq!(apply(&mut st, m, &p, 7.0), Some(3));
        assert_eq!((st.n_s(), st.n_l(), st.t_last), (3, 2, Some(7.0)));
    }

    #[test]
    fn config_rejects_oversized_floor() {
        let c = ControllerConfig {
            n_min: 3,
            ..Default::default()
        };
        assert!(c.validate(5).is_err());
        assert!(c.validate(6).is_ok());
    }

    proptest! {
        #[test]
        fn steady_pressures_inside_band_never_migrate(
            p_l in -50.0f64..50.0,
            frac in -0.99f64..0.99,
            ticks in 1usize..200,
        ) {
            let c = ControllerConfig::default();
            let p_s = p_l + frac * c.tau_hyst * p_l.abs();
            let band = |a: f64, b: f64| a - b <= c.tau_hyst * b.abs() + c.min_gap;
            prop_assume!(band(p_s, p_l) && band(p_l, p_s));
            let mut st = PoolState::split(4, 4);
            for k in 0..ticks {
                prop_assert!(decide(p_s, p_l, &st, &c, k as f64 * c.dt).is_none());
                st.t_last = None;
            }
        }

        #[test]
        fn pools_respect_floor_and_cool_down(
            n in 2u32..12,
            seq in proptest::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 1..300),
        ) {
            let c = ControllerConfig::default();
            let mut st = PoolState::split(n / 2, n - n / 2);
            let mut last: Option<f64> = None;
            for (k, (p_s, p_l)) in seq.into_iter().enumerate() {
                let now = k as f64 * c.dt;
                if let Some(m) = decide(p_s, p_l, &st, &c, now) {
                    apply(&mut st, m, &vec![0.0; n as usize], now);
                    if let Some(t) = last {
                        prop_assert!(now - t >= c.t_cool);
                    }
                    last = Some(now);
                }
                prop_assert_eq!(st.n_s() + st.n_l(), n);
                prop_assert!(st.n_s() >= c.n_min && st.n_l() >= c.n_min);
            }
        }

        #[test]
        fn sustained_step_moves_one_way(n in 4u32..12, ticks in 1usize..100) {
            let c = ControllerConfig::default();
            let mut st = PoolState::split(n - 1, 1);
            let mut prev = st.n_l();
            for k in 0..ticks {
                let now = k as f64 * c.dt;
                if let Some(m) = decide(0.0, 50.0, &st, &c, now) {
                    prop_assert_eq!(m.to, Pool::Long);
                    apply(&mut st, m, &vec![0.0; n as usize], now);
                }
                prop_assert!(st.n_l() >= prev && st.n_l() <= prev + 1);
                prev = st.n_l();
            }
        }
    }
}
