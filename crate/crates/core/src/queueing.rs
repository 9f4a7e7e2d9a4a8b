//! Closed-form M/G/1 FCFS predictions used to validate the simulator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueueingError {
    #[error("unstable queue: utilization {0} >= 1")]
    UnstableQueue(f64),
    #[error("invalid moments: E[S^2]={e_s2} < E[S]^2={sq}")]
    InvalidMoments { e_s2: f64, sq: f64 },
    #[error("invalid service mix: {0}")]
    InvalidMix(String),
}

/// Two-point service distribution under Poisson arrivals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceMix {
    pub lambda: f64,
    pub p_short: f64,
    pub s_short: f64,
    pub s_long: f64,
}

impl ServiceMix {
    pub fn new(lambda: f64, p_short: f64, s_short: f64, s_long: f64) -> Result<Self, QueueingError> {
        let mix = Self {
            lambda,
            p_short,
            s_short,
            s_long,
        };
        if !(lambda > 0.0) {
            return Err(QueueingError::InvalidMix("lambda must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&p_short) {
            return Err(QueueingError::InvalidMix("p_short must lie in [0, 1]".into()));
        }
        if !(s_short > 0.0 && s_short <= s_long) {
            return Err(QueueingError::InvalidMix("need 0 < s_short <= s_long".into()));
        }
        if mix.utilization() >= 1.0 {
            return Err(QueueingError::UnstableQueue(mix.utilization()));
        }
        Ok(mix)
    }

    pub fn mean(&self) -> f64 {
        self.p_short * self.s_short + (1.0 - self.p_short) * self.s_long
    }

    pub fn second_moment(&self) -> f64 {
        self.p_short * self.s_short * self.s_short + (1.0 - self.p_short) * self.s_long * self.s_long
    }

    pub fn utilization(&self) -> f64 {
        self.lambda * self.mean()
    }

    pub fn pk_wait(&self) -> Result<f64, QueueingError> {
        pk_wait(self.lambda, self.mean(), self.second_moment())
    }
}

/// Pollaczek-Khinchine mean wait `lambda E[S²] / (2 (1 - rho))`.
pub fn pk_wait(lambda: f64, e_s: f64, e_s2: f64) -> Result<f64, QueueingError> {
    let rho = lambda * e_s;
    if rho >= 1.0 {
        return Err(QueueingError::UnstableQueue(rho));
    }
    // Allow rounding noise on exact deterministic moments.
    let sq = e_s * e_s;
    if e_s2 < sq * (1.0 - 1e-12) {
        return Err(QueueingError::InvalidMoments { e_s2, sq });
    }
    Ok((lambda * e_s2 / (2.0 * (1.0 - rho))).max(0.0))
}

/// Extra wait caused by mixing two service classes:
/// `lambda p (1-p) (S_l - S_s)² / (2 (1 - rho))`, with `rho` taken from the mix.
pub fn hol_penalty(mix: &ServiceMix) -> Result<f64, QueueingError> {
    hol_penalty_at(mix.lambda, mix.p_short, mix.s_short, mix.s_long, mix.utilization())
}

/// Same penalty with the utilization supplied explicitly.
pub fn hol_penalty_at(lambda: f64, p_short: f64, s_short: f64, s_long: f64, rho: f64) -> Result<f64, QueueingError> {
    if rho >= 1.0 {
        return Err(QueueingError::UnstableQueue(rho));
    }
    let gap = s_long - s_short;
    Ok(lambda * p_short * (1.0 - p_short) * gap * gap / (2.0 * (1.0 - rho)))
}

/// `R / S = 1 + W / S`.
pub fn normalized_latency(service: f64, wait: f64) -> f64 {
    1.0 + wait / service
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn pk_examples() {
        assert_relative_eq!(pk_wait(0.5, 1.0, 2.0).unwrap(), 1.0);
        assert_relative_eq!(pk_wait(0.5, 1.0, 1.0).unwrap(), 0.5);
        assert_relative_eq!(pk_wait(0.4, 2.0, 5.0).unwrap(), 5.0, max_relative = 1e-12);
    }

    #[test]
    fn pk_errors() {
        assert!(matches!(pk_wait(1.0, 1.0, 2.0), Err(QueueingError::UnstableQueue(_))));
        assert!(matches!(
            pk_wait(0.1, 2.0, 3.0),
            Err(QueueingError::InvalidMoments { .. })
        ));
    }

    #[test]
    fn hol_examples() {
        assert_eq!(hol_penalty(&ServiceMix::new(0.2, 0.0, 1.0, 3.0).unwrap()).unwrap(), 0.0);
        assert_eq!(hol_penalty(&ServiceMix::new(0.2, 1.0, 1.0, 3.0).unwrap()).unwrap(), 0.0);
        assert_eq!(hol_penalty_at(1.0, 0.5, 1.0, 3.0, 0.5).unwrap(), 1.0);
        let mix = ServiceMix::new(0.25, 0.5, 1.0, 3.0).unwrap();
        assert_relative_eq!(hol_penalty(&mix).unwrap(), 0.25, max_relative = 1e-12);
        assert!(matches!(
            hol_penalty_at(1.0, 0.5, 1.0, 3.0, 1.0),
            Err(QueueingError::UnstableQueue(_))
        ));
    }

    #[test]
    fn normalized_examples() {
        assert_eq!(normalized_latency(5.0, 0.0), 1.0);
        assert_eq!(normalized_latency(1.0, 2.0), 3.0);
        assert_eq!(normalized_latency(1.0, 3.0), 4.0);
        assert_eq!(normalized_latency(3.0, 3.0), 2.0);
    }

    #[test]
    fn decomposition_matches_pk() {
        // E[S²] = E[S]² + p(1-p)(S_l - S_s)², so the mixed wait splits into a
        // deterministic-service part and the HoL penalty.
        let mix = ServiceMix::new(0.25, 0.5, 1.0, 3.0).unwrap();
        let det = pk_wait(mix.lambda, mix.mean(), mix.mean() * mix.mean()).unwrap();
        assert_relative_eq!(
            mix.pk_wait().unwrap(),
            det + hol_penalty(&mix).unwrap(),
            max_relative = 1e-12
        );
    }

    proptest! {
        #[test]
        fn exponential_service_matches_mm1(mu in 0.1f64..10.0, frac in 0.01f64..0.99) {
            let lambda = frac * mu;
            let e_s = 1.0 / mu;
            let w = pk_wait(lambda, e_s, 2.0 * e_s * e_s).unwrap();
            let mm1 = frac / (mu - lambda);
            prop_assert!((w - mm1).abs() <= 1e-9 * mm1.max(1.0));
        }

        #[test]
        fn hol_symmetric_and_quadratic(
            p in 0.0f64..=1.0,
            ss in 0.1f64..2.0,
            gap in 0.0f64..2.0,
            rho in 0.0f64..0.95,
        ) {
            let lambda = 0.3;
            let sl = ss + gap;
            let fwd = hol_penalty_at(lambda, p, ss, sl, rho).unwrap();
            let rev = hol_penalty_at(lambda, 1.0 - p, ss, sl, rho).unwrap();
            prop_assert!((fwd - rev).abs() <= 1e-12 * fwd.max(1.0));
            let doubled = hol_penalty_at(lambda, p, ss, ss + 2.0 * gap, rho).unwrap();
            prop_assert!((doubled - 4.0 * fwd).abs() <= 1e-9 * doubled.max(1e-12));
            prop_assert!(fwd >= 0.0);
        }

        #[test]
        fn convoy_effect(w in 0.001f64..100.0, a in 0.01f64..10.0, d in 0.001f64..10.0) {
            prop_assert!(normalized_latency(a, w) > normalized_latency(a + d, w));
            prop_assert!(normalized_latency(a, w) >= 1.0);
        }
    }
}
