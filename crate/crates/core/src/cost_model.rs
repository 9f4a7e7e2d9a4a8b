//! Analytical prefill / re-prefill latency model.
//!
//! A prefill of `L` new tokens on top of `H` cached history tokens costs
//!
//! ```text
//! t_comp(L, H) = alpha * L * (L + 2H) + beta * L
//! t_mem(L, H)  = gamma_w * L + gamma_r * H
//! ```
//!
//! milliseconds. Everything the simulator charges for execution is derived
//! from these two terms plus a per-batch launch overhead.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostModelError {
    #[error("invalid cost parameters: {0}")]
    InvalidParams(String),
    #[error("no latency samples supplied")]
    EmptyInput,
    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),
    #[error("batch shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Fitted per-token coefficients. All times are milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Attention cost per token².
    pub alpha: f64,
    /// FFN cost per token.
    pub beta: f64,
    /// KV write cost per new token.
    pub gamma_w: f64,
    /// KV read cost per history token.
    pub gamma_r: f64,
}

impl CostParams {
    pub fn new(alpha: f64, beta: f64, gamma_w: f64, gamma_r: f64) -> Result<Self, CostModelError> {
        let p = Self {
            alpha,
            beta,
            gamma_w,
            gamma_r,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CostModelError> {
        let all = [self.alpha, self.beta, self.gamma_w, self.gamma_r];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(CostModelError::InvalidParams("non-finite coefficient".into()));
        }
        if self.alpha <= 0.0 {
            return Err(CostModelError::InvalidParams(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if self.beta < 0.0 || self.gamma_w < 0.0 || self.gamma_r < 0.0 {
            return Err(CostModelError::InvalidParams(
                "beta, gamma_w and gamma_r must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// The saturation value of the re-prefill boundary for very long histories.
    pub fn reprefill_limit(&self) -> f64 {
        self.gamma_r / (2.0 * self.alpha)
    }
}

impl Default for CostParams {
    /// Calibrated so that both the prefill and the re-prefill boundary sit at
    /// 256 tokens: `gamma_w - beta = 256 * alpha` and `gamma_r = 512 * alpha`
    /// make `L = 256` a root of `t_comp = t_mem` for every history length.
    fn default() -> Self {
        let alpha = 1e-5;
        let beta = 0.02;
        Self {
            alpha,
            beta,
            gamma_w: beta + 256.0 * alpha,
            gamma_r: 512.0 * alpha,
        }
    }
}

/// Launch overheads and batching efficiency used to turn per-request costs
/// into a batch service time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecOverheads {
    pub kappa_graph: f64,
    pub kappa_std: f64,
    /// Batching-efficiency exponent; a batch of depth `B` costs `B^(eta-1)`
    /// times the sum of its rows.
    pub eta: f64,
}

impl ExecOverheads {
    pub fn validate(&self) -> Result<(), CostModelError> {
        if !(self.kappa_graph.is_finite() && self.kappa_std.is_finite() && self.eta.is_finite()) {
            return Err(CostModelError::InvalidParams("non-finite overhead".into()));
        }
        if self.kappa_graph < 0.0 || self.kappa_graph > self.kappa_std {
            return Err(CostModelError::InvalidParams(
                "need 0 <= kappa_graph <= kappa_std".into(),
            ));
        }
        if self.eta <= 0.0 || self.eta > 1.0 {
            return Err(CostModelError::InvalidParams("eta must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn launch_cost(&self, kind: KernelKind) -> f64 {
        match kind {
            KernelKind::Graph => self.kappa_graph,
            KernelKind::Standard => self.kappa_std,
        }
    }
}

impl Default for ExecOverheads {
    fn default() -> Self {
        Self {
            kappa_graph: 0.05,
            kappa_std: 0.5,
            eta: 0.7,
        }
    }
}

/// Hardware roofline description.
///
/// Arithmetic intensity grows linearly with prompt length:
/// `AI(L) = L * ops_per_token / bytes_per_token`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RooflineParams {
    pub p_peak: f64,
    pub b_mem: f64,
    pub bytes_per_token: f64,
    pub ops_per_token: f64,
}

impl RooflineParams {
    pub fn validate(&self) -> Result<(), CostModelError> {
        let all = [self.p_peak, self.b_mem, self.bytes_per_token, self.ops_per_token];
        if all.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(CostModelError::InvalidParams(
                "roofline parameters must be finite and > 0".into(),
            ));
        }
        Ok(())
    }

    /// Ridge point `AI* = P_peak / B_mem`.
    pub fn ridge_intensity(&self) -> f64 {
        self.p_peak / self.b_mem
    }

    pub fn intensity(&self, tokens: f64) -> f64 {
        tokens * self.ops_per_token / self.bytes_per_token
    }

    /// Prompt length at which `AI(L)` reaches the ridge point.
    pub fn crossover_tokens(&self) -> f64 {
        self.ridge_intensity() * self.bytes_per_token / self.ops_per_token
    }
}

impl Default for RooflineParams {
    /// H200-like numbers in ops/ms and bytes/ms with a crossover at 256 tokens.
    fn default() -> Self {
        let p_peak = 989.0e9;
        let b_mem = 4.8e9;
        let bytes_per_token = 1.0;
        Self {
            p_peak,
            b_mem,
            bytes_per_token,
            ops_per_token: p_peak / b_mem / 256.0,
        }
    }
}

/// One profiled (re-)prefill measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub new_tokens: u32,
    pub history_tokens: u32,
    pub t_comp: f64,
    pub t_mem: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Graph,
    Standard,
}

impl KernelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            KernelKind::Graph => "graph",
            KernelKind::Standard => "standard",
        }
    }
}

/// Execution shape of a batch: every row is padded to `l_pad` tokens and the
/// batch occupies `depth` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchShape {
    pub l_pad: u32,
    pub depth: u32,
    pub kind: KernelKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latency {
    pub compute: f64,
    pub memory: f64,
}

impl Latency {
    pub fn total(&self) -> f64 {
        self.compute + self.memory
    }
}

pub fn compute_latency(new_tokens: f64, history_tokens: f64, p: &CostParams) -> Latency {
    let l = new_tokens;
    let h = history_tokens;
    Latency {
        compute: p.alpha * l * (l + 2.0 * h) + p.beta * l,
        memory: p.gamma_w * l + p.gamma_r * h,
    }
}

/// First-turn compute/memory boundary `max(0, (gamma_w - beta) / alpha)`.
pub fn prefill_boundary(p: &CostParams) -> f64 {
    ((p.gamma_w - p.beta) / p.alpha).max(0.0)
}

/// Positive root of `alpha L² + (2 alpha H + beta - gamma_w) L - gamma_r H = 0`.
pub fn reprefill_boundary(p: &CostParams, history_tokens: f64) -> f64 {
    if history_tokens <= 0.0 {
        return prefill_boundary(p);
    }
    let b = 2.0 * p.alpha * history_tokens + p.beta - p.gamma_w;
    let c = p.gamma_r * history_tokens;
    let disc = (b * b + 4.0 * p.alpha * c).sqrt();
    // Pick the cancellation-free form of the same root.
    let root = if b > 0.0 {
        2.0 * c / (b + disc)
    } else {
        (disc - b) / (2.0 * p.alpha)
    };
    root.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundedness {
    ComputeBound,
    MemoryBound,
}

/// Ties (`AI(L) == AI*`) count as compute-bound.
pub fn roofline_classify(tokens: u32, r: &RooflineParams) -> Boundedness {
    if r.intensity(tokens as f64) >= r.ridge_intensity() {
        Boundedness::ComputeBound
    } else {
        Boundedness::MemoryBound
    }
}

/// Service time of one batch.
///
/// `rows` lists `(L, H)` for every occupied row, padding rows included, so
/// its length must equal `shape.depth`. Each row is charged at `shape.l_pad`
/// tokens regardless of its real length.
pub fn batch_service_time(
    shape: &BatchShape,
    rows: &[(u32, u32)],
    p: &CostParams,
    o: &ExecOverheads,
) -> Result<f64, CostModelError> {
    if shape.depth == 0 || shape.l_pad == 0 {
        return Err(CostModelError::ShapeMismatch(format!(
            "empty shape {}x{}",
            shape.l_pad, shape.depth
        )));
    }
    if rows.len() != shape.depth as usize {
        return Err(CostModelError::ShapeMismatch(format!(
            "{} rows for depth {}",
            rows.len(),
            shape.depth
        )));
    }
    if let Some(&(l, _)) = rows.iter().find(|(l, _)| *l > shape.l_pad) {
        return Err(CostModelError::ShapeMismatch(format!(
            "row of {l} tokens exceeds l_pad {}",
            shape.l_pad
        )));
    }
    let l_pad = shape.l_pad as f64;
    let sum: f64 = rows
        .iter()
        .map(|&(_, h)| compute_latency(l_pad, h as f64, p).total())
        .sum();
    let depth = shape.depth as f64;
    Ok(o.launch_cost(shape.kind) + depth.powf(o.eta - 1.0) * sum)
}

/// Least-squares fit of the four coefficients from profiled samples.
///
/// `t_comp` is regressed on `{L² + 2LH, L}` (which ties the `L²` and `LH`
/// coefficients together) and `t_mem` on `{L, H}`. A negative coefficient is
/// pinned to zero and the remaining one refit.
pub fn fit_params(samples: &[LatencySample]) -> Result<CostParams, CostModelError> {
    if samples.is_empty() {
        return Err(CostModelError::EmptyInput);
    }
    if samples.len() < 4 {
        return Err(CostModelError::DegenerateSamples(format!(
            "need at least 4 samples, got {}",
            samples.len()
        )));
    }
    let distinct = |f: fn(&LatencySample) -> u32| {
        let mut v: Vec<u32> = samples.iter().map(f).collect();
        v.sort_unstable();
        v.dedup();
        v.len()
    };
    if distinct(|s| s.new_tokens) < 2 {
        return Err(CostModelError::DegenerateSamples(
            "new_tokens takes a single value".into(),
        ));
    }
    if distinct(|s| s.history_tokens) < 2 {
        return Err(CostModelError::DegenerateSamples(
            "history_tokens takes a single value".into(),
        ));
    }

    let n = samples.len();
    let comp_x = DMatrix::from_fn(n, 2, |i, j| {
        let l = samples[i].new_tokens as f64;
        let h = samples[i].history_tokens as f64;
        if j == 0 {
            l * l + 2.0 * l * h
        } else {
            l
        }
    });
    let comp_y = DVector::from_iterator(n, samples.iter().map(|s| s.t_comp));
    let mem_x = DMatrix::from_fn(n, 2, |i, j| {
        if j == 0 {
            samples[i].new_tokens as f64
        } else {
            samples[i].history_tokens as f64
        }
    });
    let mem_y = DVector::from_iterator(n, samples.iter().map(|s| s.t_mem));

    let [alpha, beta] = nonneg_least_squares(&comp_x, &comp_y)?;
    let [gamma_w, gamma_r] = nonneg_least_squares(&mem_x, &mem_y)?;
    if alpha <= 0.0 {
        return Err(CostModelError::DegenerateSamples(
            "fitted attention coefficient is not positive".into(),
        ));
    }
    CostParams::new(alpha, beta, gamma_w, gamma_r)
}

fn nonneg_least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<[f64; 2], CostModelError> {
    // Column scaling keeps the conditioning check meaningful when one feature
    // is quadratic and the other linear.
    let scales: Vec<f64> = (0..x.ncols()).map(|j| x.column(j).norm()).collect();
    if scales.iter().any(|s| *s == 0.0 || !s.is_finite()) {
        return Err(CostModelError::DegenerateSamples("all-zero feature column".into()));
    }
    let mut xs = x.clone();
    for (j, s) in scales.iter().enumerate() {
        xs.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = xs.clone().svd(true, true);
    let sv = &svd.singular_values;
    let (max, min) = (sv.max(), sv.min());
    if !(min > max * 1e-10) {
        return Err(CostModelError::DegenerateSamples("rank-deficient design matrix".into()));
    }
    let coef = svd
        .solve(y, 0.0)
        .map_err(|e| CostModelError::DegenerateSamples(e.to_string()))?;
    let mut out = [coef[0] / scales[0], coef[1] / scales[1]];
    if out[0] >= 0.0 && out[1] >= 0.0 {
        return Ok(out);
    }
    // Pin the negative coefficient (or both) and refit the survivor alone.
    let keep = if out[0] < 0.0 && out[1] < 0.0 {
        None
    } else if out[0] < 0.0 {
        Some(1)
    } else {
        Some(0)
    };
    out = [0.0, 0.0];
    if let Some(j) = keep {
        let col = x.column(j);
        out[j] = (col.dot(y) / col.dot(&col)).max(0.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn example_params() -> CostParams {
        CostParams::new(1e-5, 0.01, 0.02, 0.002).unwrap()
    }

    #[test]
    fn zero_tokens_cost_nothing() {
        let lat = compute_latency(0.0, 0.0, &example_params());
        assert_eq!(lat.compute, 0.0);
        assert_eq!(lat.memory, 0.0);
    }

    #[test]
    fn latency_examples() {
        let p = example_params();
        let a = compute_latency(100.0, 0.0, &p);
        assert_relative_eq!(a.compute, 1.1, max_relative = 1e-12);
        assert_relative_eq!(a.memory, 2.0, max_relative = 1e-12);
        let b = compute_latency(10.0, 1000.0, &p);
        assert_relative_eq!(b.compute, 0.301, max_relative = 1e-12);
        assert_relative_eq!(b.memory, 2.2, max_relative = 1e-12);
        assert!(b.memory > b.compute);
    }

    #[test]
    fn prefill_boundary_cases() {
        let mut p = example_params();
        p.gamma_w = 0.01;
        p.beta = 0.02;
        assert_eq!(prefill_boundary(&p), 0.0);
        p.gamma_w = p.beta;
        assert_eq!(prefill_boundary(&p), 0.0);
        assert_relative_eq!(prefill_boundary(&example_params()), 1000.0, max_relative = 1e-12);
    }

    #[test]
    fn reprefill_boundary_cases() {
        let p = example_params();
        assert_eq!(reprefill_boundary(&p, 0.0), prefill_boundary(&p));
        // b = 0.01, disc = 1.8e-4 -> (-0.01 + sqrt(1.8e-4)) / 2e-5
        let expected = (-0.01 + 1.8e-4f64.sqrt()) / 2e-5;
        assert_relative_eq!(reprefill_boundary(&p, 1000.0), expected, max_relative = 1e-9);
        assert_relative_eq!(reprefill_boundary(&p, 1000.0), 170.82, epsilon = 0.01);
        let far = reprefill_boundary(&p, 1e6);
        assert!((far - 100.0).abs() / 100.0 < 0.01, "{far}");
    }

    #[test]
    fn default_params_put_both_boundaries_at_256() {
        let p = CostParams::default();
        assert_relative_eq!(prefill_boundary(&p), 256.0, max_relative = 1e-9);
        for h in [1.0, 100.0, 4096.0, 1e6] {
            assert_relative_eq!(reprefill_boundary(&p, h), 256.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn roofline_tie_and_crossover() {
        let r = RooflineParams {
            p_peak: 256.0,
            b_mem: 1.0,
            bytes_per_token: 2.0,
            ops_per_token: 2.0,
        };
        assert_eq!(r.crossover_tokens(), 256.0);
        assert_eq!(roofline_classify(256, &r), Boundedness::ComputeBound);
        assert_eq!(roofline_classify(100, &r), Boundedness::MemoryBound);
        assert_eq!(roofline_classify(512, &r), Boundedness::ComputeBound);
        assert_eq!(
            roofline_classify(1, &RooflineParams::default()),
            Boundedness::MemoryBound
        );
    }

    #[test]
    fn batch_time_examples() {
        let p = example_params();
        let mut o = ExecOverheads::default();
        let per = compute_latency(64.0, 10.0, &p).total();
        let single = BatchShape {
            l_pad: 64,
            depth: 1,
            kind: KernelKind::Graph,
        };
        let t = batch_service_time(&single, &[(50, 10)], &p, &o).unwrap();
        assert_relative_eq!(t, o.kappa_graph + per, max_relative = 1e-12);

        let four = BatchShape {
            l_pad: 64,
            depth: 4,
            kind: KernelKind::Standard,
        };
        let rows = [(64, 10); 4];
        o.eta = 1.0;
        let t = batch_service_time(&four, &rows, &p, &o).unwrap();
        assert_relative_eq!(t, o.kappa_std + 4.0 * per, max_relative = 1e-12);
        o.eta = 0.5;
        let t = batch_service_time(&four, &rows, &p, &o).unwrap();
        assert_relative_eq!(t, o.kappa_std + 2.0 * per, max_relative = 1e-12);
    }

    #[test]
    fn batch_time_rejects_bad_shapes() {
        let p = example_params();
        let o = ExecOverheads::default();
        let shape = BatchShape {
            l_pad: 32,
            depth: 2,
            kind: KernelKind::Graph,
        };
        assert!(matches!(
            batch_service_time(&shape, &[(10, 0)], &p, &o),
            Err(CostModelError::ShapeMismatch(_))
        ));
        assert!(matches!(
            batch_service_time(&shape, &[(10, 0), (33, 0)], &p, &o),
            Err(CostModelError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert_eq!(fit_params(&[]), Err(CostModelError::EmptyInput));
        let p = example_params();
        let flat: Vec<LatencySample> = (0..10)
            .map(|i| {
                let lat = compute_latency(64.0, (i * 100) as f64, &p);
                LatencySample {
                    new_tokens: 64,
                    history_tokens: i * 100,
                    t_comp: lat.compute,
                    t_mem: lat.memory,
                }
            })
            .collect();
        assert!(matches!(fit_params(&flat), Err(CostModelError::DegenerateSamples(_))));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(CostParams::new(0.0, 0.1, 0.1, 0.1).is_err());
        assert!(CostParams::new(1e-5, -0.1, 0.1, 0.1).is_err());
        assert!(CostParams::new(1e-5, 0.1, f64::NAN, 0.1).is_err());
        let bad = ExecOverheads {
            kappa_graph: 1.0,
            kappa_std: 0.5,
            eta: 0.7,
        };
        assert!(bad.validate().is_err());
        let bad = ExecOverheads {
            kappa_graph: 0.0,
            kappa_std: 0.5,
            eta: 0.0,
        };
        assert!(bad.validate().is_err());
    }

    fn params() -> impl proptest::strategy::Strategy<Value = CostParams> {
        use proptest::prelude::*;
        (-7.0f64..-4.0, 0.001f64..0.05, 16.0f64..1024.0, 32.0f64..2048.0).prop_map(|(la, b, kw, kr)| {
            let a = 10f64.powf(la);
            CostParams::new(a, b, b + a * kw, a * kr).unwrap()
        })
    }

    proptest::proptest! {
        #[test]
        fn latency_grows_with_tokens(p in params(), l in 1u32..8192, h in 0u32..32_768, dl in 1u32..512, dh in 1u32..512) {
            let base = compute_latency(l as f64, h as f64, &p);
            let more_l = compute_latency((l + dl) as f64, h as f64, &p);
            let more_h = compute_latency(l as f64, (h + dh) as f64, &p);
            proptest::prop_assert!(more_l.compute > base.compute && more_l.memory > base.memory);
            proptest::prop_assert!(more_h.compute > base.compute && more_h.memory > base.memory);
        }

        #[test]
        fn boundary_balances_compute_and_memory(p in params(), h in 0u32..1_000_000) {
            let l = reprefill_boundary(&p, h as f64);
            let at = compute_latency(l, h as f64, &p);
            assert_relative_eq!(at.compute, at.memory, max_relative = 1e-9);
        }

        #[test]
        fn fit_inverts_the_model(p in params(), seed in 0u64..1000) {
            let samples: Vec<LatencySample> = (0..24u32)
                .map(|i| {
                    let l = 1 + (seed as u32 * 7 + i * 331) % 4096;
                    let h = (seed as u32 * 13 + i * 977) % 20_000;
                    let lat = compute_latency(l as f64, h as f64, &p);
                    LatencySample { new_tokens: l, history_tokens: h, t_comp: lat.compute, t_mem: lat.memory }
                })
                .collect();
            let f = fit_params(&samples).unwrap();
            assert_relative_eq!(f.alpha, p.alpha, max_relative = 1e-6);
            assert_relative_eq!(f.beta, p.beta, max_relative = 1e-6);
            assert_relative_eq!(f.gamma_w, p.gamma_w, max_relative = 1e-6);
            assert_relative_eq!(f.gamma_r, p.gamma_r, max_relative = 1e-6);
        }
    }
}
