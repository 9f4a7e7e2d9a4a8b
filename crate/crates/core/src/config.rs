//! Flat `section.key = value` scenario files.
//!
//! Lines starting with `#` and blank lines are skipped. Later keys override
//! earlier ones. [`Scenario::to_text`] writes every key, so a dump parses
//! back to the same scenario.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::cost_model::RooflineParams;
use crate::engine::{Disagg, Policy, SimConfig, SimError};
use crate::scheduler::grid::MB;
use crate::scheduler::{ModelPreset, SchedMode};
use crate::workload::{synth_stream, ArrivalSpec, LengthDist, Request, SynthConfig, WorkloadError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

/// Everything one run needs: engine settings plus the synthetic workload
/// used when no trace is supplied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scenario {
    pub sim: SimConfig,
    pub workload: SynthConfig,
    pub roofline: RooflineParams,
}

/// Keys accepted besides the dotted config keys, for sweeps.
pub const ALIASES: &[(&str, &str)] = &[
    ("short_concurrency", "workload.short_clients"),
    ("long_concurrency", "workload.long_clients"),
    ("w_max", "sched.w_max_ms"),
    ("instances", "sim.instances"),
    ("seed", "sim.seed"),
];

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Applies `text` on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut s = Self::default();
        s.apply(text)?;
        Ok(s)
    }

    pub fn apply(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Sets one key; sweep aliases are accepted too.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = ALIASES.iter().find(|(a, _)| *a == key).map_or(key, |(_, k)| k);
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        let f = || value.parse::<f64>().map_err(|_| bad());
        let u = || value.parse::<u32>().map_err(|_| bad());
        let u64_ = || value.parse::<u64>().map_err(|_| bad());
        let b = || value.parse::<bool>().map_err(|_| bad());
        let opt_f = || -> Result<Option<f64>, ConfigError> {
            if value == "none" {
                Ok(None)
            } else {
                f().map(Some)
            }
        };
        let sim = &mut self.sim;
        let wl = &mut self.workload;
        match key {
            "sim.instances" => sim.n_instances = u()?,
            "sim.policy" => sim.policy = Policy::parse(value).ok_or_else(bad)?,
            "sim.disagg" => sim.disagg = Disagg::parse(value).ok_or_else(bad)?,
            "sim.controller" => sim.controller = b()?,
            "sim.initial_short" => sim.initial_short = if value == "none" { None } else { Some(u()?) },
            "sim.seed" => sim.seed = u64_()?,
            "sim.duration_ms" => sim.duration_ms = f()?,
            "sim.slo_ms" => sim.slo_ms = f()?,
            "sim.short_boundary" => sim.short_boundary = opt_f()?,
            "sim.reprefill_short_boundary" => sim.reprefill_short_boundary = opt_f()?,
            "sim.per_history_boundary" => sim.per_history_boundary = b()?,

            "cost.alpha" => sim.cost.alpha = f()?,
            "cost.beta" => sim.cost.beta = f()?,
            "cost.gamma_w" => sim.cost.gamma_w = f()?,
            "cost.gamma_r" => sim.cost.gamma_r = f()?,
            "overheads.kappa_graph_ms" => sim.overheads.kappa_graph = f()?,
            "overheads.kappa_std_ms" => sim.overheads.kappa_std = f()?,
            "overheads.eta" => sim.overheads.eta = f()?,
            "roofline.p_peak" => self.roofline.p_peak = f()?,
            "roofline.b_mem" => self.roofline.b_mem = f()?,
            "roofline.bytes_per_token" => self.roofline.bytes_per_token = f()?,
            "roofline.ops_per_token" => self.roofline.ops_per_token = f()?,

            "grid.preset" => {
                let p = ModelPreset::parse(value).ok_or_else(bad)?;
                sim.grid.mem_per_graph = p.mem_per_graph();
            }
            "grid.lengths" => sim.grid.lengths = parse_list(value).ok_or_else(bad)?,
            "grid.depths" => sim.grid.depths = parse_list(value).ok_or_else(bad)?,
            "grid.mem_per_graph_mb" => sim.grid.mem_per_graph = u64_()? * MB,
            "grid.mem_budget_mb" => sim.grid.mem_budget = u64_()? * MB,

            "sched.w_min_ms" => sim.sched.w_min = f()?,
            "sched.w_max_ms" => sim.sched.w_max = f()?,
            "sched.sigma_ms" => sim.sched.sigma = f()?,
            "sched.delta_ms" => sim.sched.delta = f()?,
            "sched.t_max_ms" => sim.sched.t_max = f()?,
            "sched.epsilon_per_ms" => sim.sched.epsilon = f()?,
            "sched.m_s" => sim.sched.m_s = u()?,
            "sched.c_l" => sim.sched.c_l = u()?,
            "sched.mode" => sim.sched.mode = SchedMode::parse(value).ok_or_else(bad)?,
            "sched.depth_regrow" => sim.sched.depth_regrow = b()?,

            "ctrl.dt_ms" => sim.ctrl.dt = f()?,
            "ctrl.t_cool_ms" => sim.ctrl.t_cool = f()?,
            "ctrl.tau_hyst" => sim.ctrl.tau_hyst = f()?,
            "ctrl.n_min" => sim.ctrl.n_min = u()?,
            "ctrl.w_q" => sim.ctrl.w_q = f()?,
            "ctrl.w_e" => sim.ctrl.w_e = f()?,
            "ctrl.w_u" => sim.ctrl.w_u = f()?,
            "ctrl.percentile" => sim.ctrl.percentile = f()?,
            "ctrl.min_gap" => sim.ctrl.min_gap = f()?,

            "fcfs.max_batch_tokens" => sim.fcfs.max_batch_tokens = u64_()?,
            "fcfs.max_batch_requests" => sim.fcfs.max_batch_requests = u()?,

            "workload.arrivals" => {
                let rate = arrival_rate(&wl.arrivals);
                wl.arrivals = match value {
                    "poisson" => ArrivalSpec::Poisson { rate_per_ms: rate },
                    "clients" => match wl.arrivals {
                        ArrivalSpec::Clients { .. } => wl.arrivals.clone(),
                        ArrivalSpec::Poisson { .. } => ArrivalSpec::Clients {
                            short: 1,
                            long: 1,
                            rate_per_ms: rate,
                        },
                    },
                    _ => return Err(bad()),
                }
            }
            "workload.rate_per_ms" => match &mut wl.arrivals {
                ArrivalSpec::Poisson { rate_per_ms } | ArrivalSpec::Clients { rate_per_ms, .. } => *rate_per_ms = f()?,
            },
            "workload.short_clients" | "workload.long_clients" => {
                let n = u()?;
                if let ArrivalSpec::Poisson { rate_per_ms } = wl.arrivals {
                    wl.arrivals = ArrivalSpec::Clients {
                        short: 0,
                        long: 0,
                        rate_per_ms,
                    };
                }
                if let ArrivalSpec::Clients { short, long, .. } = &mut wl.arrivals {
                    *(if key.ends_with("short_clients") { short } else { long }) = n;
                }
            }
            "workload.first_short_fraction" => wl.first_turn.short_fraction = f()?,
            "workload.first_short" => wl.first_turn.short = parse_dist(value).ok_or_else(bad)?,
            "workload.first_long" => wl.first_turn.long = parse_dist(value).ok_or_else(bad)?,
            "workload.later_short_fraction" => wl.later_turns.short_fraction = f()?,
            "workload.later_short" => wl.later_turns.short = parse_dist(value).ok_or_else(bad)?,
            "workload.later_long" => wl.later_turns.long = parse_dist(value).ok_or_else(bad)?,
            "workload.turns" => wl.turns_per_session = parse_dist(value).ok_or_else(bad)?,
            "workload.gen_tokens" => {
                wl.gen_tokens = if value == "none" {
                    None
                } else {
                    Some(parse_dist(value).ok_or_else(bad)?)
                }
            }
            "workload.slo_offset_ms" => wl.slo_offset_ms = opt_f()?,
            "workload.max_context" => wl.max_context = u()?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn to_text(&self) -> String {
        let s = &self.sim;
        let w = &self.workload;
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
        let mut kv: Vec<(&str, String)> = vec![
            ("sim.instances", s.n_instances.to_string()),
            ("sim.policy", s.policy.as_str().into()),
            ("sim.disagg", s.disagg.as_str().into()),
            ("sim.controller", s.controller.to_string()),
            (
                "sim.initial_short",
                s.initial_short.map_or("none".into(), |n| n.to_string()),
            ),
            ("sim.seed", s.seed.to_string()),
            ("sim.duration_ms", s.duration_ms.to_string()),
            ("sim.slo_ms", s.slo_ms.to_string()),
            ("sim.short_boundary", opt(s.short_boundary)),
            ("sim.reprefill_short_boundary", opt(s.reprefill_short_boundary)),
            ("sim.per_history_boundary", s.per_history_boundary.to_string()),
            ("cost.alpha", s.cost.alpha.to_string()),
            ("cost.beta", s.cost.beta.to_string()),
            ("cost.gamma_w", s.cost.gamma_w.to_string()),
            ("cost.gamma_r", s.cost.gamma_r.to_string()),
            ("overheads.kappa_graph_ms", s.overheads.kappa_graph.to_string()),
            ("overheads.kappa_std_ms", s.overheads.kappa_std.to_string()),
            ("overheads.eta", s.overheads.eta.to_string()),
            ("roofline.p_peak", self.roofline.p_peak.to_string()),
            ("roofline.b_mem", self.roofline.b_mem.to_string()),
            ("roofline.bytes_per_token", self.roofline.bytes_per_token.to_string()),
            ("roofline.ops_per_token", self.roofline.ops_per_token.to_string()),
            ("grid.lengths", join(&s.grid.lengths)),
            ("grid.depths", join(&s.grid.depths)),
        ];
        if s.grid.mem_per_graph.is_multiple_of(MB) && s.grid.mem_budget.is_multiple_of(MB) {
            kv.push(("grid.mem_per_graph_mb", (s.grid.mem_per_graph / MB).to_string()));
            kv.push(("grid.mem_budget_mb", (s.grid.mem_budget / MB).to_string()));
        }
        kv.extend([
            ("sched.w_min_ms", s.sched.w_min.to_string()),
            ("sched.w_max_ms", s.sched.w_max.to_string()),
            ("sched.sigma_ms", s.sched.sigma.to_string()),
            ("sched.delta_ms", s.sched.delta.to_string()),
            ("sched.t_max_ms", s.sched.t_max.to_string()),
            ("sched.epsilon_per_ms", s.sched.epsilon.to_string()),
            ("sched.m_s", s.sched.m_s.to_string()),
            ("sched.c_l", s.sched.c_l.to_string()),
            ("sched.mode", s.sched.mode.as_str().into()),
            ("sched.depth_regrow", s.sched.depth_regrow.to_string()),
            ("ctrl.dt_ms", s.ctrl.dt.to_string()),
            ("ctrl.t_cool_ms", s.ctrl.t_cool.to_string()),
            ("ctrl.tau_hyst", s.ctrl.tau_hyst.to_string()),
            ("ctrl.n_min", s.ctrl.n_min.to_string()),
            ("ctrl.w_q", s.ctrl.w_q.to_string()),
            ("ctrl.w_e", s.ctrl.w_e.to_string()),
            ("ctrl.w_u", s.ctrl.w_u.to_string()),
            ("ctrl.percentile", s.ctrl.percentile.to_string()),
            ("ctrl.min_gap", s.ctrl.min_gap.to_string()),
            ("fcfs.max_batch_tokens", s.fcfs.max_batch_tokens.to_string()),
            ("fcfs.max_batch_requests", s.fcfs.max_batch_requests.to_string()),
        ]);
        match &w.arrivals {
            ArrivalSpec::Poisson { rate_per_ms } => {
                kv.push(("workload.arrivals", "poisson".into()));
                kv.push(("workload.rate_per_ms", rate_per_ms.to_string()));
            }
            ArrivalSpec::Clients {
                short,
                long,
                rate_per_ms,
            } => {
                kv.push(("workload.arrivals", "clients".into()));
                kv.push(("workload.rate_per_ms", rate_per_ms.to_string()));
                kv.push(("workload.short_clients", short.to_string()));
                kv.push(("workload.long_clients", long.to_string()));
            }
        }
        kv.extend([
            ("workload.first_short_fraction", w.first_turn.short_fraction.to_string()),
            ("workload.first_short", dist_text(&w.first_turn.short)),
            ("workload.first_long", dist_text(&w.first_turn.long)),
            (
                "workload.later_short_fraction",
                w.later_turns.short_fraction.to_string(),
            ),
            ("workload.later_short", dist_text(&w.later_turns.short)),
            ("workload.later_long", dist_text(&w.later_turns.long)),
            ("workload.turns", dist_text(&w.turns_per_session)),
            (
                "workload.gen_tokens",
                w.gen_tokens.as_ref().map_or("none".into(), dist_text),
            ),
            ("workload.slo_offset_ms", opt(w.slo_offset_ms)),
            ("workload.max_context", w.max_context.to_string()),
        ]);
        let mut out = String::new();
        for (k, v) in kv {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sim.validate()?;
        self.workload.validate()?;
        self.roofline.validate().map_err(SimError::from)?;
        Ok(())
    }

    /// The synthetic stream for this scenario, seeded by `sim.seed` over
    /// `sim.duration_ms`.
    pub fn requests(&self) -> Result<Vec<Request>, ConfigError> {
        let cfg = SynthConfig {
            seed: self.sim.seed,
            ..self.workload.clone()
        };
        Ok(synth_stream(&cfg, self.sim.duration_ms)?)
    }
}

fn arrival_rate(a: &ArrivalSpec) -> f64 {
    match a {
        ArrivalSpec::Poisson { rate_per_ms } | ArrivalSpec::Clients { rate_per_ms, .. } => *rate_per_ms,
    }
}

fn parse_list(v: &str) -> Option<Vec<u32>> {
    v.split(',').map(|x| x.trim().parse().ok()).collect()
}

fn join(v: &[u32]) -> String {
    v.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
}

/// `fixed:N`, `uniform:A:B`, `loguniform:A:B` or `weighted:V@W,V@W,...`.
pub fn parse_dist(v: &str) -> Option<LengthDist> {
    let (kind, rest) = v.split_once(':')?;
    let pair = || {
        let (a, b) = rest.split_once(':')?;
        Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
    };
    match kind.trim() {
        "fixed" => rest.trim().parse().ok().map(LengthDist::Fixed),
        "uniform" => pair().map(|(min, max)| LengthDist::Uniform { min, max }),
        "loguniform" => pair().map(|(min, max)| LengthDist::LogUniform { min, max }),
        "weighted" => rest
            .split(',')
            .map(|item| {
                let (val, w) = item.split_once('@')?;
                Some((val.trim().parse().ok()?, w.trim().parse().ok()?))
            })
            .collect::<Option<Vec<_>>>()
            .map(LengthDist::Weighted),
        _ => None,
    }
}

pub fn dist_text(d: &LengthDist) -> String {
    match d {
        LengthDist::Fixed(v) => format!("fixed:{v}"),
        LengthDist::Uniform { min, max } => format!("uniform:{min}:{max}"),
        LengthDist::LogUniform { min, max } => format!("loguniform:{min}:{max}"),
        LengthDist::Weighted(items) => {
            let parts: Vec<String> = items.iter().map(|(v, w)| format!("{v}@{w}")).collect();
            format!("weighted:{}", parts.join(","))
        }
    }
}
