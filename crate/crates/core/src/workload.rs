//! Request streams: multi-turn trace ingestion and seeded synthetic generation.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("invalid workload config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestClass {
    Short,
    Long,
}

impl RequestClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            RequestClass::Short => "short",
            RequestClass::Long => "long",
        }
    }
}

impl fmt::Display for RequestClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One prefill (turn 1) or re-prefill (later turns) job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub session_id: u64,
    pub turn: u32,
    pub new_tokens: u32,
    pub history_tokens: u32,
    pub arrival_ms: f64,
    pub deadline_ms: Option<f64>,
}

impl Request {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |msg: String| Err(WorkloadError::InvariantViolation(format!("request {}: {msg}", self.id)));
        if self.new_tokens < 1 {
            return bad("new_tokens must be >= 1".into());
        }
        if self.turn < 1 {
            return bad("turn must be >= 1".into());
        }
        if self.turn == 1 && self.history_tokens != 0 {
            return bad(format!("turn 1 carries {} history tokens", self.history_tokens));
        }
        if !self.arrival_ms.is_finite() || self.arrival_ms < 0.0 {
            return bad(format!("bad arrival time {}", self.arrival_ms));
        }
        if let Some(d) = self.deadline_ms {
            if !(d > self.arrival_ms) {
                return bad(format!("deadline {d} not after arrival {}", self.arrival_ms));
            }
        }
        Ok(())
    }
}

/// Checks per-request invariants, arrival ordering, and per-session turn and
/// arrival monotonicity.
pub fn validate_stream(requests: &[Request]) -> Result<(), WorkloadError> {
    use std::collections::BTreeMap;
    let mut last: BTreeMap<u64, (u32, f64)> = BTreeMap::new();
    let mut prev_arrival = f64::NEG_INFINITY;
    for r in requests {
        r.validate()?;
        if r.arrival_ms < prev_arrival {
            return Err(WorkloadError::InvariantViolation(format!(
                "request {} arrives before its predecessor",
                r.id
            )));
        }
        prev_arrival = r.arrival_ms;
        if let Some(&(turn, at)) = last.get(&r.session_id) {
            if r.turn <= turn || r.arrival_ms < at {
                return Err(WorkloadError::InvariantViolation(format!(
                    "session {} turn {} does not follow turn {turn}",
                    r.session_id, r.turn
                )));
            }
        }
        last.insert(r.session_id, (r.turn, r.arrival_ms));
    }
    Ok(())
}

/// Short iff `L <= boundary`, using the first-turn boundary for turn 1 and
/// the re-prefill boundary otherwise.
pub fn classify(r: &Request, l_m_first: f64, l_m_re: f64) -> RequestClass {
    let boundary = if r.turn <= 1 { l_m_first } else { l_m_re };
    if r.new_tokens as f64 <= boundary {
        RequestClass::Short
    } else {
        RequestClass::Long
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct TraceRecord {
    session_id: u64,
    turn: u32,
    arrival_ms: f64,
    new_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gen_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    history_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    deadline_ms: Option<f64>,
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<Request>, WorkloadError> {
    let file = File::open(path)?;
    parse_trace(BufReader::new(file))
}

/// Parses line-delimited JSON trace records. Blank lines are skipped and
/// unknown fields ignored.
pub fn parse_trace(reader: impl BufRead) -> Result<Vec<Request>, WorkloadError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| WorkloadError::ParseError {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        if !rec.arrival_ms.is_finite() || rec.arrival_ms < 0.0 {
            return Err(WorkloadError::ParseError {
                line: idx + 1,
                msg: format!("arrival_ms must be a non-negative number, got {}", rec.arrival_ms),
            });
        }
        records.push((idx + 1, rec));
    }

    // Reconstruct histories session by session in turn order.
    use std::collections::BTreeMap;
    let mut by_session: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, (_, rec)) in records.iter().enumerate() {
        by_session.entry(rec.session_id).or_default().push(i);
    }
    let mut history = vec![0u32; records.len()];
    for idxs in by_session.values_mut() {
        idxs.sort_by_key(|&i| records[i].1.turn);
        let mut acc: u64 = 0;
        let mut prev: Option<(u32, f64)> = None;
        for &i in idxs.iter() {
            let (line, rec) = &records[i];
            if let Some((turn, at)) = prev {
                if rec.turn == turn {
                    return Err(WorkloadError::InvariantViolation(format!(
                        "line {line}: session {} repeats turn {}",
                        rec.session_id, rec.turn
                    )));
                }
                if rec.arrival_ms < at {
                    return Err(WorkloadError::InvariantViolation(format!(
                        "line {line}: session {} turn {} arrives before turn {turn}",
                        rec.session_id, rec.turn
                    )));
                }
            }
            history[i] = match rec.history_tokens {
                Some(h) => h,
                None if rec.turn <= 1 => 0,
                None => u32::try_from(acc)
                    .map_err(|_| WorkloadError::InvariantViolation(format!("line {line}: history overflows")))?,
            };
            acc = history[i] as u64 + rec.new_tokens as u64 + rec.gen_tokens.unwrap_or(0) as u64;
            prev = Some((rec.turn, rec.arrival_ms));
        }
    }

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[a]
            .1
            .arrival_ms
            .total_cmp(&records[b].1.arrival_ms)
            .then(a.cmp(&b))
    });
    let mut out = Vec::with_capacity(records.len());
    for (id, &i) in order.iter().enumerate() {
        let (line, rec) = &records[i];
        let r = Request {
            id: id as u64,
            session_id: rec.session_id,
            turn: rec.turn,
            new_tokens: rec.new_tokens,
            history_tokens: history[i],
            arrival_ms: rec.arrival_ms,
            deadline_ms: rec.deadline_ms,
        };
        r.validate().map_err(|e| match e {
            WorkloadError::InvariantViolation(msg) => WorkloadError::InvariantViolation(format!("line {line}: {msg}")),
            other => other,
        })?;
        out.push(r);
    }
    Ok(out)
}

pub fn save_trace(path: impl AsRef<Path>, requests: &[Request]) -> Result<(), WorkloadError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_trace(&mut w, requests)?;
    w.flush()?;
    Ok(())
}

/// Writes one record per request with explicit history so that reloading
/// reproduces the list exactly.
pub fn write_trace(mut w: impl Write, requests: &[Request]) -> Result<(), WorkloadError> {
    for r in requests {
        let rec = TraceRecord {
            session_id: r.session_id,
            turn: r.turn,
            arrival_ms: r.arrival_ms,
            new_tokens: r.new_tokens,
            gen_tokens: None,
            history_tokens: Some(r.history_tokens),
            deadline_ms: r.deadline_ms,
        };
        let mut line = serde_json::to_string(&rec).map_err(std::io::Error::other)?;
        // Keep whole-millisecond times integral on disk.
        line = integralize(&line, "arrival_ms", r.arrival_ms);
        if let Some(d) = r.deadline_ms {
            line = integralize(&line, "deadline_ms", d);
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

fn integralize(line: &str, key: &str, value: f64) -> String {
    if value.fract() == 0.0 && value.abs() < 9.0e15 {
        let from = format!("\"{key}\":{}", serde_json::to_string(&value).unwrap_or_default());
        let to = format!("\"{key}\":{}", value as i64);
        line.replacen(&from, &to, 1)
    } else {
        line.to_string()
    }
}

/// Bounded discrete distribution over non-negative integers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LengthDist {
    Fixed(u32),
    /// Inclusive bounds.
    Uniform {
        min: u32,
        max: u32,
    },
    /// Log-uniform over the inclusive range, rounded down.
    LogUniform {
        min: u32,
        max: u32,
    },
    Weighted(Vec<(u32, f64)>),
}

impl LengthDist {
    pub fn support(&self) -> Option<(u32, u32)> {
        match self {
            LengthDist::Fixed(v) => Some((*v, *v)),
            LengthDist::Uniform { min, max } | LengthDist::LogUniform { min, max } => {
                (min <= max).then_some((*min, *max))
            }
            LengthDist::Weighted(points) => {
                let live: Vec<u32> = points.iter().filter(|(_, w)| *w > 0.0).map(|(v, _)| *v).collect();
                Some((*live.iter().min()?, *live.iter().max()?))
            }
        }
    }

    pub fn validate(&self, lo: u32, hi: u32) -> Result<(), WorkloadError> {
        if let LengthDist::Weighted(points) = self {
            if points.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
                return Err(WorkloadError::InvalidConfig(format!("bad weights in {self}")));
            }
        }
        if let LengthDist::LogUniform { min, .. } = self {
            if *min == 0 {
                return Err(WorkloadError::InvalidConfig("loguniform needs min >= 1".into()));
            }
        }
        match self.support() {
            None => Err(WorkloadError::InvalidConfig(format!("empty distribution {self}"))),
            Some((a, b)) if a < lo || b > hi => {
                Err(WorkloadError::InvalidConfig(format!("{self} leaves [{lo}, {hi}]")))
            }
            Some(_) => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            LengthDist::Fixed(v) => *v as f64,
            LengthDist::Uniform { min, max } => (*min as f64 + *max as f64) / 2.0,
            LengthDist::LogUniform { min, max } => {
                let (a, b) = (*min as f64, *max as f64 + 1.0);
                if a == b - 1.0 {
                    a
                } else {
                    (b - a) / (b / a).ln() - 0.5
                }
            }
            LengthDist::Weighted(points) => {
                let total: f64 = points.iter().map(|(_, w)| w).sum();
                points.iter().map(|(v, w)| *v as f64 * w).sum::<f64>() / total
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            LengthDist::Fixed(v) => *v,
            LengthDist::Uniform { min, max } => rng.random_range(*min..=*max),
            LengthDist::LogUniform { min, max } => {
                let (a, b) = ((*min as f64).ln(), (*max as f64 + 1.0).ln());
                let x = (a + rng.random::<f64>() * (b - a)).exp().floor() as u32;
                x.clamp(*min, *max)
            }
            LengthDist::Weighted(points) => {
                let total: f64 = points.iter().map(|(_, w)| w).sum();
                let mut u = rng.random::<f64>() * total;
                for (v, w) in points {
                    if u < *w {
                        return *v;
                    }
                    u -= w;
                }
                points
                    .iter()
                    .rev()
                    .find(|(_, w)| *w > 0.0)
                    .map(|(v, _)| *v)
                    .unwrap_or(0)
            }
        }
    }
}

impl fmt::Display for LengthDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LengthDist::Fixed(v) => write!(f, "fixed:{v}"),
            LengthDist::Uniform { min, max } => write!(f, "uniform:{min}..{max}"),
            LengthDist::LogUniform { min, max } => write!(f, "loguniform:{min}..{max}"),
            LengthDist::Weighted(points) => {
                write!(f, "weighted:")?;
                for (i, (v, w)) in points.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{v}={w}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for LengthDist {
    type Err = WorkloadError;

    /// `fixed:N`, `uniform:A..B`, `loguniform:A..B`, `weighted:V=W,V=W,...`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || WorkloadError::InvalidConfig(format!("cannot parse distribution '{s}'"));
        let (kind, rest) = s.trim().split_once(':').ok_or_else(bad)?;
        let range = |rest: &str| -> Result<(u32, u32), WorkloadError> {
            let (a, b) = rest.split_once("..").ok_or_else(bad)?;
            Ok((
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            ))
        };
        match kind.trim() {
            "fixed" => Ok(LengthDist::Fixed(rest.trim().parse().map_err(|_| bad())?)),
            "uniform" => {
                let (min, max) = range(rest)?;
                Ok(LengthDist::Uniform { min, max })
            }
            "loguniform" => {
                let (min, max) = range(rest)?;
                Ok(LengthDist::LogUniform { min, max })
            }
            "weighted" => rest
                .split(',')
                .map(|kv| {
                    let (v, w) = kv.split_once('=').ok_or_else(bad)?;
                    Ok((
                        v.trim().parse().map_err(|_| bad())?,
                        w.trim().parse().map_err(|_| bad())?,
                    ))
                })
                .collect::<Result<Vec<_>, _>>()
                .map(LengthDist::Weighted),
            _ => Err(bad()),
        }
    }
}

/// Length distribution for one turn position: a short/long mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthMix {
    pub short_fraction: f64,
    pub short: LengthDist,
    pub long: LengthDist,
}

impl LengthMix {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        if rng.random::<f64>() < self.short_fraction {
            self.short.sample(rng)
        } else {
            self.long.sample(rng)
        }
    }

    pub fn mean(&self) -> f64 {
        self.short_fraction * self.short.mean() + (1.0 - self.short_fraction) * self.long.mean()
    }
}

/// How arrivals are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ArrivalSpec {
    /// A single Poisson stream; each arrival continues an open session or
    /// starts a new one, and draws its length from the turn's mixture.
    Poisson { rate_per_ms: f64 },
    /// Independent open-loop Poisson clients. Short clients only draw short
    /// lengths and long clients only long ones; each client runs its
    /// sessions back to back.
    Clients { short: u32, long: u32, rate_per_ms: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub arrivals: ArrivalSpec,
    pub first_turn: LengthMix,
    pub later_turns: LengthMix,
    pub turns_per_session: LengthDist,
    /// Generated tokens per turn, folded into the next turn's history.
    pub gen_tokens: Option<LengthDist>,
    pub slo_offset_ms: Option<f64>,
    pub max_context: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            arrivals: ArrivalSpec::Poisson { rate_per_ms: 0.05 },
            first_turn: LengthMix {
                short_fraction: 0.63,
                short: LengthDist::Uniform { min: 16, max: 255 },
                long: LengthDist::LogUniform { min: 257, max: 4096 },
            },
            later_turns: LengthMix {
                short_fraction: 0.81,
                short: LengthDist::Uniform { min: 8, max: 255 },
                long: LengthDist::LogUniform { min: 257, max: 4096 },
            },
            turns_per_session: LengthDist::Uniform { min: 1, max: 4 },
            gen_tokens: None,
            slo_offset_ms: Some(400.0),
            max_context: 32_768,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let positive = |r: f64| r.is_finite() && r > 0.0;
        match &self.arrivals {
            ArrivalSpec::Poisson { rate_per_ms } if !positive(*rate_per_ms) => {
                return Err(WorkloadError::InvalidConfig("arrival rate must be > 0".into()))
            }
            ArrivalSpec::Clients { rate_per_ms, .. } if !positive(*rate_per_ms) => {
                return Err(WorkloadError::InvalidConfig("client rate must be > 0".into()))
            }
            _ => {}
        }
        for mix in [&self.first_turn, &self.later_turns] {
            if !(0.0..=1.0).contains(&mix.short_fraction) {
                return Err(WorkloadError::InvalidConfig("short_fraction outside [0, 1]".into()));
            }
            mix.short.validate(1, self.max_context)?;
            mix.long.validate(1, self.max_context)?;
        }
        self.turns_per_session.validate(1, u32::MAX)?;
        if let Some(g) = &self.gen_tokens {
            g.validate(0, self.max_context)?;
        }
        if let Some(off) = self.slo_offset_ms {
            if !positive(off) {
                return Err(WorkloadError::InvalidConfig("slo offset must be > 0".into()));
            }
        }
        Ok(())
    }
}

struct Session {
    id: u64,
    next_turn: u32,
    turns: u32,
    history: u64,
    last_arrival: f64,
}

struct Draft {
    session_id: u64,
    turn: u32,
    new_tokens: u32,
    history_tokens: u32,
    arrival_ms: f64,
}

/// Generates a request stream over `[0, duration_ms)`; fully determined by
/// `cfg.seed`.
pub fn synth_stream(cfg: &SynthConfig, duration_ms: f64) -> Result<Vec<Request>, WorkloadError> {
    cfg.validate()?;
    if !(duration_ms > 0.0) {
        return Err(WorkloadError::InvalidConfig("duration must be > 0".into()));
    }
    let mut drafts = match &cfg.arrivals {
        ArrivalSpec::Poisson { rate_per_ms } => poisson_stream(cfg, *rate_per_ms, duration_ms),
        ArrivalSpec::Clients {
            short,
            long,
            rate_per_ms,
        } => {
            let mut all = Vec::new();
            for (class, count) in [(RequestClass::Short, *short), (RequestClass::Long, *long)] {
                for idx in 0..count {
                    let stream = match class {
                        RequestClass::Short => 1 + idx as u64,
                        RequestClass::Long => (1 << 32) + idx as u64,
                    };
                    all.extend(client_stream(cfg, class, stream, *rate_per_ms, duration_ms));
                }
            }
            all
        }
    };
    drafts.sort_by(|a, b| {
        a.arrival_ms
            .total_cmp(&b.arrival_ms)
            .then(a.session_id.cmp(&b.session_id))
            .then(a.turn.cmp(&b.turn))
    });
    Ok(drafts
        .into_iter()
        .enumerate()
        .map(|(id, d)| Request {
            id: id as u64,
            session_id: d.session_id,
            turn: d.turn,
            new_tokens: d.new_tokens,
            history_tokens: d.history_tokens,
            arrival_ms: d.arrival_ms,
            deadline_ms: cfg.slo_offset_ms.map(|o| d.arrival_ms + o),
        })
        .collect())
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn poisson_stream(cfg: &SynthConfig, rate: f64, duration_ms: f64) -> Vec<Draft> {
    let mut rng = rng_for(cfg.seed, 0);
    let exp = Exp::new(rate).expect("validated rate");
    let p_new = 1.0 / cfg.turns_per_session.mean().max(1.0);
    let mut open: Vec<Session> = Vec::new();
    let mut next_session = 0u64;
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += rng.sample(exp);
        if t >= duration_ms {
            break;
        }
        let continue_existing = !open.is_empty() && rng.random::<f64>() >= p_new;
        let mut slot = if continue_existing {
            rng.random_range(0..open.len())
        } else {
            open.push(new_session(cfg, &mut rng, &mut next_session));
            open.len() - 1
        };
        let first = open[slot].next_turn == 1;
        let mix = if first { &cfg.first_turn } else { &cfg.later_turns };
        let mut len = mix.sample(&mut rng);
        if !first && open[slot].history + len as u64 > cfg.max_context as u64 {
            // Context exhausted: this arrival opens a fresh session instead.
            open.swap_remove(slot);
            open.push(new_session(cfg, &mut rng, &mut next_session));
            slot = open.len() - 1;
            len = cfg.first_turn.sample(&mut rng);
        }
        emit_turn(cfg, &mut rng, &mut open, slot, len, t, &mut out);
    }
    out
}

fn client_stream(cfg: &SynthConfig, class: RequestClass, stream: u64, rate: f64, duration_ms: f64) -> Vec<Draft> {
    let mut rng = rng_for(cfg.seed, stream);
    let exp = Exp::new(rate).expect("validated rate");
    let pick = |mix: &LengthMix, rng: &mut ChaCha8Rng| match class {
        RequestClass::Short => mix.short.sample(rng),
        RequestClass::Long => mix.long.sample(rng),
    };
    // Session ids are namespaced by stream so clients never collide.
    let base = stream << 24;
    let mut local = 0u64;
    let mut open: Vec<Session> = Vec::new();
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += rng.sample(exp);
        if t >= duration_ms {
            break;
        }
        if open.is_empty() {
            let mut s = new_session(cfg, &mut rng, &mut local);
            s.id += base;
            open.push(s);
        }
        let mix = if open[0].next_turn == 1 {
            &cfg.first_turn
        } else {
            &cfg.later_turns
        };
        let mut len = pick(mix, &mut rng);
        if open[0].next_turn > 1 && open[0].history + len as u64 > cfg.max_context as u64 {
            open.clear();
            let mut s = new_session(cfg, &mut rng, &mut local);
            s.id += base;
            open.push(s);
            len = pick(&cfg.first_turn, &mut rng);
        }
        emit_turn(cfg, &mut rng, &mut open, 0, len, t, &mut out);
    }
    out
}

fn new_session(cfg: &SynthConfig, rng: &mut ChaCha8Rng, next: &mut u64) -> Session {
    let id = *next;
    *next += 1;
    Session {
        id,
        next_turn: 1,
        turns: cfg.turns_per_session.sample(rng).max(1),
        history: 0,
        last_arrival: 0.0,
    }
}

fn emit_turn(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    open: &mut Vec<Session>,
    slot: usize,
    len: u32,
    t: f64,
    out: &mut Vec<Draft>,
) {
    let s = &mut open[slot];
    let gen = cfg.gen_tokens.as_ref().map(|g| g.sample(rng)).unwrap_or(0);
    out.push(Draft {
        session_id: s.id,
        turn: s.next_turn,
        new_tokens: len,
        history_tokens: s.history as u32,
        arrival_ms: t.max(s.last_arrival),
    });
    s.history += len as u64 + gen as u64;
    s.last_arrival = t;
    s.next_turn += 1;
    if s.next_turn > s.turns {
        open.swap_remove(slot);
    }
}

/// Concatenates phases end to end: phase `k` is shifted by the sum of the
/// preceding durations. Ids are renumbered and session ids made disjoint.
pub fn concat_phases(phases: &[(Vec<Request>, f64)]) -> Vec<Request> {
    let mut out = Vec::new();
    let mut offset = 0.0;
    let mut session_base = 0u64;
    for (reqs, duration) in phases {
        let mut max_session = 0u64;
        for r in reqs {
            let mut r = r.clone();
            r.arrival_ms += offset;
            r.deadline_ms = r.deadline_ms.map(|d| d + offset);
            max_session = max_session.max(r.session_id + 1);
            r.session_id += session_base;
            out.push(r);
        }
        session_base += max_session;
        offset += duration;
    }
    out.sort_by(|a, b| a.arrival_ms.total_cmp(&b.arrival_ms));
    for (i, r) in out.iter_mut().enumerate() {
        r.id = i as u64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn req(id: u64, turn: u32, l: u32, h: u32, at: f64) -> Request {
        Request {
            id,
            session_id: 0,
            turn,
            new_tokens: l,
            history_tokens: h,
            arrival_ms: at,
            deadline_ms: None,
        }
    }

    #[test]
    fn classify_boundaries() {
        assert_eq!(classify(&req(0, 1, 100, 0, 0.0), 256.0, 256.0), RequestClass::Short);
        assert_eq!(classify(&req(0, 1, 1024, 0, 0.0), 256.0, 256.0), RequestClass::Long);
        assert_eq!(classify(&req(0, 1, 256, 0, 0.0), 256.0, 256.0), RequestClass::Short);
        // Later turns use the re-prefill boundary.
        assert_eq!(classify(&req(0, 2, 200, 50, 0.0), 256.0, 128.0), RequestClass::Long);
        assert_eq!(classify(&req(0, 1, 200, 0, 0.0), 256.0, 128.0), RequestClass::Short);
    }

    #[test]
    fn trace_three_records_in_arrival_order() {
        let text = r#"{"session_id":2,"turn":1,"arrival_ms":30,"new_tokens":5}
{"session_id":0,"turn":1,"arrival_ms":10,"new_tokens":7,"extra":"ignored"}

{"session_id":1,"turn":1,"arrival_ms":20,"new_tokens":9,"deadline_ms":420}
"#;
        let reqs = parse_trace(Cursor::new(text)).unwrap();
        assert_eq!(reqs.len(), 3);
        let arrivals: Vec<f64> = reqs.iter().map(|r| r.arrival_ms).collect();
        assert_eq!(arrivals, vec![10.0, 20.0, 30.0]);
        assert_eq!(reqs[1].deadline_ms, Some(420.0));
        assert_eq!(reqs.iter().map(|r| r.id).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn missing_field_names_line() {
        let text = "{\"session_id\":0,\"turn\":1,\"arrival_ms\":0,\"new_tokens\":4}\n{\"session_id\":1,\"turn\":1,\"arrival_ms\":3}\n";
        match parse_trace(Cursor::new(text)) {
            Err(WorkloadError::ParseError { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("new_tokens"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cumulative_history() {
        let text = r#"{"session_id":4,"turn":1,"arrival_ms":0,"new_tokens":100}
{"session_id":4,"turn":2,"arrival_ms":50,"new_tokens":50}
{"session_id":5,"turn":1,"arrival_ms":0,"new_tokens":100,"gen_tokens":30}
{"session_id":5,"turn":2,"arrival_ms":60,"new_tokens":50,"gen_tokens":10}
{"session_id":5,"turn":3,"arrival_ms":70,"new_tokens":5}
"#;
        let reqs = parse_trace(Cursor::new(text)).unwrap();
        let find = |s, t| {
            reqs.iter()
                .find(|r| r.session_id == s && r.turn == t)
                .unwrap()
                .history_tokens
        };
        assert_eq!(find(4, 2), 100);
        assert_eq!(find(5, 2), 130);
        assert_eq!(find(5, 3), 190);
    }

    #[test]
    fn invariant_violations_rejected() {
        let first_with_history = r#"{"session_id":0,"turn":1,"arrival_ms":0,"new_tokens":4,"history_tokens":9}"#;
        assert!(matches!(
            parse_trace(Cursor::new(first_with_history)),
            Err(WorkloadError::InvariantViolation(_))
        ));
        let backwards = r#"{"session_id":0,"turn":1,"arrival_ms":10,"new_tokens":4}
{"session_id":0,"turn":2,"arrival_ms":5,"new_tokens":4}"#;
        assert!(matches!(
            parse_trace(Cursor::new(backwards)),
            Err(WorkloadError::InvariantViolation(_))
        ));
        let zero = r#"{"session_id":0,"turn":1,"arrival_ms":0,"new_tokens":0}"#;
        assert!(matches!(
            parse_trace(Cursor::new(zero)),
            Err(WorkloadError::InvariantViolation(_))
        ));
        let late_deadline = r#"{"session_id":0,"turn":1,"arrival_ms":10,"new_tokens":3,"deadline_ms":10}"#;
        assert!(parse_trace(Cursor::new(late_deadline)).is_err());
    }

    #[test]
    fn dist_parsing() {
        assert_eq!("fixed:64".parse::<LengthDist>().unwrap(), LengthDist::Fixed(64));
        assert_eq!(
            "uniform:8..255".parse::<LengthDist>().unwrap(),
            LengthDist::Uniform { min: 8, max: 255 }
        );
        let w: LengthDist = "weighted:100=0.5,300=0.5".parse().unwrap();
        assert_eq!(w.mean(), 200.0);
        assert_eq!(w.to_string().parse::<LengthDist>().unwrap(), w);
        assert!("gauss:1..2".parse::<LengthDist>().is_err());
        assert!(LengthDist::Uniform { min: 5, max: 4 }.validate(1, 10).is_err());
        assert!(LengthDist::Weighted(vec![]).validate(1, 10).is_err());
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = SynthConfig {
            seed: 7,
            ..Default::default()
        };
        let a = synth_stream(&cfg, 20_000.0).unwrap();
        let b = synth_stream(&cfg, 20_000.0).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        validate_stream(&a).unwrap();
    }

    #[test]
    fn synth_rejects_bad_config() {
        let cfg = SynthConfig {
            arrivals: ArrivalSpec::Poisson { rate_per_ms: 0.0 },
            ..Default::default()
        };
        assert!(matches!(synth_stream(&cfg, 10.0), Err(WorkloadError::InvalidConfig(_))));
        let mut cfg = SynthConfig::default();
        cfg.first_turn.short = LengthDist::Weighted(vec![]);
        assert!(matches!(synth_stream(&cfg, 10.0), Err(WorkloadError::InvalidConfig(_))));
        assert!(synth_stream(&SynthConfig::default(), 0.0).is_err());
    }

    #[test]
    fn clients_add_nested_streams() {
        let mut cfg = SynthConfig {
            seed: 3,
            ..Default::default()
        };
        cfg.arrivals = ArrivalSpec::Clients {
            short: 2,
            long: 1,
            rate_per_ms: 0.01,
        };
        let small = synth_stream(&cfg, 10_000.0).unwrap();
        cfg.arrivals = ArrivalSpec::Clients {
            short: 4,
            long: 1,
            rate_per_ms: 0.01,
        };
        let big = synth_stream(&cfg, 10_000.0).unwrap();
        validate_stream(&big).unwrap();
        // Every request of the smaller population reappears unchanged.
        let key = |r: &Request| (r.session_id, r.turn, r.new_tokens, r.arrival_ms.to_bits());
        let big_keys: std::collections::BTreeSet<_> = big.iter().map(key).collect();
        assert!(small.iter().all(|r| big_keys.contains(&key(r))));
        assert!(big.len() > small.len());
    }

    #[test]
    fn concat_shifts_later_phases() {
        let a = vec![req(0, 1, 5, 0, 1.0)];
        let b = vec![req(0, 1, 6, 0, 2.0)];
        let merged = concat_phases(&[(a, 100.0), (b, 100.0)]);
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[1].arrival_ms, 102.0);
        assert_ne!(merged[0].session_id, merged[1].session_id);
        validate_stream(&merged).unwrap();
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn trace_round_trips(seed in 0u64..10_000, rate in 0.001f64..0.1) {
            let cfg = SynthConfig {
                arrivals: ArrivalSpec::Poisson { rate_per_ms: rate },
                seed,
                ..Default::default()
            };
            let reqs = synth_stream(&cfg, 5_000.0).unwrap();
            validate_stream(&reqs).unwrap();
            let mut buf = Vec::new();
            write_trace(&mut buf, &reqs).unwrap();
            let back = parse_trace(Cursor::new(buf)).unwrap();
            proptest::prop_assert_eq!(back, reqs);
        }
    }

    #[test]
    fn trace_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let reqs = synth_stream(&SynthConfig::default(), 20_000.0).unwrap();
        save_trace(&path, &reqs).unwrap();
        assert_eq!(load_trace(&path).unwrap(), reqs);
        assert!(load_trace(dir.path().join("missing.jsonl")).is_err());
    }
}
