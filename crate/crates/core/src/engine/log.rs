//! Line-oriented event log. Every metric and audit is derived from it.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::controller::Pool;
use crate::cost_model::{BatchShape, KernelKind};
use crate::scheduler::DispatchReason;
use crate::workload::RequestClass;

#[derive(Debug, Error, PartialEq)]
#[error("event log line {line}: {msg}")]
pub struct LogParseError {
    pub line: usize,
    pub msg: String,
}

/// Chunk position of a long-prefill slice, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkPos {
    pub index: u32,
    pub count: u32,
}

impl ChunkPos {
    pub fn is_last(&self) -> bool {
        self.index == self.count
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Arrival {
        id: u64,
        class: RequestClass,
        deadline_ms: f64,
    },
    Dispatch {
        instance: u32,
        ids: Vec<u64>,
        reason: DispatchReason,
        shape: BatchShape,
        real_tokens: u64,
        service_ms: f64,
        chunk: Option<ChunkPos>,
    },
    Complete {
        instance: u32,
        ids: Vec<u64>,
        chunk: Option<ChunkPos>,
    },
    Migrate {
        instance: u32,
        from: Pool,
        to: Pool,
        p_short: f64,
        p_long: f64,
    },
}

impl Entry {
    pub fn kind(&self) -> &'static str {
        match self {
            Entry::Arrival { .. } => "arrival",
            Entry::Dispatch { .. } => "dispatch",
            Entry::Complete { .. } => "complete",
            Entry::Migrate { .. } => "migrate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub time_ms: f64,
    pub seq: u64,
    pub entry: Entry,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub records: Vec<Record>,
}

impl EventLog {
    pub fn push(&mut self, time_ms: f64, entry: Entry) {
        let seq = self.records.len() as u64;
        self.records.push(Record { time_ms, seq, entry });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 64);
        for r in &self.records {
            writeln!(out, "{r}").expect("writing to a String");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, LogParseError> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| l.parse::<Record>().map_err(|msg| LogParseError { line: i + 1, msg }))
            .collect::<Result<_, _>>()?;
        Ok(Self { records })
    }

    pub fn migrations(&self) -> impl Iterator<Item = (f64, &Entry)> {
        self.records
            .iter()
            .filter(|r| matches!(r.entry, Entry::Migrate { .. }))
            .map(|r| (r.time_ms, &r.entry))
    }
}

fn join_ids(ids: &[u64]) -> String {
    if ids.is_empty() {
        return "-".into();
    }
    ids.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
}

fn chunk_str(c: &Option<ChunkPos>) -> String {
    match c {
        Some(c) => format!("{}/{}", c.index, c.count),
        None => "-".into(),
    }
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t", self.time_ms, self.seq, self.entry.kind())?;
        match &self.entry {
            Entry::Arrival { id, class, deadline_ms } => {
                write!(f, "-\t{id}\tclass={class} deadline={deadline_ms}")
            }
            Entry::Dispatch {
                instance,
                ids,
                reason,
                shape,
                real_tokens,
                service_ms,
                chunk,
            } => write!(
                f,
                "{instance}\t{}\treason={} kernel={} l_pad={} depth={} real={real_tokens} service={service_ms} chunk={}",
                join_ids(ids),
                reason.as_str(),
                shape.kind.as_str(),
                shape.l_pad,
                shape.depth,
                chunk_str(chunk),
            ),
            Entry::Complete { instance, ids, chunk } => {
                write!(f, "{instance}\t{}\tchunk={}", join_ids(ids), chunk_str(chunk))
            }
            Entry::Migrate {
                instance,
                from,
                to,
                p_short,
                p_long,
            } => write!(
                f,
                "{instance}\t-\tfrom={} to={} p_short={p_short} p_long={p_long}",
                from.as_str(),
                to.as_str()
            ),
        }
    }
}

struct Fields<'a>(Vec<(&'a str, &'a str)>);

impl<'a> Fields<'a> {
    fn new(s: &'a str) -> Result<Self, String> {
        s.split(' ')
            .filter(|t| !t.is_empty())
            .map(|t| t.split_once('=').ok_or_else(|| format!("bad field `{t}`")))
            .collect::<Result<_, _>>()
            .map(Fields)
    }

    fn get(&self, key: &str) -> Result<&'a str, String> {
        self.0
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| format!("missing field `{key}`"))
    }

    fn num<T: FromStr>(&self, key: &str) -> Result<T, String> {
        let v = self.get(key)?;
        v.parse().map_err(|_| format!("bad value `{v}` for `{key}`"))
    }
}

fn parse_num<T: FromStr>(s: &str, what: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("bad {what} `{s}`"))
}

fn parse_ids(s: &str) -> Result<Vec<u64>, String> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',').map(|t| parse_num(t, "id")).collect()
}

fn parse_chunk(s: &str) -> Result<Option<ChunkPos>, String> {
    if s == "-" {
        return Ok(None);
    }
    let (i, n) = s.split_once('/').ok_or_else(|| format!("bad chunk `{s}`"))?;
    Ok(Some(ChunkPos {
        index: parse_num(i, "chunk index")?,
        count: parse_num(n, "chunk count")?,
    }))
}

fn parse_class(s: &str) -> Result<RequestClass, String> {
    match s {
        "short" => Ok(RequestClass::Short),
        "long" => Ok(RequestClass::Long),
        _ => Err(format!("bad class `{s}`")),
    }
}

fn parse_pool(s: &str) -> Result<Pool, String> {
    match s {
        "short" => Ok(Pool::Short),
        "long" => Ok(Pool::Long),
        _ => Err(format!("bad pool `{s}`")),
    }
}

impl FromStr for Record {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let cols: Vec<&str> = line.split('\t').collect();
        let [time, seq, kind, inst, ids, detail] = cols[..] else {
            return Err(format!("expected 6 tab-separated columns, got {}", cols.len()));
        };
        let time_ms: f64 = parse_num(time, "time")?;
        let seq: u64 = parse_num(seq, "seq")?;
        let f = Fields::new(detail)?;
        let instance = || parse_num::<u32>(inst, "instance");
        let entry = match kind {
            "arrival" => Entry::Arrival {
                id: parse_num(ids, "id")?,
                class: parse_class(f.get("class")?)?,
                deadline_ms: f.num("deadline")?,
            },
            "dispatch" => Entry::Dispatch {
                instance: instance()?,
                ids: parse_ids(ids)?,
                reason: DispatchReason::parse(f.get("reason")?).ok_or("bad reason")?,
                shape: BatchShape {
                    l_pad: f.num("l_pad")?,
                    depth: f.num("depth")?,
                    kind: match f.get("kernel")? {
                        "graph" => KernelKind::Graph,
                        "standard" => KernelKind::Standard,
                        k => return Err(format!("bad kernel `{k}`")),
                    },
                },
                real_tokens: f.num("real")?,
                service_ms: f.num("service")?,
                chunk: parse_chunk(f.get("chunk")?)?,
            },
            "complete" => Entry::Complete {
                instance: instance()?,
                ids: parse_ids(ids)?,
                chunk: parse_chunk(f.get("chunk")?)?,
            },
            "migrate" => Entry::Migrate {
                instance: instance()?,
                from: parse_pool(f.get("from")?)?,
                to: parse_pool(f.get("to")?)?,
                p_short: f.num("p_short")?,
                p_long: f.num("p_long")?,
            },
            k => return Err(format!("unknown kind `{k}`")),
        };
        Ok(Record { time_ms, seq, entry })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut log = EventLog::default();
        log.push(
            0.1,
            Entry::Arrival {
                id: 3,
                class: RequestClass::Short,
                deadline_ms: 400.1,
            },
        );
        log.push(
            1.0 / 3.0,
            Entry::Dispatch {
                instance: 2,
                ids: vec![3, 4],
                reason: DispatchReason::WindowExpired,
                shape: BatchShape {
                    l_pad: 64,
                    depth: 2,
                    kind: KernelKind::Graph,
                },
                real_tokens: 90,
                service_ms: 2.5,
                chunk: None,
            },
        );
        log.push(
            5.0,
            Entry::Complete {
                instance: 0,
                ids: vec![9],
                chunk: Some(ChunkPos { index: 1, count: 3 }),
            },
        );
        log.push(
            6.0,
            Entry::Migrate {
                instance: 1,
                from: Pool::Long,
                to: Pool::Short,
                p_short: -0.5,
                p_long: 1e-300,
            },
        );
        let text = log.to_text();
        assert_eq!(EventLog::parse(&text).unwrap(), log);
    }

    #[test]
    fn bad_lines_report_position() {
        let err = EventLog::parse("0\t0\tarrival\t-\t1\tclass=short deadline=4\nnope").unwrap_err();
        assert_eq!(err.line, 2);
    }
}
