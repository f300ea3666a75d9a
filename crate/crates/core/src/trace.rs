//! Per-round, per-agent trace records and their line format.
//!
//! One record per good agent per round, written after the round's moves:
//!
//! ```text
//! round,agent,node,stage,length,elapsed,count,ready,endMC,gid,action,|S_p|,|P_p|,|P_c|,|D|,detail
//! ```
//!
//! `gid` is `-` for none. Actions are `S`, `M<port>` or `T`, prefixed with
//! `F` when the agent was following a group. `detail` is empty except on the
//! round an agent enters MakeCandidate (`sp=<ids>`) or MakeGroup
//! (`sc=<ids>|pc=<ids>`); ID lists are `;`-separated.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::agent::{Action, Gid, Stage};
use crate::graph::NodeId;
use crate::idset::IdSet;
use crate::rendezvous::AgentId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TraceAction {
    pub followed: bool,
    pub action: Action,
}

impl fmt::Display for TraceAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.followed {
            f.write_str("F")?;
        }
        match self.action {
            Action::Stay => f.write_str("S"),
            Action::Move(p) => write!(f, "M{p}"),
            Action::Terminate => f.write_str("T"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Detail {
    None,
    EnterMakeCandidate { s_p: IdSet },
    EnterMakeGroup { s_c: IdSet, p_c: Vec<AgentId> },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TraceRecord {
    pub round: u64,
    pub agent: AgentId,
    pub node: NodeId,
    pub stage: Stage,
    pub length: u64,
    pub elapsed: u64,
    pub count: u64,
    pub ready: bool,
    pub end_make_candidate: bool,
    pub gid: Gid,
    pub action: TraceAction,
    pub s_p: usize,
    pub p_p: usize,
    pub p_c: usize,
    pub d: usize,
    pub detail: Detail,
}

fn push_u64(out: &mut Vec<u8>, mut v: u64) {
    let mut buf = [0u8; 20];
    let mut i = buf.len();
    loop {
        i -= 1;
        buf[i] = b'0' + (v % 10) as u8;
        v /= 10;
        if v == 0 {
            break;
        }
    }
    out.extend_from_slice(&buf[i..]);
}

fn push_ids<I: IntoIterator<Item = AgentId>>(out: &mut Vec<u8>, ids: I) {
    for (i, x) in ids.into_iter().enumerate() {
        if i > 0 {
            out.push(b';');
        }
        push_u64(out, x);
    }
}

impl TraceRecord {
    /// Appends the record's line, without a newline. Same text as
    /// `Display`, without going through the formatter.
    pub fn write_line(&self, out: &mut Vec<u8>) {
        for v in [self.round, self.agent, self.node as u64] {
            push_u64(out, v);
            out.push(b',');
        }
        out.extend_from_slice(self.stage.code().as_bytes());
        out.push(b',');
        for v in [
            self.length,
            self.elapsed,
            self.count,
            u64::from(self.ready),
            u64::from(self.end_make_candidate),
        ] {
            push_u64(out, v);
            out.push(b',');
        }
        match self.gid {
            Some(g) => push_u64(out, g),
            None => out.push(b'-'),
        }
        out.push(b',');
        if self.action.followed {
            out.push(b'F');
        }
        match self.action.action {
            Action::Stay => out.push(b'S'),
            Action::Move(p) => {
                out.push(b'M');
                push_u64(out, u64::from(p));
            }
            Action::Terminate => out.push(b'T'),
        }
        out.push(b',');
        for v in [self.s_p, self.p_p, self.p_c, self.d] {
            push_u64(out, v as u64);
            out.push(b',');
        }
        match &self.detail {
            Detail::None => {}
            Detail::EnterMakeCandidate { s_p } => {
                out.extend_from_slice(b"sp=");
                push_ids(out, s_p.iter());
            }
            Detail::EnterMakeGroup { s_c, p_c } => {
                out.extend_from_slice(b"sc=");
                push_ids(out, s_c.iter());
                out.extend_from_slice(b"|pc=");
                push_ids(out, p_c.iter().copied());
            }
        }
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut line = Vec::new();
        self.write_line(&mut line);
        f.write_str(core::str::from_utf8(&line).map_err(|_| fmt::Error)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub field: &'static str,
    pub text: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bad {} field {:?}", self.field, self.text)
    }
}

impl core::error::Error for ParseError {}

fn num<T: core::str::FromStr>(field: &'static str, s: &str) -> Result<T, ParseError> {
    s.parse().map_err(|_| ParseError {
        field,
        text: s.to_string(),
    })
}

fn flag(field: &'static str, s: &str) -> Result<bool, ParseError> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(ParseError {
            field,
            text: s.to_string(),
        }),
    }
}

fn ids(field: &'static str, s: &str) -> Result<Vec<AgentId>, ParseError> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(|x| num(field, x)).collect()
}

impl core::str::FromStr for TraceAction {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<TraceAction, ParseError> {
        let bad = || ParseError {
            field: "action",
            text: s.to_string(),
        };
        let (followed, rest) = match s.strip_prefix('F') {
            Some(r) => (true, r),
            None => (false, s),
        };
        let action = match rest {
            "S" => Action::Stay,
            "T" => Action::Terminate,
            r => Action::Move(
                r.strip_prefix('M')
                    .ok_or_else(bad)?
                    .parse()
                    .map_err(|_| bad())?,
            ),
        };
        Ok(TraceAction { followed, action })
    }
}

impl core::str::FromStr for TraceRecord {
    type Err = ParseError;

    fn from_str(line: &str) -> Result<TraceRecord, ParseError> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 16 {
            return Err(ParseError {
                field: "record",
                text: line.to_string(),
            });
        }
        let stage = Stage::from_code(f[3]).ok_or(ParseError {
            field: "stage",
            text: f[3].to_string(),
        })?;
        let gid = if f[9] == "-" {
            None
        } else {
            Some(num("gid", f[9])?)
        };
        let detail = if f[15].is_empty() {
            Detail::None
        } else if let Some(rest) = f[15].strip_prefix("sp=") {
            Detail::EnterMakeCandidate {
                s_p: ids("detail", rest)?.into_iter().collect(),
            }
        } else {
            let bad = || ParseError {
                field: "detail",
                text: f[15].to_string(),
            };
            let (sc, pc) = f[15].split_once('|').ok_or_else(bad)?;
            Detail::EnterMakeGroup {
                s_c: ids("detail", sc.strip_prefix("sc=").ok_or_else(bad)?)?
                    .into_iter()
                    .collect(),
                p_c: ids("detail", pc.strip_prefix("pc=").ok_or_else(bad)?)?,
            }
        };
        Ok(TraceRecord {
            round: num("round", f[0])?,
            agent: num("agent", f[1])?,
            node: num("node", f[2])?,
            stage,
            length: num("length", f[4])?,
            elapsed: num("elapsed", f[5])?,
            count: num("count", f[6])?,
            ready: flag("ready", f[7])?,
            end_make_candidate: flag("endMC", f[8])?,
            gid,
            action: f[10].parse()?,
            s_p: num("|S_p|", f[11])?,
            p_p: num("|P_p|", f[12])?,
            p_c: num("|P_c|", f[13])?,
            d: num("|D|", f[14])?,
            detail,
        })
    }
}

/// Consumer of trace records, called in round order and, within a round,
/// in ascending agent ID order.
pub trait TraceSink {
    fn record(&mut self, rec: &TraceRecord);

    /// Whether records should be built at all.
    fn enabled(&self) -> bool {
        true
    }
}

/// Discards everything.
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _: &TraceRecord) {}

    fn enabled(&self) -> bool {
        false
    }
}

/// Keeps every record in memory.
#[derive(Default)]
pub struct VecSink(pub Vec<TraceRecord>);

impl TraceSink for VecSink {
    fn record(&mut self, rec: &TraceRecord) {
        self.0.push(rec.clone());
    }
}

/// Feeds two sinks.
pub struct Tee<'a, 'b>(pub &'a mut dyn TraceSink, pub &'b mut dyn TraceSink);

impl TraceSink for Tee<'_, '_> {
    fn record(&mut self, rec: &TraceRecord) {
        if self.0.enabled() {
            self.0.record(rec);
        }
        if self.1.enabled() {
            self.1.record(rec);
        }
    }

    fn enabled(&self) -> bool {
        self.0.enabled() || self.1.enabled()
    }
}
