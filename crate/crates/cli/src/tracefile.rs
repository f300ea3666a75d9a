//! Trace files.
//!
//! ```text
//! #byzgather-trace v1 {"graph": ..., "plan": ..., ...}
//! 0,17,3,C,4,1,0,0,0,-,S,1,0,0,0,
//! ...
//! #end rounds=425980 records=7241660
//! ```
//!
//! The header embeds everything needed to re-run: graph and plan text, agent
//! placement, seed and protocol parameters. Full traces carry one record line
//! per agent per round. Digest traces replace the records of each 1024-round
//! block by `#digest <first_round> <last_round> <records> <sha256>` over the
//! record lines (newline-terminated) the full trace would hold.

use std::fmt::Write as _;
use std::io::{self, Write};

use byzgather_core::adversary::StrategyKind;
use byzgather_core::agent::Protocol;
use byzgather_core::graph::PortGraph;
use byzgather_core::sim::{ByzSpec, RunConfig};
use byzgather_core::trace::{TraceRecord, TraceSink};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ModeName, Resolved, TraceMode};
use crate::{graph_io, plan_io};

pub const MAGIC: &str = "#byzgather-trace v1 ";
pub const DIGEST_BLOCK: u64 = 1024;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByzEntry {
    pub id: u64,
    pub node: usize,
    pub strategy: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub graph: String,
    pub plan: String,
    pub certification: String,
    pub good: Vec<(u64, usize)>,
    pub byzantine: Vec<ByzEntry>,
    pub seed: u64,
    pub max_rounds: u64,
    pub pbc_mode: ModeName,
    pub t_ini: u64,
    pub rel_scale: u64,
    pub mode: TraceMode,
}

#[derive(Debug, Error)]
pub enum HeaderError {
    #[error("line 1: not a byzgather trace")]
    Magic,
    #[error("line 1: bad header: {0}")]
    Json(#[from] serde_json::Error),
    #[error("line 1: bad {what} in header: {msg}")]
    Content { what: &'static str, msg: String },
}

/// A run rebuilt from a trace header.
pub struct Setup {
    pub graph: PortGraph,
    pub proto: Protocol,
    pub cfg: RunConfig,
}

impl Header {
    pub fn new(r: &Resolved, mode: TraceMode) -> Header {
        Header {
            graph: graph_io::to_text(&r.graph),
            plan: plan_io::to_text(&r.proto.plan),
            certification: r.certification.describe(),
            good: r.cfg.good.clone(),
            byzantine: r
                .cfg
                .byzantine
                .iter()
                .map(|b| ByzEntry {
                    id: b.id,
                    node: b.node,
                    strategy: b.strategy.name().into(),
                })
                .collect(),
            seed: r.cfg.seed,
            max_rounds: r.cfg.max_rounds.expect("resolved configs carry max_rounds"),
            pbc_mode: match r.proto.pbc_mode {
                byzgather_core::agent::PbcMode::Oracle => ModeName::Oracle,
                byzgather_core::agent::PbcMode::Distributed => ModeName::Distributed,
            },
            t_ini: r.proto.t_ini,
            rel_scale: r.rel_scale,
            mode,
        }
    }

    pub fn to_line(&self) -> String {
        format!(
            "{MAGIC}{}",
            serde_json::to_string(self).expect("header serializes")
        )
    }

    pub fn parse_line(line: &str) -> Result<Header, HeaderError> {
        let json = line.strip_prefix(MAGIC).ok_or(HeaderError::Magic)?;
        Ok(serde_json::from_str(json)?)
    }

    pub fn setup(&self) -> Result<Setup, HeaderError> {
        let bad = |what, msg: String| HeaderError::Content { what, msg };
        let graph = graph_io::parse(&self.graph).map_err(|e| bad("graph", e.to_string()))?;
        let plan = plan_io::parse(&self.plan).map_err(|e| bad("plan", e.to_string()))?;
        let byzantine = self
            .byzantine
            .iter()
            .map(|b| {
                let strategy = StrategyKind::parse(&b.strategy)
                    .ok_or_else(|| bad("strategy", b.strategy.clone()))?;
                Ok(ByzSpec {
                    id: b.id,
                    node: b.node,
                    strategy,
                })
            })
            .collect::<Result<_, HeaderError>>()?;
        let mut proto = Protocol::new(plan, self.rel_scale, self.pbc_mode.into());
        proto.t_ini = self.t_ini;
        let cfg = RunConfig {
            good: self.good.clone(),
            byzantine,
            seed: self.seed,
            max_rounds: Some(self.max_rounds),
        };
        Ok(Setup { graph, proto, cfg })
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
            write!(s, "{b:02x}").unwrap();
            s
        })
}

struct Block {
    first: u64,
    last: u64,
    records: u64,
    hasher: Sha256,
}

/// Writes a trace as the simulator produces records.
pub struct TraceWriter<W: Write> {
    out: W,
    mode: TraceMode,
    block: Option<Block>,
    records: u64,
    line: Vec<u8>,
    error: Option<io::Error>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W, header: &Header) -> io::Result<TraceWriter<W>> {
        writeln!(out, "{}", header.to_line())?;
        Ok(TraceWriter {
            out,
            mode: header.mode,
            block: None,
            records: 0,
            line: Vec::new(),
            error: None,
        })
    }

    fn flush_block(&mut self) -> io::Result<()> {
        if let Some(b) = self.block.take() {
            let sum = hex(&b.hasher.finalize());
            writeln!(
                self.out,
                "#digest {} {} {} {sum}",
                b.first, b.last, b.records
            )?;
        }
        Ok(())
    }

    fn write_record(&mut self, rec: &TraceRecord) -> io::Result<()> {
        self.records += 1;
        self.line.clear();
        rec.write_line(&mut self.line);
        self.line.push(b'\n');
        match self.mode {
            TraceMode::Full => self.out.write_all(&self.line),
            TraceMode::Digest => {
                if self
                    .block
                    .as_ref()
                    .is_some_and(|b| b.first / DIGEST_BLOCK != rec.round / DIGEST_BLOCK)
                {
                    self.flush_block()?;
                }
                let b = self.block.get_or_insert_with(|| Block {
                    first: rec.round,
                    last: rec.round,
                    records: 0,
                    hasher: Sha256::new(),
                });
                b.last = rec.round;
                b.records += 1;
                b.hasher.update(&self.line);
                Ok(())
            }
        }
    }

    /// Closes the trace with its `#end` line; `rounds` is the number of
    /// rounds the run executed.
    pub fn finish(mut self, rounds: u64) -> io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.flush_block()?;
        writeln!(self.out, "#end rounds={rounds} records={}", self.records)?;
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> TraceSink for TraceWriter<W> {
    fn record(&mut self, rec: &TraceRecord) {
        if self.error.is_none() {
            if let Err(e) = self.write_record(rec) {
                self.error = Some(e);
            }
        }
    }
}

/// Parses `#end rounds=R records=N`.
pub fn parse_end(line: &str) -> Option<(u64, u64)> {
    let rest = line.strip_prefix("#end ")?;
    let (r, n) = rest.split_once(' ')?;
    Some((
        r.strip_prefix("rounds=")?.parse().ok()?,
        n.strip_prefix("records=")?.parse().ok()?,
    ))
}
