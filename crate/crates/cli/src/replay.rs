//! Replay and offline invariant checks of trace files.
//!
//! Replay rebuilds the run from the header and re-executes it. Record lines
//! are compared one by one; digest lines are compared against the digests
//! of the re-executed records.

use std::collections::VecDeque;
use std::io::BufRead;

use byzgather_core::invariants::{Checker, Report};
use byzgather_core::rendezvous::AgentId;
use byzgather_core::sim::{SimError, World};
use byzgather_core::trace::{TraceRecord, VecSink};
use thiserror::Error;

use crate::config::TraceMode;
use crate::harness::facts_of;
use crate::tracefile::{parse_end, Header, HeaderError, TraceWriter};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Header(#[from] HeaderError),
    #[error("line {line}: malformed trace line: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("trace header describes a run that cannot start: {0}")]
    Sim(#[from] SimError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Divergence {
    pub line: usize,
    pub round: Option<u64>,
    pub agent: Option<AgentId>,
    pub what: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Verified {
        records: u64,
        rounds: u64,
    },
    /// No `#end` line: everything present matched.
    VerifiedPrefix {
        records: u64,
        last_round: Option<u64>,
    },
    Diverged(Divergence),
}

/// Lines of a trace with 1-based numbers. A final line without a newline is
/// a cut-off write and is dropped.
struct Lines<R> {
    input: R,
    number: usize,
    buf: String,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<Option<(usize, &str)>, std::io::Error> {
        self.buf.clear();
        if self.input.read_line(&mut self.buf)? == 0 || !self.buf.ends_with('\n') {
            return Ok(None);
        }
        self.number += 1;
        Ok(Some((self.number, self.buf.trim_end_matches(['\n', '\r']))))
    }
}

fn read_header<R: BufRead>(lines: &mut Lines<R>) -> Result<Header, ReplayError> {
    match lines.next()? {
        Some((_, l)) => Ok(Header::parse_line(l)?),
        None => Err(HeaderError::Magic.into()),
    }
}

fn record(line: usize, text: &str) -> Result<TraceRecord, ReplayError> {
    text.parse().map_err(
        |e: byzgather_core::trace::ParseError| ReplayError::Malformed {
            line,
            msg: e.to_string(),
        },
    )
}

fn diverged(line: usize, round: Option<u64>, agent: Option<AgentId>, what: String) -> Verdict {
    Verdict::Diverged(Divergence {
        line,
        round,
        agent,
        what,
    })
}

pub fn replay<R: BufRead>(input: R) -> Result<Verdict, ReplayError> {
    let mut lines = Lines {
        input,
        number: 0,
        buf: String::new(),
    };
    let header = read_header(&mut lines)?;
    let setup = header.setup()?;
    match header.mode {
        TraceMode::Full => replay_full(&mut lines, &setup),
        TraceMode::Digest => replay_digest(&mut lines, &header, &setup),
    }
}

fn replay_full<R: BufRead>(
    lines: &mut Lines<R>,
    setup: &crate::tracefile::Setup,
) -> Result<Verdict, ReplayError> {
    let mut world = World::new(&setup.graph, setup.proto.clone(), &setup.cfg)?;
    let mut pending: VecDeque<TraceRecord> = VecDeque::new();
    let mut sink = VecSink::default();
    let mut records = 0u64;
    let mut last_round = None;
    let done = |w: &World| w.all_good_terminated() || w.round() >= w.max_rounds();
    while let Some((no, text)) = lines.next()? {
        if text.starts_with("#end") {
            let (rounds, n) = parse_end(text).ok_or_else(|| ReplayError::Malformed {
                line: no,
                msg: "expected `#end rounds=R records=N`".into(),
            })?;
            if pending.is_empty() && !done(&world) {
                world.step(&mut sink)?;
                pending.extend(sink.0.drain(..));
            }
            if let Some(next) = pending.front() {
                return Ok(diverged(
                    no,
                    Some(next.round),
                    Some(next.agent),
                    format!("trace ends before `{next}`"),
                ));
            }
            if rounds != world.round() || n != records {
                let what = format!(
                    "end line says {rounds} rounds / {n} records, run has {} / {records}",
                    world.round()
                );
                return Ok(diverged(no, None, None, what));
            }
            return Ok(Verdict::Verified { records, rounds });
        }
        let rec = record(no, text)?;
        while pending.is_empty() && !done(&world) {
            world.step(&mut sink)?;
            pending.extend(sink.0.drain(..));
        }
        match pending.pop_front() {
            None => {
                return Ok(diverged(
                    no,
                    Some(rec.round),
                    Some(rec.agent),
                    "record after the run ended".into(),
                ))
            }
            Some(exp) if exp != rec => {
                return Ok(diverged(
                    no,
                    Some(exp.round),
                    Some(exp.agent),
                    format!("expected `{exp}`, found `{rec}`"),
                ));
            }
            Some(_) => {
                records += 1;
                last_round = Some(rec.round);
            }
        }
    }
    Ok(Verdict::VerifiedPrefix {
        records,
        last_round,
    })
}

fn replay_digest<R: BufRead>(
    lines: &mut Lines<R>,
    header: &Header,
    setup: &crate::tracefile::Setup,
) -> Result<Verdict, ReplayError> {
    let mut world = World::new(&setup.graph, setup.proto.clone(), &setup.cfg)?;
    let mut writer = TraceWriter::new(Vec::new(), header)?;
    world.run_to_end(&mut writer)?;
    let text = String::from_utf8(writer.finish(world.round())?).expect("trace text is UTF-8");
    let mut expected = text.lines().enumerate().skip(1);
    let mut records = 0u64;
    let mut last_round = None;
    while let Some((no, found)) = lines.next()? {
        if !found.starts_with("#digest ") && !found.starts_with("#end") {
            return Err(ReplayError::Malformed {
                line: no,
                msg: "expected a #digest or #end line".into(),
            });
        }
        let Some((_, exp)) = expected.next() else {
            return Ok(diverged(
                no,
                None,
                None,
                "line after the end of the run".into(),
            ));
        };
        if exp != found {
            let round = digest_round(exp);
            return Ok(diverged(
                no,
                round,
                None,
                format!("expected `{exp}`, found `{found}`"),
            ));
        }
        if let Some(end) = parse_end(found) {
            return Ok(Verdict::Verified {
                records: end.1,
                rounds: end.0,
            });
        }
        let f: Vec<&str> = found.split(' ').collect();
        records += f.get(3).and_then(|n| n.parse::<u64>().ok()).unwrap_or(0);
        last_round = f.get(2).and_then(|r| r.parse().ok());
    }
    Ok(Verdict::VerifiedPrefix {
        records,
        last_round,
    })
}

fn digest_round(line: &str) -> Option<u64> {
    line.strip_prefix("#digest ")?
        .split(' ')
        .next()?
        .parse()
        .ok()
}

/// Evaluates the invariants over a trace. Full traces are checked from
/// their records; digest traces are re-executed from the header.
pub fn check_invariants<R: BufRead>(input: R) -> Result<(Report, bool), ReplayError> {
    let mut lines = Lines {
        input,
        number: 0,
        buf: String::new(),
    };
    let header = read_header(&mut lines)?;
    let setup = header.setup()?;
    let mut checker = Checker::new(facts_of(&setup.proto, &setup.cfg));
    let mut complete = false;
    match header.mode {
        TraceMode::Full => {
            use byzgather_core::trace::TraceSink;
            while let Some((no, text)) = lines.next()? {
                if text.starts_with("#end") {
                    complete = true;
                    break;
                }
                checker.record(&record(no, text)?);
            }
        }
        TraceMode::Digest => {
            World::new(&setup.graph, setup.proto.clone(), &setup.cfg)?.run_to_end(&mut checker)?;
            complete = true;
        }
    }
    Ok((checker.finish(), complete))
}
