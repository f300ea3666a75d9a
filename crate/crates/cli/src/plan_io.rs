//! Exploration plan files: a header line `N t_ex corpus_id length`, then one
//! offset per line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use byzgather_core::explore::ExplorationPlan;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanFileError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        source: Box<PlanFileError>,
    },
}

pub fn to_text(plan: &ExplorationPlan) -> String {
    let mut out = format!(
        "{} {} {} {}\n",
        plan.max_nodes,
        plan.t_ex,
        plan.corpus_id,
        plan.offsets.len()
    );
    for o in &plan.offsets {
        writeln!(out, "{o}").unwrap();
    }
    out
}

pub fn parse(text: &str) -> Result<ExplorationPlan, PlanFileError> {
    let err = |line: usize, msg: String| PlanFileError::Parse { line, msg };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [n, t_ex, corpus, len] = fields[..] else {
        return Err(err(
            1,
            format!("expected `N t_ex corpus_id length`, found {header:?}"),
        ));
    };
    let num = |name: &str, s: &str| {
        s.parse::<usize>()
            .map_err(|_| err(1, format!("{name} is not a number: {s:?}")))
    };
    let (n, t_ex, len) = (num("N", n)?, num("t_ex", t_ex)?, num("length", len)?);
    let mut offsets = Vec::with_capacity(len);
    for (line, text) in lines.by_ref().take(len) {
        offsets.push(
            text.parse()
                .map_err(|_| err(line, format!("bad offset {text:?}")))?,
        );
    }
    if offsets.len() < len {
        return Err(err(
            offsets.len() + 2,
            format!("expected {len} offsets, found {}", offsets.len()),
        ));
    }
    if let Some((line, extra)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(err(
            line,
            format!("unexpected content after {len} offsets: {extra:?}"),
        ));
    }
    ExplorationPlan::new(n, offsets, t_ex, corpus).map_err(|e| err(1, e.to_string()))
}

pub fn load(path: &Path) -> Result<ExplorationPlan, PlanFileError> {
    let text = fs::read_to_string(path).map_err(|source| PlanFileError::Io {
        path: path.into(),
        source,
    })?;
    parse(&text).map_err(|e| PlanFileError::InFile {
        path: path.into(),
        source: Box::new(e),
    })
}

pub fn save(path: &Path, plan: &ExplorationPlan) -> Result<(), PlanFileError> {
    fs::write(path, to_text(plan)).map_err(|source| PlanFileError::Io {
        path: path.into(),
        source,
    })
}
