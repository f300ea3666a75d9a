//! Graph text files and corpus directories.
//!
//! A graph file holds `n` on the first line, then one line per node:
//! its degree followed by one `neighbor remote_port` pair per local port,
//! in port order. Corpus directories hold files named `<n>_<seed>.graph`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use byzgather_core::explore::{build_plan, ExplorationPlan};
use byzgather_core::graph::{GraphError, GraphKind, Link, PortGraph};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphFileError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Invalid(GraphError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        source: Box<GraphFileError>,
    },
    #[error("{0}: corpus files must be named <n>_<seed>.graph")]
    BadName(PathBuf),
}

pub fn to_text(g: &PortGraph) -> String {
    let mut out = format!("{}\n", g.node_count());
    for v in 0..g.node_count() {
        let links = g.links(v);
        write!(out, "{}", links.len()).unwrap();
        for l in links {
            write!(out, " {} {}", l.neighbor, l.remote_port).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse(text: &str) -> Result<PortGraph, GraphFileError> {
    let err = |line: usize, msg: String| GraphFileError::Parse { line, msg };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, first) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let n: usize = first
        .parse()
        .map_err(|_| err(1, format!("expected node count, found {first:?}")))?;
    let mut adj = Vec::with_capacity(n);
    for v in 0..n {
        let (line, text) = lines
            .next()
            .ok_or_else(|| err(v + 2, format!("missing line for node {v}")))?;
        let nums = text
            .split_whitespace()
            .map(|w| {
                w.parse::<usize>()
                    .map_err(|_| err(line, format!("not a number: {w:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (&d, rest) = nums
            .split_first()
            .ok_or_else(|| err(line, "missing degree".into()))?;
        if rest.len() != 2 * d {
            return Err(err(
                line,
                format!(
                    "degree {d} needs {} numbers after it, found {}",
                    2 * d,
                    rest.len()
                ),
            ));
        }
        let links = rest
            .chunks(2)
            .enumerate()
            .map(|(i, pair)| Link {
                port: i as u32 + 1,
                neighbor: pair[0],
                remote_port: pair[1] as u32,
            })
            .collect();
        adj.push(links);
    }
    if let Some((line, extra)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(err(
            line,
            format!("unexpected content after {n} nodes: {extra:?}"),
        ));
    }
    PortGraph::new(adj).map_err(GraphFileError::Invalid)
}

pub fn load(path: &Path) -> Result<PortGraph, GraphFileError> {
    let text = fs::read_to_string(path).map_err(|source| GraphFileError::Io {
        path: path.into(),
        source,
    })?;
    parse(&text).map_err(|e| GraphFileError::InFile {
        path: path.into(),
        source: Box::new(e),
    })
}

pub fn save(path: &Path, g: &PortGraph) -> Result<(), GraphFileError> {
    fs::write(path, to_text(g)).map_err(|source| GraphFileError::Io {
        path: path.into(),
        source,
    })
}

fn corpus_key(path: &Path) -> Option<(usize, u64)> {
    let stem = path.file_name()?.to_str()?.strip_suffix(".graph")?;
    let (n, seed) = stem.split_once('_')?;
    Some((n.parse().ok()?, seed.parse().ok()?))
}

/// Every graph of a corpus directory, ordered by `(n, seed)`.
pub fn load_corpus(dir: &Path) -> Result<Vec<PortGraph>, GraphFileError> {
    let io = |source| GraphFileError::Io {
        path: dir.into(),
        source,
    };
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().is_some_and(|e| e == "graph") {
            let key = corpus_key(&path).ok_or_else(|| GraphFileError::BadName(path.clone()))?;
            files.push((key, path));
        }
    }
    files.sort();
    files.iter().map(|(_, p)| load(p)).collect()
}

pub fn save_corpus(dir: &Path, graphs: &[((usize, u64), PortGraph)]) -> Result<(), GraphFileError> {
    fs::create_dir_all(dir).map_err(|source| GraphFileError::Io {
        path: dir.into(),
        source,
    })?;
    for ((n, seed), g) in graphs {
        save(&dir.join(format!("{n}_{seed}.graph")), g)?;
    }
    Ok(())
}

pub const BUILTIN_KINDS: [GraphKind; 3] = [
    GraphKind::Ring,
    GraphKind::RandomTree,
    GraphKind::RandomConnected,
];

/// The built-in desk corpus: rings, random trees and random connected
/// graphs with 3 to 8 nodes, generator seeds 0..4. File seed
/// `3 * generator_seed + kind` keeps the `(n, seed)` order of the files
/// equal to the generation order.
pub fn builtin_corpus(name: &str) -> Option<Vec<((usize, u64), PortGraph)>> {
    if name != "small" {
        return None;
    }
    let mut out = Vec::new();
    for n in 3..=8 {
        for seed in 0..4u64 {
            for (ki, kind) in BUILTIN_KINDS.into_iter().enumerate() {
                let g = PortGraph::generate(kind, n, seed).expect("builtin kinds support n >= 3");
                out.push(((n, 3 * seed + ki as u64), g));
            }
        }
    }
    Some(out)
}

/// The certified plan for the built-in corpus, built once per process.
pub fn builtin_plan(name: &str) -> Option<&'static ExplorationPlan> {
    static SMALL: OnceLock<ExplorationPlan> = OnceLock::new();
    let graphs = || -> Vec<PortGraph> {
        builtin_corpus(name)
            .into_iter()
            .flatten()
            .map(|(_, g)| g)
            .collect()
    };
    match name {
        "small" => Some(SMALL.get_or_init(|| {
            build_plan(8, &graphs(), "small", 1, 100_000).expect("small corpus plan")
        })),
        _ => None,
    }
}
