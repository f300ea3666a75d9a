//! Run configuration: TOML with sections, validated into a runnable setup.
//!
//! ```toml
//! seed = 7
//! pbc_mode = "distributed"
//!
//! [graph]
//! kind = "ring"
//! n = 4
//!
//! [agents]
//! k = 8
//!
//! [adversary]
//! f = 0
//! ```
//!
//! Errors name the offending field by its dotted path.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use byzgather_core::adversary::StrategyKind;
use byzgather_core::agent::{PbcMode, Protocol};
use byzgather_core::explore::{certify, ExplorationPlan};
use byzgather_core::graph::{GraphKind, PortGraph};
use byzgather_core::sim::{default_max_rounds, ByzSpec, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{graph_io, plan_io};

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("config error at `{field}`: {msg}")]
    Field { field: String, msg: String },
    #[error("config error: {0}")]
    Other(String),
}

fn field_err(field: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        msg: msg.into(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Oracle,
    #[default]
    Distributed,
}

impl From<ModeName> for PbcMode {
    fn from(m: ModeName) -> PbcMode {
        match m {
            ModeName::Oracle => PbcMode::Oracle,
            ModeName::Distributed => PbcMode::Distributed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    Ring,
    Complete,
    RandomTree,
    RandomConnected,
}

impl From<KindName> for GraphKind {
    fn from(k: KindName) -> GraphKind {
        match k {
            KindName::Ring => GraphKind::Ring,
            KindName::Complete => GraphKind::Complete,
            KindName::RandomTree => GraphKind::RandomTree,
            KindName::RandomConnected => GraphKind::RandomConnected,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    #[default]
    Silent,
    Liar,
    GroupImpostor,
    TargetLure,
    ConsensusEquivocator,
    FollowDisruptor,
}

impl StrategyName {
    pub const ALL: [StrategyName; 6] = [
        StrategyName::Silent,
        StrategyName::Liar,
        StrategyName::GroupImpostor,
        StrategyName::TargetLure,
        StrategyName::ConsensusEquivocator,
        StrategyName::FollowDisruptor,
    ];
}

impl From<StrategyName> for StrategyKind {
    fn from(s: StrategyName) -> StrategyKind {
        StrategyKind::ALL[StrategyName::ALL.iter().position(|&x| x == s).unwrap()]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    /// One line per agent per round.
    #[default]
    Full,
    /// One SHA-256 line per 1024 rounds of records.
    Digest,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub kind: Option<KindName>,
    pub n: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    pub file: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub builtin: Option<String>,
    pub file: Option<PathBuf>,
    /// Corpus directory the plan file was certified against.
    pub corpus: Option<PathBuf>,
}

impl Default for PlanSpec {
    fn default() -> PlanSpec {
        PlanSpec {
            builtin: Some("small".into()),
            file: None,
            corpus: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub k: usize,
    /// Explicit IDs; otherwise `k` distinct IDs are drawn from `id_range`.
    pub ids: Option<Vec<u64>>,
    /// Half-open range, default `[1, 65536)`.
    pub id_range: Option<[u64; 2]>,
    /// Start nodes in ID-list order; otherwise drawn uniformly.
    pub nodes: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    #[serde(default)]
    pub f: usize,
    pub strategy: Option<StrategyName>,
    pub strategies: Option<Vec<StrategyName>>,
    /// Which IDs are Byzantine; default the first `f` of the ID list.
    pub byzantine_ids: Option<Vec<u64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub trace: Option<PathBuf>,
    #[serde(default)]
    pub trace_mode: TraceMode,
    pub result: Option<PathBuf>,
}

fn default_t_ini() -> u64 {
    Protocol::DEFAULT_T_INI
}

fn one() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default)]
    pub seed: u64,
    pub max_rounds: Option<u64>,
    #[serde(default)]
    pub pbc_mode: ModeName,
    #[serde(default = "default_t_ini")]
    pub t_ini: u64,
    #[serde(default = "one")]
    pub rel_scale: u64,
    /// Reject configurations with k < 9f + 8.
    #[serde(default)]
    pub bound_check: bool,
    pub graph: GraphSpec,
    #[serde(default)]
    pub plan: PlanSpec,
    pub agents: AgentSpec,
    #[serde(default)]
    pub adversary: AdversarySpec,
    #[serde(default)]
    pub output: OutputSpec,
}

pub const DEFAULT_ID_RANGE: [u64; 2] = [1, 1 << 16];

/// Deserializes TOML, reporting the dotted path of the failing field.
pub fn from_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let msg = e.inner().message().trim().to_string();
        if field == "." || field.is_empty() {
            ConfigError::Other(msg)
        } else {
            ConfigError::Field { field, msg }
        }
    })
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunSpec {
    pub fn parse(text: &str) -> Result<RunSpec, ConfigError> {
        from_toml(text)
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<RunSpec, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Other(format!("{}: {e}", path.display())))?;
        let mut spec = RunSpec::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        rebase(base, &mut spec.graph.file);
        rebase(base, &mut spec.plan.file);
        rebase(base, &mut spec.plan.corpus);
        rebase(base, &mut spec.output.trace);
        rebase(base, &mut spec.output.result);
        Ok(spec)
    }
}

/// How the run graph is tied to the exploration plan.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certification {
    /// The graph is a member of the corpus the plan was certified on.
    CorpusMember { corpus: String },
    /// No corpus given: the plan was certified on the run graph itself.
    Direct { corpus: String },
}

impl Certification {
    pub fn describe(&self) -> String {
        match self {
            Certification::CorpusMember { corpus } => {
                format!("member of certified corpus {corpus}")
            }
            Certification::Direct { corpus } => {
                format!(
                    "not in a loaded corpus; plan for {corpus} certified directly on the run graph"
                )
            }
        }
    }
}

/// A validated, runnable setup.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub graph: PortGraph,
    pub proto: Protocol,
    /// `max_rounds` is always filled in.
    pub cfg: RunConfig,
    pub certification: Certification,
    pub rel_scale: u64,
    pub output: OutputSpec,
}

fn resolve_graph(spec: &GraphSpec) -> Result<PortGraph, ConfigError> {
    match (&spec.file, spec.kind, spec.n) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => Err(field_err(
            "graph.file",
            "give either a file or kind/n, not both",
        )),
        (Some(path), None, None) => {
            graph_io::load(path).map_err(|e| field_err("graph.file", e.to_string()))
        }
        (None, Some(kind), Some(n)) => PortGraph::generate(kind.into(), n, spec.seed)
            .map_err(|e| field_err("graph.n", e.to_string())),
        (None, None, _) => Err(field_err(
            "graph.kind",
            "missing graph kind (or graph.file)",
        )),
        (None, Some(_), None) => Err(field_err("graph.n", "missing node count")),
    }
}

fn resolve_plan(
    spec: &PlanSpec,
    graph: &PortGraph,
) -> Result<(ExplorationPlan, Certification), ConfigError> {
    let (plan, corpus) = match (&spec.builtin, &spec.file) {
        (Some(_), Some(_)) => {
            return Err(field_err(
                "plan.file",
                "give either plan.builtin or plan.file, not both",
            ))
        }
        (None, None) => return Err(field_err("plan", "missing plan.builtin or plan.file")),
        (Some(name), None) => {
            let plan = graph_io::builtin_plan(name).ok_or_else(|| {
                field_err(
                    "plan.builtin",
                    format!("no certified plan for corpus `{name}`"),
                )
            })?;
            let corpus = graph_io::builtin_corpus(name)
                .unwrap()
                .into_iter()
                .map(|(_, g)| g)
                .collect();
            (plan.clone(), Some(corpus))
        }
        (None, Some(path)) => {
            if !path.exists() {
                let corpus = spec.corpus.as_deref().unwrap_or(path.as_path());
                let msg = format!(
                    "no certified plan for corpus `{}` ({} not found)",
                    corpus.display(),
                    path.display()
                );
                return Err(field_err("plan.file", msg));
            }
            let plan = plan_io::load(path).map_err(|e| field_err("plan.file", e.to_string()))?;
            let corpus = match &spec.corpus {
                Some(dir) => Some(
                    graph_io::load_corpus(dir)
                        .map_err(|e| field_err("plan.corpus", e.to_string()))?,
                ),
                None => None,
            };
            (plan, corpus)
        }
    };
    if graph.node_count() > plan.max_nodes {
        let msg = format!(
            "graph has {} nodes but the plan covers at most {}",
            graph.node_count(),
            plan.max_nodes
        );
        return Err(field_err("graph", msg));
    }
    let name = plan.corpus_id.clone();
    let cert = match corpus {
        Some(c) if c.contains(graph) => Certification::CorpusMember { corpus: name },
        Some(_) => {
            return Err(field_err(
                "graph",
                format!("graph is not in corpus `{name}`, which certifies the plan"),
            ))
        }
        None => Certification::Direct { corpus: name },
    };
    match certify(
        &plan.offsets[..plan.t_ex],
        std::slice::from_ref(graph),
        plan.max_nodes,
    ) {
        Ok(_) => Ok((plan, cert)),
        Err(e) => Err(field_err(
            "graph",
            format!("plan does not explore this graph within t_ex: {e}"),
        )),
    }
}

pub fn resolve(spec: &RunSpec) -> Result<Resolved, ConfigError> {
    let graph = resolve_graph(&spec.graph)?;
    let (plan, certification) = resolve_plan(&spec.plan, &graph)?;
    if spec.t_ini == 0 {
        return Err(field_err("t_ini", "must be at least 1"));
    }
    if spec.rel_scale == 0 {
        return Err(field_err("rel_scale", "must be at least 1"));
    }
    let (k, f) = (spec.agents.k, spec.adversary.f);
    if k == 0 {
        return Err(field_err("agents.k", "need at least one agent"));
    }
    if f >= k {
        return Err(field_err(
            "adversary.f",
            format!("f = {f} leaves no good agent among k = {k}"),
        ));
    }
    if spec.bound_check && k < 9 * f + 8 {
        return Err(field_err(
            "adversary.f",
            format!("k = {k} is below 9f+8 = {}", 9 * f + 8),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ids = match (&spec.agents.ids, spec.agents.id_range) {
        (Some(_), Some(_)) => {
            return Err(field_err(
                "agents.id_range",
                "give either ids or id_range, not both",
            ))
        }
        (Some(ids), None) => {
            if ids.len() != k {
                return Err(field_err(
                    "agents.ids",
                    format!("{} IDs listed for k = {k}", ids.len()),
                ));
            }
            if ids.contains(&0) {
                return Err(field_err("agents.ids", "IDs must be positive"));
            }
            if ids.iter().collect::<BTreeSet<_>>().len() != k {
                return Err(field_err("agents.ids", "IDs must be distinct"));
            }
            ids.clone()
        }
        (None, range) => {
            let [lo, hi] = range.unwrap_or(DEFAULT_ID_RANGE);
            if lo == 0 || hi <= lo || hi - lo < k as u64 {
                return Err(field_err(
                    "agents.id_range",
                    format!("[{lo}, {hi}) cannot hold {k} distinct positive IDs"),
                ));
            }
            rand::seq::index::sample(&mut rng, (hi - lo) as usize, k)
                .into_iter()
                .map(|i| lo + i as u64)
                .collect()
        }
    };

    let n = graph.node_count();
    let nodes: Vec<usize> = match &spec.agents.nodes {
        Some(nodes) => {
            if nodes.len() != k {
                return Err(field_err(
                    "agents.nodes",
                    format!("{} nodes listed for k = {k}", nodes.len()),
                ));
            }
            if let Some(bad) = nodes.iter().find(|&&v| v >= n) {
                return Err(field_err(
                    "agents.nodes",
                    format!("node {bad} is not in a graph of {n} nodes"),
                ));
            }
            nodes.clone()
        }
        None => (0..k).map(|_| rng.random_range(0..n)).collect(),
    };

    let byz_ids: Vec<u64> = match &spec.adversary.byzantine_ids {
        Some(b) => {
            if b.len() != f {
                return Err(field_err(
                    "adversary.byzantine_ids",
                    format!("{} IDs listed for f = {f}", b.len()),
                ));
            }
            if let Some(x) = b.iter().find(|x| !ids.contains(x)) {
                return Err(field_err(
                    "adversary.byzantine_ids",
                    format!("{x} is not an agent ID"),
                ));
            }
            if b.iter().collect::<BTreeSet<_>>().len() != f {
                return Err(field_err("adversary.byzantine_ids", "IDs must be distinct"));
            }
            b.clone()
        }
        None => ids[..f].to_vec(),
    };
    let strategies: Vec<StrategyName> = match (&spec.adversary.strategies, spec.adversary.strategy)
    {
        (Some(_), Some(_)) => {
            return Err(field_err(
                "adversary.strategies",
                "give either strategy or strategies",
            ))
        }
        (Some(list), None) => {
            if list.len() != f {
                return Err(field_err(
                    "adversary.strategies",
                    format!("{} strategies for f = {f}", list.len()),
                ));
            }
            list.clone()
        }
        (None, s) => vec![s.unwrap_or_default(); f],
    };

    let mut cfg = RunConfig {
        good: Vec::new(),
        byzantine: Vec::new(),
        seed: spec.seed,
        max_rounds: None,
    };
    for (&id, &node) in ids.iter().zip(&nodes) {
        match byz_ids.iter().position(|&b| b == id) {
            Some(j) => cfg.byzantine.push(ByzSpec {
                id,
                node,
                strategy: strategies[j].into(),
            }),
            None => cfg.good.push((id, node)),
        }
    }
    cfg.byzantine
        .sort_by_key(|b| byz_ids.iter().position(|&x| x == b.id));

    let mut proto = Protocol::new(plan, spec.rel_scale, spec.pbc_mode.into());
    proto.t_ini = spec.t_ini;
    let max_rounds = match spec.max_rounds {
        Some(0) => return Err(field_err("max_rounds", "must be positive")),
        Some(m) => m,
        None => default_max_rounds(&proto, &cfg),
    };
    cfg.max_rounds = Some(max_rounds);
    Ok(Resolved {
        graph,
        proto,
        cfg,
        certification,
        rel_scale: spec.rel_scale,
        output: spec.output.clone(),
    })
}
