//! Experiment sweeps over (k, f) pairs, strategies, graphs and seeds.
//!
//! ```toml
//! kf = [[8, 0], [17, 1], [26, 2]]
//! strategies = ["silent", "liar"]
//! seeds = [0, 25]                # half-open range
//! id_range = [1, 256]
//!
//! [graphs]
//! kinds = ["ring", "random_tree", "random_connected"]
//! n = [3, 4, 5, 6, 7, 8]
//! seeds = [0, 1, 2, 3]
//! cycle = true
//! ```
//!
//! CSV columns, in order: `cell, k, f, strategy, graph, seed, pbc_mode,
//! gathered, rounds, t_rel_max_good, lambda_good, pbc_phases,
//! first_group_round, normalized, normalized_phase, invariants_ok, pbc_ok,
//! error`. `normalized` is `rounds / (max(1,f) * t_rel_max_good)`,
//! `normalized_phase` is `rounds / (pbc_phases * t_rel_max_good)`, and
//! `graph` is `kind:n:seed`. Failed cells keep their row with `error` set.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{
    from_toml, resolve, AdversarySpec, AgentSpec, ConfigError, GraphSpec, KindName, ModeName,
    OutputSpec, PlanSpec, RunSpec, StrategyName,
};
use crate::harness::{execute, ResultRecord};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphMatrix {
    pub kinds: Vec<KindName>,
    pub n: Vec<usize>,
    #[serde(default = "zero_seed")]
    pub seeds: Vec<u64>,
    /// Run `j` uses graph `j mod |graphs|` instead of every graph.
    #[serde(default)]
    pub cycle: bool,
}

fn zero_seed() -> Vec<u64> {
    vec![0]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub kf: Vec<[usize; 2]>,
    /// Used for cells with f > 0; default all six.
    pub strategies: Option<Vec<StrategyName>>,
    /// Half-open range of run seeds.
    pub seeds: [u64; 2],
    pub graphs: GraphMatrix,
    pub id_range: Option<[u64; 2]>,
    #[serde(default)]
    pub pbc_mode: ModeName,
    pub t_ini: Option<u64>,
    pub rel_scale: Option<u64>,
    pub max_rounds: Option<u64>,
    #[serde(default)]
    pub bound_check: bool,
    #[serde(default)]
    pub plan: PlanSpec,
    pub csv: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

impl SweepSpec {
    pub fn parse(text: &str) -> Result<SweepSpec, ConfigError> {
        from_toml(text)
    }

    pub fn load(path: &Path) -> Result<SweepSpec, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Other(format!("{}: {e}", path.display())))?;
        let mut spec = SweepSpec::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let paths = [
            &mut spec.plan.file,
            &mut spec.plan.corpus,
            &mut spec.csv,
            &mut spec.summary,
        ];
        for path in paths.into_iter().flatten() {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        Ok(spec)
    }

    fn graphs(&self) -> Vec<(KindName, usize, u64)> {
        let g = &self.graphs;
        let mut out = Vec::new();
        for &n in &g.n {
            for &seed in &g.seeds {
                for &kind in &g.kinds {
                    out.push((kind, n, seed));
                }
            }
        }
        out
    }

    /// Every cell's run configuration, in cell order.
    pub fn cells(&self) -> Result<Vec<(Cell, RunSpec)>, ConfigError> {
        let graphs = self.graphs();
        if self.kf.is_empty() {
            return Err(ConfigError::Field {
                field: "kf".into(),
                msg: "need at least one (k, f) pair".into(),
            });
        }
        if graphs.is_empty() {
            return Err(ConfigError::Field {
                field: "graphs".into(),
                msg: "no graphs selected".into(),
            });
        }
        if self.seeds[1] <= self.seeds[0] {
            return Err(ConfigError::Field {
                field: "seeds".into(),
                msg: "empty seed range".into(),
            });
        }
        let strategies = self
            .strategies
            .clone()
            .unwrap_or_else(|| StrategyName::ALL.to_vec());
        let mut out = Vec::new();
        let mut run = 0usize;
        for &[k, f] in &self.kf {
            let strats: Vec<Option<StrategyName>> = if f == 0 {
                vec![None]
            } else {
                strategies.iter().copied().map(Some).collect()
            };
            for strategy in strats {
                for seed in self.seeds[0]..self.seeds[1] {
                    let picked: Vec<_> = if self.graphs.cycle {
                        vec![graphs[run % graphs.len()]]
                    } else {
                        graphs.clone()
                    };
                    run += 1;
                    for (kind, n, gseed) in picked {
                        let cell = Cell {
                            index: out.len(),
                            k,
                            f,
                            strategy,
                            graph: (kind, n, gseed),
                            seed,
                        };
                        out.push((cell, self.run_spec(k, f, strategy, (kind, n, gseed), seed)));
                    }
                }
            }
        }
        Ok(out)
    }

    fn run_spec(
        &self,
        k: usize,
        f: usize,
        strategy: Option<StrategyName>,
        g: (KindName, usize, u64),
        seed: u64,
    ) -> RunSpec {
        RunSpec {
            seed,
            max_rounds: self.max_rounds,
            pbc_mode: self.pbc_mode,
            t_ini: self
                .t_ini
                .unwrap_or(byzgather_core::agent::Protocol::DEFAULT_T_INI),
            rel_scale: self.rel_scale.unwrap_or(1),
            bound_check: self.bound_check,
            graph: GraphSpec {
                kind: Some(g.0),
                n: Some(g.1),
                seed: g.2,
                file: None,
            },
            plan: self.plan.clone(),
            agents: AgentSpec {
                k,
                ids: None,
                id_range: self.id_range,
                nodes: None,
            },
            adversary: AdversarySpec {
                f,
                strategy,
                strategies: None,
                byzantine_ids: None,
            },
            output: OutputSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub index: usize,
    pub k: usize,
    pub f: usize,
    pub strategy: Option<StrategyName>,
    pub graph: (KindName, usize, u64),
    pub seed: u64,
}

fn name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub cell: usize,
    pub k: usize,
    pub f: usize,
    pub strategy: String,
    pub graph: String,
    pub seed: u64,
    pub pbc_mode: String,
    pub gathered: bool,
    pub rounds: u64,
    pub t_rel_max_good: u64,
    pub lambda_good: u32,
    pub pbc_phases: Option<u32>,
    pub first_group_round: Option<u64>,
    pub normalized: f64,
    pub normalized_phase: Option<f64>,
    pub invariants_ok: bool,
    pub pbc_ok: bool,
    pub error: String,
}

impl Row {
    pub fn new(cell: &Cell, mode: ModeName) -> Row {
        let (kind, n, gseed) = cell.graph;
        Row {
            cell: cell.index,
            k: cell.k,
            f: cell.f,
            strategy: cell.strategy.map_or("none".into(), |s| name(&s)),
            graph: format!("{}:{n}:{gseed}", name(&kind)),
            seed: cell.seed,
            pbc_mode: name(&mode),
            gathered: false,
            rounds: 0,
            t_rel_max_good: 0,
            lambda_good: 0,
            pbc_phases: None,
            first_group_round: None,
            normalized: 0.0,
            normalized_phase: None,
            invariants_ok: false,
            pbc_ok: false,
            error: String::new(),
        }
    }

    pub fn fill(&mut self, r: &ResultRecord) {
        self.gathered = r.gathered;
        self.rounds = r.rounds_elapsed;
        self.t_rel_max_good = r.t_rel_max_good;
        self.lambda_good = r.lambda_good;
        self.pbc_phases = r.pbc_phases;
        self.first_group_round = r.first_group_round;
        self.normalized =
            r.rounds_elapsed as f64 / (self.f.max(1) as f64 * r.t_rel_max_good as f64);
        self.normalized_phase = r
            .pbc_phases
            .map(|p| r.rounds_elapsed as f64 / (p as f64 * r.t_rel_max_good as f64));
        self.invariants_ok = r.invariants_ok;
        self.pbc_ok = r.pbc_audit.ok();
    }

    pub fn ok(&self) -> bool {
        self.error.is_empty() && self.gathered && self.invariants_ok && self.pbc_ok
    }
}

/// Runs one cell the way `run` does and returns its row and result.
pub fn run_cell(cell: &Cell, spec: &RunSpec) -> (Row, Option<ResultRecord>) {
    let mut row = Row::new(cell, spec.pbc_mode);
    let resolved = match resolve(spec) {
        Ok(r) => r,
        Err(e) => {
            row.error = e.to_string();
            return (row, None);
        }
    };
    match execute(&resolved, &mut byzgather_core::trace::NullSink) {
        Ok(out) => {
            let rec = ResultRecord::new(&resolved, &out);
            row.fill(&rec);
            (row, Some(rec))
        }
        Err(e) => {
            row.error = e.to_string();
            (row, None)
        }
    }
}

/// Scaling statistics for one value of f.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FRow {
    pub f: usize,
    pub runs: usize,
    pub failures: usize,
    pub max_rounds: u64,
    pub mean_rounds: f64,
    /// max rounds / (max(1,f) * t_rel(max good id)).
    pub c: f64,
    /// max rounds / (pbc_phases * t_rel(max good id)).
    pub c_phase: Option<f64>,
    /// max first_group_round / (max(1,f) * t_rel(max good id)).
    pub c_group: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub errors: usize,
    pub failures: usize,
    pub by_f: Vec<FRow>,
    pub c: f64,
    pub c_phase: Option<f64>,
    pub c_group: Option<f64>,
    /// Largest over smallest per-f constant.
    pub c_spread: f64,
    pub c_phase_spread: Option<f64>,
}

fn fmax(it: impl Iterator<Item = f64>) -> Option<f64> {
    it.fold(None, |m, x| Some(m.map_or(x, |m: f64| m.max(x))))
}

fn spread(xs: &[f64]) -> f64 {
    let hi = xs.iter().copied().fold(f64::MIN, f64::max);
    let lo = xs.iter().copied().fold(f64::MAX, f64::min);
    if xs.is_empty() || lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn summarize(rows: &[Row]) -> Summary {
    let mut fs: Vec<usize> = rows.iter().map(|r| r.f).collect();
    fs.sort_unstable();
    fs.dedup();
    let by_f: Vec<FRow> = fs
        .iter()
        .map(|&f| {
            let ok: Vec<&Row> = rows
                .iter()
                .filter(|r| r.f == f && r.error.is_empty())
                .collect();
            let group = |r: &&Row| {
                r.first_group_round
                    .map(|g| g as f64 / (f.max(1) as f64 * r.t_rel_max_good as f64))
            };
            FRow {
                f,
                runs: rows.iter().filter(|r| r.f == f).count(),
                failures: rows.iter().filter(|r| r.f == f && !r.ok()).count(),
                max_rounds: ok.iter().map(|r| r.rounds).max().unwrap_or(0),
                mean_rounds: ok.iter().map(|r| r.rounds as f64).sum::<f64>()
                    / ok.len().max(1) as f64,
                c: fmax(ok.iter().map(|r| r.normalized)).unwrap_or(0.0),
                c_phase: fmax(ok.iter().filter_map(|r| r.normalized_phase)),
                c_group: fmax(ok.iter().filter_map(group)),
            }
        })
        .collect();
    let cs: Vec<f64> = by_f.iter().map(|r| r.c).collect();
    let cps: Vec<f64> = by_f.iter().filter_map(|r| r.c_phase).collect();
    Summary {
        runs: rows.len(),
        errors: rows.iter().filter(|r| !r.error.is_empty()).count(),
        failures: rows.iter().filter(|r| !r.ok()).count(),
        c: fmax(cs.iter().copied()).unwrap_or(0.0),
        c_phase: fmax(cps.iter().copied()),
        c_group: fmax(by_f.iter().filter_map(|r| r.c_group)),
        c_spread: spread(&cs),
        c_phase_spread: (cps.len() == by_f.len()).then(|| spread(&cps)),
        by_f,
    }
}

pub struct SweepReport {
    pub rows: Vec<Row>,
    pub summary: Summary,
}

/// Runs every cell in parallel; rows come back in cell order.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepReport, ConfigError> {
    let cells = spec.cells()?;
    let rows: Vec<Row> = cells
        .par_iter()
        .map(|(cell, rs)| run_cell(cell, rs).0)
        .collect();
    let summary = summarize(&rows);
    Ok(SweepReport { rows, summary })
}

pub fn write_csv<W: std::io::Write>(out: W, rows: &[Row]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn summary_table(s: &Summary) -> String {
    let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.2}"));
    let mut out =
        String::from("f  runs  failures  max_rounds  mean_rounds  c       c_phase  c_group\n");
    for r in &s.by_f {
        out += &format!(
            "{:<2} {:<5} {:<9} {:<11} {:<12.0} {:<7.2} {:<8} {}\n",
            r.f,
            r.runs,
            r.failures,
            r.max_rounds,
            r.mean_rounds,
            r.c,
            opt(r.c_phase),
            opt(r.c_group)
        );
    }
    out += &format!(
        "c = {:.2} (spread {:.2}), c_phase = {} (spread {}), c_group = {}, errors = {}\n",
        s.c,
        s.c_spread,
        opt(s.c_phase),
        opt(s.c_phase_spread),
        opt(s.c_group),
        s.errors
    );
    out
}
