//! Command-line front end.
//!
//! Exit codes: 0 ok, 1 gathering failed, 2 invariant violation, replay
//! divergence or failed check, 3 configuration or input error. A run that
//! both fails to gather and violates an invariant exits with 2.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use byzgather_core::explore::{build_plan, certify};
use byzgather_core::graph::PortGraph;
use byzgather_core::trace::NullSink;
use clap::{Args, Parser, Subcommand};

use crate::config::{resolve, KindName, ModeName, RunSpec, TraceMode};
use crate::harness::{execute, ResultRecord};
use crate::replay::{check_invariants, replay, Verdict};
use crate::sweep::{run_sweep, summary_table, write_csv, SweepSpec};
use crate::tracefile::{Header, TraceWriter};
use crate::{graph_io, plan_io};

pub const EXIT_OK: u8 = 0;
pub const EXIT_NOT_GATHERED: u8 = 1;
pub const EXIT_VIOLATION: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "byzgather",
    version,
    about = "Byzantine-tolerant gathering simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one simulation from a TOML config.
    Run(RunArgs),
    /// Run a matrix of configurations and fit the round-bound constant.
    Sweep(SweepArgs),
    /// Re-execute a trace and report the first divergence.
    Replay { trace: PathBuf },
    /// Evaluate the stage-machine invariants over a trace.
    Invariants { trace: PathBuf },
    /// Build or certify exploration plans.
    #[command(subcommand)]
    Explore(ExploreCmd),
    /// Generate or validate graph files.
    #[command(subcommand)]
    Graph(GraphCmd),
}

#[derive(Args, Debug)]
pub struct RunArgs {
    pub config: PathBuf,
    /// Overrides the config's seed (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's round cap (default derived from t_rel).
    #[arg(long)]
    pub max_rounds: Option<u64>,
    /// Overrides the config's consensus mode (default distributed).
    #[arg(long, value_enum)]
    pub pbc_mode: Option<ModeName>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub trace_mode: Option<TraceMode>,
    #[arg(long)]
    pub result: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    pub spec: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    pub max_rounds: Option<u64>,
    #[arg(long, value_enum)]
    pub pbc_mode: Option<ModeName>,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
pub struct CorpusArg {
    /// Built-in corpus name.
    #[arg(long)]
    pub builtin: Option<String>,
    /// Corpus directory of `<n>_<seed>.graph` files.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum ExploreCmd {
    /// Search for a plan certified on a corpus.
    Build {
        #[command(flatten)]
        corpus: CorpusArg,
        #[arg(long)]
        max_nodes: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        budget: usize,
        /// Corpus name stored in the plan (default: the corpus name).
        #[arg(long)]
        id: Option<String>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Check that a plan explores every graph of a corpus within its t_ex.
    Certify {
        #[arg(long)]
        plan: PathBuf,
        #[command(flatten)]
        corpus: CorpusArg,
    },
}

#[derive(Subcommand, Debug)]
pub enum GraphCmd {
    /// Write one generated graph, or a whole built-in corpus.
    Gen {
        #[arg(long, value_parser = parse_kind, required_unless_present = "builtin")]
        kind: Option<KindName>,
        #[arg(long, required_unless_present = "builtin")]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, conflicts_with_all = ["kind", "n"], requires = "out_dir")]
        builtin: Option<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Output file (default stdout).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Check graph files for port-labeling and connectivity errors.
    Validate { files: Vec<PathBuf> },
}

fn parse_kind(s: &str) -> Result<KindName, String> {
    crate::config::from_toml::<std::collections::BTreeMap<String, KindName>>(&format!("k = {s:?}"))
        .map(|m| m["k"])
        .map_err(|_| {
            format!("unknown graph kind {s:?} (ring, complete, random_tree, random_connected)")
        })
}

fn fail(code: u8, msg: impl std::fmt::Display) -> u8 {
    eprintln!("error: {msg}");
    code
}

pub fn main(cli: Cli) -> u8 {
    match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Replay { trace } => cmd_replay(&trace),
        Command::Invariants { trace } => cmd_invariants(&trace),
        Command::Explore(e) => cmd_explore(e),
        Command::Graph(g) => cmd_graph(g),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, v)?;
    writeln!(w)?;
    w.flush()
}

fn cmd_run(a: RunArgs) -> u8 {
    let mut spec = match RunSpec::load(&a.config) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    spec.seed = a.seed.unwrap_or(spec.seed);
    spec.max_rounds = a.max_rounds.or(spec.max_rounds);
    spec.pbc_mode = a.pbc_mode.unwrap_or(spec.pbc_mode);
    spec.output.trace = a.trace.or(spec.output.trace);
    spec.output.trace_mode = a.trace_mode.unwrap_or(spec.output.trace_mode);
    spec.output.result = a.result.or(spec.output.result);
    let r = match resolve(&spec) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let out = match &r.output.trace {
        Some(path) => {
            let file = match File::create(path) {
                Ok(f) => BufWriter::new(f),
                Err(e) => return fail(EXIT_CONFIG, format!("{}: {e}", path.display())),
            };
            let mut w = match TraceWriter::new(file, &Header::new(&r, r.output.trace_mode)) {
                Ok(w) => w,
                Err(e) => return fail(EXIT_CONFIG, format!("{}: {e}", path.display())),
            };
            let out = execute(&r, &mut w);
            if let Ok(o) = &out {
                if let Err(e) = w.finish(o.rounds_executed) {
                    return fail(EXIT_CONFIG, format!("{}: {e}", path.display()));
                }
            }
            out
        }
        None => execute(&r, &mut NullSink),
    };
    let out = match out {
        Ok(o) => o,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let rec = ResultRecord::new(&r, &out);
    if let Some(path) = &r.output.result {
        if let Err(e) = write_json(path, &rec) {
            return fail(EXIT_CONFIG, format!("{}: {e}", path.display()));
        }
    }
    println!(
        "gathered={} rounds={} k={} f={} t_rel_max_good={} pbc_phases={} first_group_round={} invariants={} pbc_audit={}",
        rec.gathered,
        rec.rounds_elapsed,
        rec.k,
        rec.f,
        rec.t_rel_max_good,
        rec.pbc_phases.map_or("-".into(), |p| p.to_string()),
        rec.first_group_round.map_or("-".into(), |g| g.to_string()),
        if rec.invariants_ok { "pass" } else { "FAIL" },
        if rec.pbc_audit.ok() { "pass" } else { "FAIL" },
    );
    for inv in rec.invariants.iter().filter(|i| i.passed == Some(false)) {
        println!(
            "  {} violated at round {:?}: {}",
            inv.name,
            inv.first_failure_round,
            inv.note.as_deref().unwrap_or("")
        );
    }
    for v in &rec.pbc_audit.violations {
        println!("  consensus: {v}");
    }
    if !rec.invariants_ok || !rec.pbc_audit.ok() {
        EXIT_VIOLATION
    } else if !rec.gathered {
        EXIT_NOT_GATHERED
    } else {
        EXIT_OK
    }
}

fn cmd_sweep(a: SweepArgs) -> u8 {
    let mut spec = match SweepSpec::load(&a.spec) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    spec.max_rounds = a.max_rounds.or(spec.max_rounds);
    spec.pbc_mode = a.pbc_mode.unwrap_or(spec.pbc_mode);
    spec.csv = a.csv.or(spec.csv);
    spec.summary = a.summary.or(spec.summary);
    let report = match run_sweep(&spec) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    match &spec.csv {
        Some(path) => {
            let res = File::create(path)
                .map_err(csv::Error::from)
                .and_then(|f| write_csv(f, &report.rows));
            if let Err(e) = res {
                return fail(EXIT_CONFIG, format!("{}: {e}", path.display()));
            }
        }
        None => {
            if let Err(e) = write_csv(std::io::stdout().lock(), &report.rows) {
                return fail(EXIT_CONFIG, e);
            }
        }
    }
    if let Some(path) = &spec.summary {
        if let Err(e) = write_json(path, &report.summary) {
            return fail(EXIT_CONFIG, format!("{}: {e}", path.display()));
        }
    }
    eprint!("{}", summary_table(&report.summary));
    for r in report.rows.iter().filter(|r| !r.error.is_empty()) {
        eprintln!("cell {}: {}", r.cell, r.error);
    }
    if report
        .rows
        .iter()
        .any(|r| r.error.is_empty() && (!r.invariants_ok || !r.pbc_ok))
    {
        EXIT_VIOLATION
    } else if report.summary.failures > 0 {
        EXIT_NOT_GATHERED
    } else {
        EXIT_OK
    }
}

fn open(path: &Path) -> Result<BufReader<File>, u8> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", path.display())))
}

fn cmd_replay(trace: &Path) -> u8 {
    let input = match open(trace) {
        Ok(i) => i,
        Err(code) => return code,
    };
    match replay(input) {
        Ok(Verdict::Verified { records, rounds }) => {
            println!("verified: {records} records over {rounds} rounds");
            EXIT_OK
        }
        Ok(Verdict::VerifiedPrefix {
            records,
            last_round,
        }) => {
            let last = last_round.map_or("-".into(), |r| r.to_string());
            println!(
                "verified prefix: trace is truncated; {records} records through round {last} match"
            );
            EXIT_OK
        }
        Ok(Verdict::Diverged(d)) => {
            let round = d.round.map_or("-".into(), |r| r.to_string());
            let agent = d.agent.map_or("-".into(), |a| a.to_string());
            println!(
                "diverged at line {} (round {round}, agent {agent}): {}",
                d.line, d.what
            );
            EXIT_VIOLATION
        }
        Err(e) => fail(EXIT_CONFIG, e),
    }
}

fn cmd_invariants(trace: &Path) -> u8 {
    let input = match open(trace) {
        Ok(i) => i,
        Err(code) => return code,
    };
    let (report, complete) = match check_invariants(input) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if !complete {
        println!("warning: trace has no #end line; checked the records present");
    }
    for row in crate::harness::invariant_rows(&report) {
        let status = match row.passed {
            Some(true) => "pass".to_string(),
            Some(false) => format!("FAIL at round {}", row.first_failure_round.unwrap_or(0)),
            None => "n/a".to_string(),
        };
        let witness = row
            .witness_round
            .map_or(String::new(), |w| format!(" (witness round {w})"));
        let note = row.note.map_or(String::new(), |n| format!(": {n}"));
        println!("{:<26} {status}{witness}{note}", row.name);
    }
    if report.ok() {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    }
}

fn load_corpus(c: &CorpusArg) -> Result<(String, Vec<PortGraph>), u8> {
    match (&c.builtin, &c.corpus) {
        (Some(name), _) => match graph_io::builtin_corpus(name) {
            Some(gs) => Ok((name.clone(), gs.into_iter().map(|(_, g)| g).collect())),
            None => Err(fail(
                EXIT_CONFIG,
                format!("unknown built-in corpus `{name}`"),
            )),
        },
        (None, Some(dir)) => {
            let name = dir
                .file_name()
                .map_or("corpus".into(), |n| n.to_string_lossy().into_owned());
            graph_io::load_corpus(dir)
                .map(|gs| (name, gs))
                .map_err(|e| fail(EXIT_CONFIG, e))
        }
        (None, None) => Err(fail(EXIT_CONFIG, "give --builtin or --corpus")),
    }
}

fn cmd_explore(e: ExploreCmd) -> u8 {
    match e {
        ExploreCmd::Build {
            corpus,
            max_nodes,
            seed,
            budget,
            id,
            out,
        } => {
            let (name, graphs) = match load_corpus(&corpus) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let id = id.unwrap_or(name);
            if id.split_whitespace().count() != 1 {
                return fail(EXIT_CONFIG, "plan id must be one word");
            }
            match build_plan(max_nodes, &graphs, &id, seed, budget) {
                Ok(plan) => match plan_io::save(&out, &plan) {
                    Ok(()) => {
                        println!(
                            "plan for corpus {id}: {} graphs, t_ex = {}",
                            graphs.len(),
                            plan.t_ex
                        );
                        EXIT_OK
                    }
                    Err(e) => fail(EXIT_CONFIG, e),
                },
                Err(e) => fail(EXIT_CONFIG, e),
            }
        }
        ExploreCmd::Certify { plan, corpus } => {
            let plan = match plan_io::load(&plan) {
                Ok(p) => p,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let (name, graphs) = match load_corpus(&corpus) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match certify(&plan.offsets, &graphs, plan.max_nodes) {
                Ok(t) if t <= plan.t_ex => {
                    println!(
                        "certified: corpus {name} ({} graphs) explored within {t} <= t_ex = {}",
                        graphs.len(),
                        plan.t_ex
                    );
                    EXIT_OK
                }
                Ok(t) => {
                    println!(
                        "not certified: corpus {name} needs {t} steps > t_ex = {}",
                        plan.t_ex
                    );
                    EXIT_VIOLATION
                }
                Err(e) => {
                    println!("not certified: {e}");
                    EXIT_VIOLATION
                }
            }
        }
    }
}

fn cmd_graph(g: GraphCmd) -> u8 {
    match g {
        GraphCmd::Gen {
            kind,
            n,
            seed,
            builtin,
            out_dir,
            out,
        } => {
            if let Some(name) = builtin {
                let Some(graphs) = graph_io::builtin_corpus(&name) else {
                    return fail(EXIT_CONFIG, format!("unknown built-in corpus `{name}`"));
                };
                let dir = out_dir.expect("clap requires --out-dir");
                return match graph_io::save_corpus(&dir, &graphs) {
                    Ok(()) => {
                        println!("wrote {} graphs to {}", graphs.len(), dir.display());
                        EXIT_OK
                    }
                    Err(e) => fail(EXIT_CONFIG, e),
                };
            }
            let (kind, n) = (
                kind.expect("clap requires --kind"),
                n.expect("clap requires --n"),
            );
            let g = match PortGraph::generate(kind.into(), n, seed) {
                Ok(g) => g,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            match out {
                Some(path) => match graph_io::save(&path, &g) {
                    Ok(()) => EXIT_OK,
                    Err(e) => fail(EXIT_CONFIG, e),
                },
                None => {
                    print!("{}", graph_io::to_text(&g));
                    EXIT_OK
                }
            }
        }
        GraphCmd::Validate { files } => {
            let mut code = EXIT_OK;
            for f in &files {
                match graph_io::load(f) {
                    Ok(g) => println!(
                        "{}: ok ({} nodes, {} edges)",
                        f.display(),
                        g.node_count(),
                        g.edge_count()
                    ),
                    Err(e) => {
                        println!("{e}");
                        code = code.max(EXIT_VIOLATION);
                    }
                }
            }
            code
        }
    }
}
