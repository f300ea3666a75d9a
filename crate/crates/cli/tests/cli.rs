use std::path::Path;
use std::process::{Command, Output};

use byzgather::cli::{EXIT_CONFIG, EXIT_NOT_GATHERED, EXIT_OK, EXIT_VIOLATION};

const RUN: &str =
    "seed = 11\n[graph]\nkind = \"ring\"\nn = 3\n[agents]\nk = 2\nid_range = [1, 64]\n";

fn byzgather(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_byzgather"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn code(o: &Output) -> u8 {
    o.status.code().unwrap() as u8
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_replay_and_invariants() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), RUN).unwrap();
    let o = byzgather(
        &[
            "run", "run.toml", "--trace", "t.trace", "--result", "r.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("gathered=true "), "{}", stdout(&o));
    let result: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(result["gathered"], true);
    assert_eq!(result["k"], 2);
    assert_eq!(
        result["deviations"]["corpus_certification"],
        "member of certified corpus small"
    );

    let o = byzgather(&["replay", "t.trace"], dir.path());
    assert_eq!(code(&o), EXIT_OK);
    assert!(stdout(&o).starts_with("verified: "), "{}", stdout(&o));

    let o = byzgather(&["invariants", "t.trace"], dir.path());
    assert_eq!(code(&o), EXIT_OK);
    assert!(stdout(&o).contains("cycle-alignment"));

    let text = std::fs::read_to_string(dir.path().join("t.trace")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut f: Vec<String> = lines[100].split(',').map(String::from).collect();
    f[2] = if f[2] == "2" { "1".into() } else { "2".into() };
    lines[100] = f.join(",");
    std::fs::write(dir.path().join("bad.trace"), lines.join("\n") + "\n").unwrap();
    let o = byzgather(&["replay", "bad.trace"], dir.path());
    assert_eq!(code(&o), EXIT_VIOLATION);
    assert!(
        stdout(&o).starts_with("diverged at line 101 "),
        "{}",
        stdout(&o)
    );
}

#[test]
fn digest_trace_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), RUN).unwrap();
    let o = byzgather(
        &[
            "run",
            "run.toml",
            "--trace",
            "d.trace",
            "--trace-mode",
            "digest",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    let o = byzgather(&["replay", "d.trace"], dir.path());
    assert_eq!(code(&o), EXIT_OK, "{}", stdout(&o));
    let o = byzgather(
        &[
            "run",
            "run.toml",
            "--trace",
            "e.trace",
            "--trace-mode",
            "digest",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), EXIT_OK);
    assert_eq!(
        std::fs::read(dir.path().join("d.trace")).unwrap(),
        std::fs::read(dir.path().join("e.trace")).unwrap()
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), RUN).unwrap();
    let o = byzgather(&["run", "run.toml", "--max-rounds", "100"], dir.path());
    assert_eq!(code(&o), EXIT_NOT_GATHERED);
    assert!(
        stdout(&o).starts_with("gathered=false rounds=100 "),
        "{}",
        stdout(&o)
    );

    std::fs::write(
        dir.path().join("bad.toml"),
        RUN.replace("k = 2", "k = 2\nkk = 1"),
    )
    .unwrap();
    let o = byzgather(&["run", "bad.toml"], dir.path());
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(stderr(&o).contains("agents.kk"), "{}", stderr(&o));

    let o = byzgather(&["run", "missing.toml"], dir.path());
    assert_eq!(code(&o), EXIT_CONFIG);

    let bound = format!("bound_check = true\n{}[adversary]\nf = 1\n", RUN);
    std::fs::write(dir.path().join("bound.toml"), bound).unwrap();
    let o = byzgather(&["run", "bound.toml"], dir.path());
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(
        stderr(&o).contains("k = 2 is below 9f+8 = 17"),
        "{}",
        stderr(&o)
    );

    // Below the bound a lone liar passes as a reliable group.
    let below = "seed = 0\n[graph]\nkind = \"ring\"\nn = 4\n[agents]\nk = 4\nid_range = [1, 64]\n\
                 [adversary]\nf = 1\nstrategy = \"liar\"\n";
    std::fs::write(dir.path().join("below.toml"), below).unwrap();
    let o = byzgather(&["run", "below.toml"], dir.path());
    assert_eq!(code(&o), EXIT_VIOLATION);
    assert!(
        stdout(&o).contains("reliable-group-exists violated"),
        "{}",
        stdout(&o)
    );

    let o = byzgather(&["replay", "missing.trace"], dir.path());
    assert_eq!(code(&o), EXIT_CONFIG);
}

#[test]
fn sweep_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let spec = "kf = [[2, 0], [3, 0]]\nseeds = [0, 2]\nid_range = [1, 64]\n[graphs]\nkinds = [\"ring\"]\nn = [3, 5]\n";
    std::fs::write(dir.path().join("s.toml"), spec).unwrap();
    let o = byzgather(
        &[
            "sweep",
            "s.toml",
            "--csv",
            "out.csv",
            "--summary",
            "sum.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2);
    let sum: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("sum.json")).unwrap()).unwrap();
    assert_eq!(sum["runs"], 8);
    assert_eq!(sum["failures"], 0);
    assert!(stderr(&o).contains("c = "), "{}", stderr(&o));
}

#[test]
fn graph_and_explore_commands() {
    let dir = tempfile::tempdir().unwrap();
    let o = byzgather(
        &["graph", "gen", "--builtin", "small", "--out-dir", "corpus"],
        dir.path(),
    );
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    assert_eq!(
        std::fs::read_dir(dir.path().join("corpus"))
            .unwrap()
            .count(),
        72
    );

    let o = byzgather(
        &[
            "graph",
            "gen",
            "--kind",
            "random_connected",
            "--n",
            "6",
            "--seed",
            "2",
            "-o",
            "g.graph",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    let o = byzgather(
        &["graph", "validate", "g.graph", "corpus/3_0.graph"],
        dir.path(),
    );
    assert_eq!(code(&o), EXIT_OK, "{}", stdout(&o));
    std::fs::write(dir.path().join("bad.graph"), "2\n1 1 2\n1 0 1\n").unwrap();
    let o = byzgather(&["graph", "validate", "bad.graph"], dir.path());
    assert_ne!(code(&o), EXIT_OK);

    let o = byzgather(
        &[
            "explore",
            "build",
            "--corpus",
            "corpus",
            "--max-nodes",
            "8",
            "-o",
            "p.plan",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    let o = byzgather(
        &[
            "explore", "certify", "--plan", "p.plan", "--corpus", "corpus",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), EXIT_OK, "{}", stdout(&o));
    assert!(
        stdout(&o).starts_with("certified: corpus corpus (72 graphs)"),
        "{}",
        stdout(&o)
    );

    // A plan certified on rings only does not cover the whole corpus.
    std::fs::create_dir(dir.path().join("rings")).unwrap();
    for n in 3..=8 {
        let name = format!("{n}_0.graph");
        std::fs::copy(
            dir.path().join("corpus").join(&name),
            dir.path().join("rings").join(&name),
        )
        .unwrap();
    }
    let o = byzgather(
        &[
            "explore",
            "build",
            "--corpus",
            "rings",
            "--max-nodes",
            "8",
            "-o",
            "r.plan",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    let o = byzgather(
        &[
            "explore", "certify", "--plan", "r.plan", "--corpus", "corpus",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), EXIT_VIOLATION, "{}", stdout(&o));
}
