use byzgather::config::{resolve, StrategyName};
use byzgather::harness::{execute, ResultRecord};
use byzgather::sweep::{run_cell, run_sweep, summarize, summary_table, write_csv, Row, SweepSpec};

const SPEC: &str = r#"
kf = [[2, 0], [3, 0], [17, 1]]
strategies = ["silent", "liar"]
seeds = [0, 2]
id_range = [1, 64]
[graphs]
kinds = ["ring", "random_tree"]
n = [3, 4]
cycle = true
"#;

#[test]
fn cells_follow_the_matrix() {
    let spec = SweepSpec::parse(SPEC).unwrap();
    let cells = spec.cells().unwrap();
    // f = 0 pairs run once per seed, f > 0 once per strategy and seed.
    assert_eq!(cells.len(), 2 + 2 + 2 * 2);
    let graphs: Vec<String> = cells
        .iter()
        .map(|(c, _)| format!("{:?}:{}", c.graph.0, c.graph.1))
        .collect();
    // Graph order is (n, seed, kind), cycled per run.
    let order = ["Ring:3", "RandomTree:3", "Ring:4", "RandomTree:4"];
    for (i, g) in graphs.iter().enumerate() {
        assert_eq!(g, order[i % 4]);
    }
    assert!(cells
        .iter()
        .filter(|(c, _)| c.f == 0)
        .all(|(c, _)| c.strategy.is_none()));
    let liar = cells
        .iter()
        .filter(|(c, _)| c.strategy == Some(StrategyName::Liar))
        .count();
    assert_eq!(liar, 2);
    assert_eq!(
        cells.iter().map(|(c, _)| c.index).collect::<Vec<_>>(),
        (0..cells.len()).collect::<Vec<_>>()
    );
}

#[test]
fn without_cycle_every_graph_runs() {
    let spec = SweepSpec::parse(&SPEC.replace("cycle = true", "")).unwrap();
    assert_eq!(spec.cells().unwrap().len(), 4 * 8);
}

#[test]
fn sweep_spec_errors() {
    let e = SweepSpec::parse(&SPEC.replace("seeds = [0, 2]", "seeds = [2, 2]"))
        .unwrap()
        .cells()
        .unwrap_err();
    assert!(e.to_string().contains("`seeds`"), "{e}");
    let e = SweepSpec::parse(&SPEC.replace("kf = [[2, 0], [3, 0], [17, 1]]", "kf = []"))
        .unwrap()
        .cells()
        .unwrap_err();
    assert!(e.to_string().contains("`kf`"), "{e}");
    let e = SweepSpec::parse(&SPEC.replace("\"liar\"", "\"sneaky\"")).unwrap_err();
    assert!(e.to_string().contains("strategies"), "{e}");
}

#[test]
fn a_cell_matches_a_direct_run() {
    let spec = SweepSpec::parse(SPEC).unwrap();
    for (cell, rs) in spec.cells().unwrap().iter().step_by(3) {
        let (row, rec) = run_cell(cell, rs);
        let r = resolve(rs).unwrap();
        let out = execute(&r, &mut byzgather_core::trace::NullSink).unwrap();
        let direct = ResultRecord::new(&r, &out);
        assert_eq!(rec.as_ref(), Some(&direct));
        assert_eq!(row.rounds, direct.rounds_elapsed);
        assert_eq!(row.gathered, direct.gathered);
        assert!(row.ok(), "{row:?}");
    }
}

#[test]
fn same_spec_same_rows() {
    let spec = SweepSpec::parse(SPEC).unwrap();
    let a = run_sweep(&spec).unwrap();
    let b = run_sweep(&spec).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.summary.by_f.len(), 2);
    assert_eq!(a.summary.failures, 0);
    let mut csv = Vec::new();
    write_csv(&mut csv, &a.rows).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "cell,k,f,strategy,graph,seed,pbc_mode,gathered,rounds,t_rel_max_good,lambda_good,pbc_phases,\
         first_group_round,normalized,normalized_phase,invariants_ok,pbc_ok,error"
    );
    assert_eq!(text.lines().count(), a.rows.len() + 1);
    assert!(text
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("0,2,0,none,ring:3:0,0,distributed,true,"));
}

fn row(f: usize, rounds: u64, t_rel: u64, phases: u32, group: u64) -> Row {
    Row {
        cell: 0,
        k: 8,
        f,
        strategy: "none".into(),
        graph: "ring:3:0".into(),
        seed: 0,
        pbc_mode: "distributed".into(),
        gathered: true,
        rounds,
        t_rel_max_good: t_rel,
        lambda_good: 8,
        pbc_phases: Some(phases),
        first_group_round: Some(group),
        normalized: rounds as f64 / (f.max(1) as f64 * t_rel as f64),
        normalized_phase: Some(rounds as f64 / (phases as f64 * t_rel as f64)),
        invariants_ok: true,
        pbc_ok: true,
        error: String::new(),
    }
}

#[test]
fn summary_has_one_row_per_f() {
    let mut rows = vec![
        row(0, 1000, 10, 10, 800),
        row(0, 1500, 10, 10, 900),
        row(1, 2000, 10, 10, 1000),
        row(2, 3000, 10, 15, 2000),
        row(2, 2000, 10, 10, 1000),
    ];
    rows[4].gathered = false;
    let s = summarize(&rows);
    assert_eq!(
        s.by_f.iter().map(|r| r.f).collect::<Vec<_>>(),
        vec![0, 1, 2]
    );
    assert_eq!(s.runs, 5);
    assert_eq!(s.failures, 1);
    // Per-f constants by hand: f=0 -> 1500/10, f=1 -> 2000/10, f=2 -> 3000/20.
    let cs: Vec<f64> = s.by_f.iter().map(|r| r.c).collect();
    assert_eq!(cs, vec![150.0, 200.0, 150.0]);
    assert_eq!(s.c, 200.0);
    assert!((s.c_spread - 200.0 / 150.0).abs() < 1e-12);
    let cp: Vec<f64> = s.by_f.iter().map(|r| r.c_phase.unwrap()).collect();
    assert_eq!(cp, vec![15.0, 20.0, 20.0]);
    assert_eq!(s.c_group, Some(100.0));
    assert_eq!(s.by_f[0].mean_rounds, 1250.0);
    let table = summary_table(&s);
    assert_eq!(table.lines().count(), 5);
    assert!(table.contains("c = 200.00 (spread 1.33)"), "{table}");
}

#[test]
fn errored_rows_count_as_failures() {
    let mut bad = row(1, 0, 10, 10, 0);
    bad.error = "boom".into();
    let s = summarize(&[row(1, 500, 10, 10, 100), bad]);
    assert_eq!(s.errors, 1);
    assert_eq!(s.failures, 1);
    assert_eq!(s.by_f[0].c, 50.0);
}
