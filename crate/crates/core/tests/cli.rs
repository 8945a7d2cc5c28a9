use std::path::Path;
use std::process::{Command, Output};

use iterpdd::cli::{RunSummary, SweepRow};
use iterpdd::error_analysis::NsrEntry;
use iterpdd::fitting::read_constants_csv;
use iterpdd::io::{header_value, read_csv};
use iterpdd::orchestrator::{CostLedger, NodalRow};
use iterpdd::scheduler::Schedule;

const SMALL: &str = "\
# small strip problem for fast runs
problem = paper-sec6
domain = 0, 2, 0, 1
m = 2
nodes_per_interface = 4
grid_spacing = 0.02
fit_m_hat = 12
fit_n_hat = 300
";

fn iterpdd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iterpdd")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    assert_eq!(iterpdd(&["solve", "--a0", "1e9", "--out", out]).status.code(), Some(1));
    assert_eq!(iterpdd(&["solve", "--out", out]).status.code(), Some(1));
    assert_eq!(iterpdd(&["solve", "--a0", "0.1", "--eps", "0.1", "--out", out]).status.code(), Some(1));
    assert_eq!(iterpdd(&["fit", "--set", "nonsense=1", "--out", out]).status.code(), Some(1));
    assert_eq!(iterpdd(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(iterpdd(&["report", "--out", out]).status.code(), Some(1));
    assert_eq!(iterpdd(&["--help"]).status.code(), Some(0));
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "problem = nowhere\n").unwrap();
    assert_eq!(iterpdd(&["fit", "--config", path(&cfg), "--out", out]).status.code(), Some(1));
}

#[test]
fn runtime_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    // A one-step cap flags every path.
    std::fs::write(&cfg, format!("{SMALL}max_steps = 1\n")).unwrap();
    let o = iterpdd(&["fit", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("node"));
}

#[test]
fn nsr_table_is_reproducible_and_parses() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(iterpdd(&["nsr-table", "--q", "2", "--gamma-r", "1", "--threads", "1", "--out", path(a.path())]).status.success());
    assert!(iterpdd(&["nsr-table", "--q", "2", "--gamma-r", "1", "--threads", "2", "--out", path(b.path())]).status.success());
    let ta = std::fs::read(a.path().join("nsr.csv")).unwrap();
    assert_eq!(ta, std::fs::read(b.path().join("nsr.csv")).unwrap());
    let (rows, header): (Vec<NsrEntry>, _) = read_csv(&a.path().join("nsr.csv")).unwrap();
    assert_eq!(rows.len(), 30);
    assert_eq!(header_value(&header, "q"), Some("2"));
    let cell = rows.iter().find(|r| r.ratio == 0.0 && r.s == 10).unwrap();
    assert!((cell.nsr - 0.54).abs() <= 0.03, "{}", cell.nsr);
}

#[test]
fn every_subcommand_writes_parseable_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = path(dir.path());
    let c = path(&cfg);

    assert!(iterpdd(&["fit", "--config", c, "--out", out]).status.success());
    let (constants, header) = read_constants_csv(&dir.path().join("constants.csv")).unwrap();
    assert_eq!(constants.len(), 4);
    assert_eq!(header_value(&header, "domain_authoritative"), Some("false"));

    let reuse = format!("constants={}", path(&dir.path().join("constants.csv")));
    assert!(iterpdd(&["schedule", "--config", c, "--set", &reuse, "--a0", "0.1", "--out", out]).status.success());
    let (sched, _) = Schedule::read_csv(&dir.path().join("schedule.csv")).unwrap();
    assert_eq!(sched.a0(), 0.1);

    assert!(iterpdd(&["speedup-sweep", "--config", c, "--set", &reuse, "--a0", "0.1", "--out", out]).status.success());
    let (rows, _): (Vec<SweepRow>, _) = read_csv(&dir.path().join("sweep.csv")).unwrap();
    assert_eq!(rows.len(), 60);
    assert!(rows.windows(2).all(|w| w[1].a1 > w[0].a1));

    let o = iterpdd(&["solve", "--config", c, "--set", &reuse, "--a0", "0.1", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (nodal, _): (Vec<NodalRow>, _) = read_csv(&dir.path().join("solution.csv")).unwrap();
    assert_eq!(nodal.len(), 4);
    assert!(nodal.iter().all(|r| r.exact.is_some() && r.paths.is_some()));
    let ledger = CostLedger::read_json(&dir.path().join("ledger.json")).unwrap();
    assert!(ledger.is_conserved());
    let summary: RunSummary = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.tolerances.last(), Some(&0.1));

    let r = iterpdd(&["report", "--out", out]);
    assert!(r.status.success());
    let text = String::from_utf8_lossy(&r.stdout);
    assert!(text.contains("non-authoritative"), "{text}");
}

#[test]
fn solve_output_is_byte_identical_across_thread_counts() {
    let run = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("small.cfg");
        std::fs::write(&cfg, SMALL).unwrap();
        let o = iterpdd(&["solve", "--config", path(&cfg), "--a0", "0.2", "--seed", "5", "--threads", threads, "--out", path(dir.path())]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(dir.path().join("solution.csv")).unwrap()
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn plain_solve_cost_on_the_default_problem() {
    let dir = tempfile::tempdir().unwrap();
    let o = iterpdd(&["solve", "--a0", "0.62", "--plain", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ledger = CostLedger::read_json(&dir.path().join("ledger.json")).unwrap();
    let steps = ledger.total_weighted_steps;
    assert!((65989.0 / 3.0..=65989.0 * 3.0).contains(&steps), "{steps}");
}
