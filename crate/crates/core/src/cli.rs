//! The `iterpdd` command line: fit, schedule, solve, speedup-sweep, nsr-table, report.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Setting};
use crate::error::PddError;
use crate::error_analysis::nsr_table;
use crate::fitting::{estimate_kappa, read_constants_csv, write_constants_csv, NodalConstants};
use crate::io::{header_value, write_csv, Header};
use crate::orchestrator::{CostLedger, ErrorReport, LevelMode, Pdd};
use crate::scheduler::{build_schedule, fine_cost, plain_cost, predicted_mean_rho, Schedule};
use crate::sde::Tables;
use crate::subdomain::write_fields_csv;

pub const CONSTANTS_FILE: &str = "constants.csv";
pub const SCHEDULE_FILE: &str = "schedule.csv";
pub const SOLUTION_FILE: &str = "solution.csv";
pub const LEDGER_FILE: &str = "ledger.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const NSR_FILE: &str = "nsr.csv";
pub const FIELDS_FILE: &str = "fields.csv";

#[derive(Debug, Parser)]
#[command(name = "iterpdd", version, about = "Iterative probabilistic domain decomposition")]
pub struct Cli {
    /// key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub a0: Option<f64>,
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    #[arg(long, global = true)]
    pub q: Option<f64>,
    /// Solve without control variates.
    #[arg(long, global = true)]
    pub plain: bool,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Any configuration key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit nodal constants and write constants.csv.
    Fit,
    /// Build the tolerance cascade and write schedule.csv.
    Schedule,
    /// Run PlainPDD or IterPDD and write the solution, ledger and summary.
    Solve,
    /// Predicted two-level speedup S(a0, a1) over a grid of a1.
    SpeedupSweep,
    /// Noise-to-signal ratios of the squared global error.
    NsrTable {
        /// Keep only the block with this overshoot constant.
        #[arg(long)]
        gamma_r: Option<f64>,
    },
    /// Summarize a previous run in the output directory.
    Report,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<PddError> for Failure {
    fn from(e: PddError) -> Self {
        match e {
            PddError::Config(m) => Failure::Config(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

/// Configuration from file, `--set` pairs and dedicated flags, in that order.
pub fn resolve_config(cli: &Cli) -> Outcome<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| config_err(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        c.set(k.trim(), v.trim())?;
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(t) = cli.threads {
        c.threads = t;
    }
    if let Some(a) = cli.a0 {
        c.set("a0", &a.to_string())?;
    }
    if let Some(e) = cli.eps {
        c.set("eps", &e.to_string())?;
    }
    if let Some(q) = cli.q {
        c.q = q;
    }
    if cli.plain {
        c.plain = true;
    }
    if let Some(o) = &cli.out {
        c.out = o.clone();
    }
    c.validate()?;
    Ok(c)
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("iterpdd: {f}");
            f.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Outcome<()> {
    let cfg = resolve_config(cli)?;
    if cfg.threads > 0 {
        // Fails harmlessly if a pool already exists in this process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    std::fs::create_dir_all(&cfg.out).map_err(|e| config_err(format!("cannot create {}: {e}", cfg.out.display())))?;
    match &cli.command {
        Command::Fit => cmd_fit(&cfg),
        Command::Schedule => cmd_schedule(&cfg),
        Command::Solve => cmd_solve(&cfg),
        Command::SpeedupSweep => cmd_sweep(&cfg),
        Command::NsrTable { gamma_r } => cmd_nsr(&cfg, *gamma_r),
        Command::Report => cmd_report(&cfg),
    }
}

fn build_pdd(cfg: &RunConfig) -> Outcome<Pdd> {
    let problem = cfg.build_problem()?;
    Pdd::new(problem, cfg.m, cfg.nodes_per_interface, cfg.grid_spacing, cfg.shape).map_err(config_err)
}

struct Fitted {
    constants: Vec<NodalConstants>,
    fit_steps: u64,
}

fn obtain_constants(cfg: &RunConfig, pdd: &Pdd) -> Outcome<Fitted> {
    if let Some(path) = &cfg.constants {
        let (constants, header) = read_constants_csv(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        if constants.len() != pdd.partition.n() {
            return Err(config_err(format!(
                "{} has {} nodes, the partition has {}",
                path.display(),
                constants.len(),
                pdd.partition.n()
            )));
        }
        let fit_steps = header_value(&header, "fit_steps").and_then(|v| v.parse().ok()).unwrap_or(0);
        return Ok(Fitted { constants, fit_steps });
    }
    let t = Instant::now();
    let out = pdd.fit(&cfg.fit_settings())?;
    log::info!("fitted {} nodes in {:.1} s ({} steps)", out.constants.len(), t.elapsed().as_secs_f64(), out.steps);
    Ok(Fitted { constants: out.constants, fit_steps: out.steps })
}

fn resolve_kappa(cfg: &RunConfig, pdd: &Pdd, constants: &[NodalConstants]) -> Outcome<f64> {
    match cfg.kappa {
        Setting::Fixed(k) => Ok(k),
        Setting::Auto => {
            let signs: Vec<f64> = constants.iter().map(|c| if c.beta < 0.0 { -1.0 } else { 1.0 }).collect();
            let table = pdd.psi_table(&signs)?;
            let x0 = pdd.partition.nodes[0].point();
            let k = estimate_kappa(&x0, pdd.problem.as_ref(), cfg.fit_h_min, Tables::cv(&table), Tables::none(), 100_000, 5)?;
            log::info!("measured kappa = {k:.3}");
            Ok(k)
        }
    }
}

fn tolerance(cfg: &RunConfig, pdd: &Pdd) -> Outcome<f64> {
    let a = cfg.tolerance(|| pdd.gamma_r())?;
    cfg.check_tolerance(a, pdd.problem.as_ref())?;
    Ok(a)
}

fn fit_header(cfg: &RunConfig, fitted: &Fitted) -> Header {
    let mut h = cfg.header();
    h.push(("fit_m_hat".into(), cfg.fit_m_hat.to_string()));
    h.push(("fit_n_hat".into(), cfg.fit_n_hat.to_string()));
    h.push(("fit_h_min".into(), cfg.fit_h_min.to_string()));
    h.push(("fit_h_max".into(), cfg.fit_h_max.to_string()));
    h.push(("fit_steps".into(), fitted.fit_steps.to_string()));
    h
}

fn cmd_fit(cfg: &RunConfig) -> Outcome<()> {
    let pdd = build_pdd(cfg)?;
    let fitted = obtain_constants(cfg, &pdd)?;
    let path = cfg.out.join(CONSTANTS_FILE);
    write_constants_csv(&path, &fitted.constants, &fit_header(cfg, &fitted))?;
    let mean = |f: fn(&NodalConstants) -> f64| fitted.constants.iter().map(f).sum::<f64>() / fitted.constants.len() as f64;
    println!(
        "fitted {} nodes: mean V[phi] {:.4}, mean |beta| {:.4}, mean E[tau] {:.4}, {} steps -> {}",
        fitted.constants.len(),
        mean(|c| c.v_phi),
        mean(|c| c.beta.abs()),
        mean(|c| c.e_tau),
        fitted.fit_steps,
        path.display()
    );
    Ok(())
}

fn make_schedule(cfg: &RunConfig, constants: &[NodalConstants], kappa: f64, a0: f64) -> Outcome<Schedule> {
    if let Some(path) = &cfg.schedule {
        let (s, _) = Schedule::read_csv(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        if (s.a0() - a0).abs() > 1e-12 * a0 {
            return Err(config_err(format!("{} ends at a0 = {}, configured a0 = {a0}", path.display(), s.a0())));
        }
        return Ok(s);
    }
    Ok(build_schedule(a0, constants, &cfg.schedule_settings(kappa))?)
}

fn cmd_schedule(cfg: &RunConfig) -> Outcome<()> {
    let pdd = build_pdd(cfg)?;
    let a0 = tolerance(cfg, &pdd)?;
    let fitted = obtain_constants(cfg, &pdd)?;
    let kappa = resolve_kappa(cfg, &pdd, &fitted.constants)?;
    let sched = build_schedule(a0, &fitted.constants, &cfg.schedule_settings(kappa))?;
    let mut extra = cfg.header();
    extra.push(("kappa_value".into(), kappa.to_string()));
    extra.push(("correction".into(), format!("{:?}", cfg.correction).to_lowercase()));
    extra.push(("stop_threshold".into(), cfg.stop_threshold.to_string()));
    let path = cfg.out.join(SCHEDULE_FILE);
    sched.write_csv(&path, &extra)?;
    let tol: Vec<String> = sched.tolerances().iter().map(|a| format!("{a:.4}")).collect();
    println!(
        "J = {}: {} ; predicted cumulative speedup {:.2} -> {}",
        sched.j(),
        tol.join(" > "),
        sched.cumulative_speedup,
        path.display()
    );
    Ok(())
}

/// What `solve` leaves behind for `report`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub header: Header,
    pub a0: f64,
    pub plain: bool,
    pub kappa: f64,
    pub tolerances: Vec<f64>,
    pub modes: Vec<LevelMode>,
    pub fit_steps: u64,
    pub weighted_steps: f64,
    pub predicted_plain_steps: f64,
    pub predicted_cumulative_speedup: Option<f64>,
    pub speedup_vs_predicted_plain: f64,
    pub error: Option<ErrorReport>,
    pub seconds: f64,
}

fn cmd_solve(cfg: &RunConfig) -> Outcome<()> {
    let pdd = build_pdd(cfg)?;
    let a0 = tolerance(cfg, &pdd)?;
    let fitted = obtain_constants(cfg, &pdd)?;
    let kappa = resolve_kappa(cfg, &pdd, &fitted.constants)?;
    let opts = cfg.run_options(kappa);
    let t = Instant::now();
    let (solution, mut ledger, tolerances, predicted) = if cfg.plain {
        let (sol, ledger) = pdd.run_plain(a0, &fitted.constants, &opts)?;
        (sol, ledger, vec![a0], None)
    } else {
        let sched = make_schedule(cfg, &fitted.constants, kappa, a0)?;
        let (mut sols, ledger) = pdd.run_iter(&sched, &fitted.constants, &opts)?;
        let modes: Vec<String> = sols.iter().map(|s| format!("{:?}", s.mode)).collect();
        log::info!("levels {:?} modes {:?}", sched.tolerances(), modes);
        (sols.pop().expect("schedule is non-empty"), ledger, sched.tolerances(), Some(sched.cumulative_speedup))
    };
    ledger.fitting_steps = fitted.fit_steps;
    let seconds = t.elapsed().as_secs_f64();

    let mut header = cfg.header();
    header.push(("a0".into(), a0.to_string()));
    header.push(("plain".into(), cfg.plain.to_string()));
    let problem = pdd.problem.clone();
    let exact = |x: &crate::geometry::Point| problem.exact_solution(x).unwrap_or(f64::NAN);
    let has_exact = problem.exact_solution(&pdd.partition.nodes[0].point()).is_some();
    let rows = solution.nodal_rows(&pdd.partition, if has_exact { Some(&exact) } else { None });
    write_csv(&cfg.out.join(SOLUTION_FILE), &rows, &header)?;
    ledger.write_json(&cfg.out.join(LEDGER_FILE))?;
    if cfg.write_fields {
        write_fields_csv(&cfg.out.join(FIELDS_FILE), &solution.fields)?;
    }
    let predicted_plain_steps = plain_cost(a0, &fitted.constants, cfg.delta);
    let summary = RunSummary {
        header,
        a0,
        plain: cfg.plain,
        kappa,
        tolerances,
        modes: ledger.levels.iter().map(|l| l.mode).collect(),
        fit_steps: fitted.fit_steps,
        weighted_steps: ledger.total_weighted_steps,
        predicted_plain_steps,
        predicted_cumulative_speedup: predicted,
        speedup_vs_predicted_plain: predicted_plain_steps / ledger.total_weighted_steps,
        error: pdd.error_report(&solution, 50),
        seconds,
    };
    std::fs::write(cfg.out.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary).map_err(PddError::from)?)
        .map_err(PddError::from)?;
    print!("{}", render_summary(&summary, Some(&ledger)));
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub a1: f64,
    pub predicted_rho: f64,
    pub plain_cost_a1: f64,
    pub fine_cost: f64,
    pub plain_cost_a0: f64,
    pub speedup: f64,
}

/// Log-spaced coarse tolerances in `(a0, a1_max]`.
pub fn sweep_grid(a0: f64, a1_max: f64, points: usize) -> Vec<f64> {
    let lo = (a0 * 1.05).ln();
    let hi = a1_max.ln();
    (0..points)
        .map(|i| (lo + (hi - lo) * i as f64 / (points - 1).max(1) as f64).exp())
        .collect()
}

fn cmd_sweep(cfg: &RunConfig) -> Outcome<()> {
    let pdd = build_pdd(cfg)?;
    let a0 = tolerance(cfg, &pdd)?;
    if !(cfg.sweep_a1_max > a0 * 1.05) {
        return Err(config_err(format!("sweep_a1_max = {} must exceed a0", cfg.sweep_a1_max)));
    }
    let fitted = obtain_constants(cfg, &pdd)?;
    let kappa = resolve_kappa(cfg, &pdd, &fitted.constants)?;
    let s = cfg.schedule_settings(kappa);
    let c = &fitted.constants;
    let p0 = plain_cost(a0, c, s.delta);
    let rows = sweep_grid(a0, cfg.sweep_a1_max, cfg.sweep_points)
        .into_iter()
        .map(|a1| {
            let fine = fine_cost(a0, a1, c, &s)?;
            let p1 = plain_cost(a1, c, s.delta);
            Ok(SweepRow {
                a1,
                predicted_rho: predicted_mean_rho(a0, a1, c, s.correction)?,
                plain_cost_a1: p1,
                fine_cost: fine,
                plain_cost_a0: p0,
                speedup: p0 / (p1 + fine),
            })
        })
        .collect::<crate::error::Result<Vec<_>>>()?;
    let mut header = cfg.header();
    header.push(("a0".into(), a0.to_string()));
    header.push(("kappa_value".into(), kappa.to_string()));
    let path = cfg.out.join(SWEEP_FILE);
    write_csv(&path, &rows, &header)?;
    let best = rows.iter().max_by(|a, b| a.speedup.total_cmp(&b.speedup)).expect("non-empty grid");
    println!("best a1 = {:.4} with S = {:.2} -> {}", best.a1, best.speedup, path.display());
    Ok(())
}

fn cmd_nsr(cfg: &RunConfig, gamma_r: Option<f64>) -> Outcome<()> {
    let t = Instant::now();
    let mut rows = nsr_table(cfg.q, cfg.nsr_samples, cfg.seed)?;
    if let Some(g) = gamma_r {
        rows.retain(|r| r.gamma_r == g);
        if rows.is_empty() {
            return Err(config_err(format!("no table block for gamma_r = {g}")));
        }
    }
    let header = vec![
        ("q".to_string(), cfg.q.to_string()),
        ("samples".to_string(), cfg.nsr_samples.to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
    ];
    let path = cfg.out.join(NSR_FILE);
    write_csv(&path, &rows, &header)?;
    println!("{} cells in {:.2} s -> {}", rows.len(), t.elapsed().as_secs_f64(), path.display());
    Ok(())
}

pub fn render_summary(s: &RunSummary, ledger: Option<&CostLedger>) -> String {
    let mut out = String::new();
    let get = |k: &str| header_value(&s.header, k).unwrap_or("?").to_string();
    let authoritative = get("domain_authoritative") == "true";
    out.push_str(&format!(
        "problem {} on domain [{}]{}\n",
        get("problem"),
        get("domain"),
        if authoritative { "" } else { " (non-authoritative default geometry)" }
    ));
    out.push_str(&format!(
        "{} at a0 = {} (q = {}, seed = {}, kappa = {})\n",
        if s.plain { "PlainPDD" } else { "IterPDD" },
        s.a0,
        get("q"),
        get("seed"),
        s.kappa
    ));
    if let Some(l) = ledger {
        for c in &l.levels {
            out.push_str(&format!(
                "  level {} a = {:.4} {:?}: plain {} cv {} weighted {:.4e}{}\n",
                c.level,
                c.a,
                c.mode,
                c.plain_steps,
                c.cv_steps,
                c.weighted_steps,
                c.mean_abs_rho.map(|r| format!(" |rho| {r:.4}")).unwrap_or_default()
            ));
        }
    }
    out.push_str(&format!(
        "weighted steps {:.4e} (fitting {}), predicted plain {:.4e}, speedup vs predicted plain {:.2}",
        s.weighted_steps, s.fit_steps, s.predicted_plain_steps, s.speedup_vs_predicted_plain
    ));
    if let Some(p) = s.predicted_cumulative_speedup {
        out.push_str(&format!(" (schedule predicted {p:.2})"));
    }
    out.push('\n');
    if let Some(e) = &s.error {
        out.push_str(&format!(
            "nodal error mean {:.4} max {:.4}; sup interface {:.4}; sup domain {:.4}\n",
            e.mean_nodal_error, e.max_nodal_error, e.sup_interface_error, e.sup_domain_error
        ));
    }
    out.push_str(&format!("wall time {:.1} s\n", s.seconds));
    out
}

fn read_summary(dir: &Path) -> Outcome<RunSummary> {
    let path = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn cmd_report(cfg: &RunConfig) -> Outcome<()> {
    let dir = &cfg.out;
    let mut any = false;
    if dir.join(SUMMARY_FILE).exists() {
        let s = read_summary(dir)?;
        let ledger = CostLedger::read_json(&dir.join(LEDGER_FILE)).ok();
        if let Some(l) = &ledger {
            if !l.is_conserved() {
                return Err(Failure::Runtime("ledger totals do not match their levels".into()));
            }
        }
        print!("{}", render_summary(&s, ledger.as_ref()));
        any = true;
    }
    if dir.join(SCHEDULE_FILE).exists() {
        let (s, h) = Schedule::read_csv(&dir.join(SCHEDULE_FILE))?;
        let tol: Vec<String> = s.tolerances().iter().map(|a| format!("{a:.4}")).collect();
        println!(
            "schedule on [{}]{}: {} ; predicted cumulative speedup {:.2}",
            header_value(&h, "domain").unwrap_or("?"),
            if header_value(&h, "domain_authoritative") == Some("true") { "" } else { " (non-authoritative default geometry)" },
            tol.join(" > "),
            s.cumulative_speedup
        );
        any = true;
    }
    if dir.join(CONSTANTS_FILE).exists() {
        let (c, h) = read_constants_csv(&dir.join(CONSTANTS_FILE))?;
        println!(
            "constants: {} nodes on [{}]{}, fitting steps {}",
            c.len(),
            header_value(&h, "domain").unwrap_or("?"),
            if header_value(&h, "domain_authoritative") == Some("true") { "" } else { " (non-authoritative default geometry)" },
            header_value(&h, "fit_steps").unwrap_or("?")
        );
        any = true;
    }
    if !any {
        return Err(config_err(format!("{} holds no run output", dir.display())));
    }
    Ok(())
}
