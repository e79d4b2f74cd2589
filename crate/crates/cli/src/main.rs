//! `bidalloc` command-line entry point.
//!
//! Exit codes: 0 success, 1 domain failure (violations, infeasible plans,
//! failed conditions), 2 usage or I/O errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use bidalloc::ingest::{build_instance, log_from_stream, read_log, write_log, BuildOptions, UtilityTemplate};
use bidalloc::instance::{PlanRecord, Severity};
use bidalloc::recovery::{RecoveryConfig, RecoveryStatus};
use bidalloc::sim::{
    experiment_budget_sweep, experiment_penalty_sweep, generate_stream, plan_instance, run_greedy, run_mpc,
    run_two_phase, PlannerConfig, Policy, SimConfig, SimReport,
};
use bidalloc::synth::{market_instance, MarketShape};
use bidalloc::{two_phase, validate, Instance, InstanceDoc, SolveConfig, StepRule};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "bidalloc", version, about = "Budget-aware bid and allocation planning")]
struct Cli {
    /// Root seed; every random stream is derived from it by name.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory receiving outputs and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check an instance file; prints one violation per line.
    Validate { instance: PathBuf },
    /// Build an instance from a tab-separated auction log.
    Fit(FitArgs),
    /// Minimize the dual and recover a plan.
    Solve {
        instance: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Replay an impression stream under a policy.
    Simulate(SimulateArgs),
    /// Run the budget or penalty sweep.
    Experiment(ExperimentArgs),
    /// Check landscape monotonicity conditions on a grid.
    CheckConditions {
        instance: PathBuf,
        #[arg(long, default_value_t = 1024)]
        grid: usize,
    },
    /// Write a synthetic market instance and optionally a matching log.
    Generate(GenerateArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct SolverArgs {
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    /// constant_step_length, inverse_sqrt, diminishing_step_length or polyak_level.
    #[arg(long, default_value = "polyak_level")]
    step_rule: String,
    #[arg(long, default_value_t = 0.1)]
    step_scale: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol_rel: f64,
    /// Also try the average iterate at the end.
    #[arg(long)]
    average_iterates: bool,
}

impl SolverArgs {
    fn planner(&self, seed: u64) -> Result<PlannerConfig, Failure> {
        let step_rule: StepRule = self.step_rule.parse().map_err(|e: String| Failure::usage(anyhow!(e)))?;
        let solve = SolveConfig {
            max_iters: self.max_iters,
            step_rule,
            step_scale: self.step_scale,
            tol_rel: self.tol_rel,
            seed,
            average_iterates: self.average_iterates,
            ..SolveConfig::default()
        };
        solve.check().map_err(Failure::from)?;
        Ok(PlannerConfig {
            solve,
            recovery: RecoveryConfig::default(),
        })
    }
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    log: PathBuf,
    /// Instance path; defaults to `<out-dir>/instance.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = bidalloc::ingest::DEFAULT_MIN_COUNT)]
    min_count: u64,
    #[arg(long, default_value_t = bidalloc::ingest::DEFAULT_MC_SAMPLES)]
    mc_samples: usize,
    #[arg(long, default_value_t = bidalloc::ingest::DEFAULT_BID_GRID)]
    grid: usize,
    #[arg(long, default_value_t = 1.0)]
    default_cpc: f64,
    /// Common bid cap; per type, the largest observed price when omitted.
    #[arg(long)]
    max_bid: Option<f64>,
    /// budget_cap, quadratic_target:<multiplier> or spend_range:<alpha>.
    #[arg(long, default_value = "budget_cap")]
    utility: String,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum PolicyArg {
    TwoPhase,
    Greedy,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    instance: PathBuf,
    /// Plan file written by `solve`; required for two_phase unless --solve-inline.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "two-phase")]
    policy: PolicyArg,
    /// Plan with the two-phase pipeline before replaying.
    #[arg(long)]
    solve_inline: bool,
    #[arg(long, default_value_t = 100)]
    replications: usize,
    #[arg(long, default_value_t = 1.0)]
    budget_fraction: f64,
    /// Re-solve every this many events (two_phase only).
    #[arg(long)]
    resolve_every: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Sweep {
    BudgetSweep,
    PenaltySweep,
}

#[derive(Args, Debug, Serialize)]
struct ExperimentArgs {
    instance: PathBuf,
    #[arg(value_enum)]
    sweep: Sweep,
    /// Comma-separated budget fractions; fractions like 1/32 are accepted.
    #[arg(long, default_value = "1/32,1/8,1/4,1/2,1")]
    fractions: String,
    /// Comma-separated penalty multipliers; defaults to 0.1, 0.3, ..., 2.1.
    #[arg(long)]
    multipliers: Option<String>,
    #[arg(long, default_value_t = 100)]
    replications: usize,
    /// Budget fraction applied before the penalty sweep.
    #[arg(long, default_value_t = 1.0)]
    budget_fraction: f64,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug, Serialize)]
struct GenerateArgs {
    /// Instance path; defaults to `<out-dir>/instance.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a log of one simulated stream here.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    train_fraction: f64,
    /// Scale every type's supply, e.g. to make a log large enough to fit.
    #[arg(long, default_value_t = 1.0)]
    supply_scale: f64,
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(error: anyhow::Error) -> Self {
        Failure { code: 2, error }
    }

    fn domain(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

impl From<bidalloc::Error> for Failure {
    fn from(e: bidalloc::Error) -> Self {
        use bidalloc::Error as E;
        let code = match e {
            E::Io(_) | E::Json(_) | E::Config(_) => 2,
            _ => 1,
        };
        Failure { code, error: e.into() }
    }
}

/// What a subcommand reports back for the manifest.
struct Outcome {
    inputs: Vec<PathBuf>,
    config: Value,
    outputs: Vec<PathBuf>,
    extra: Value,
    /// Exit code 1 with outputs still written (e.g. violations found).
    domain_failure: Option<String>,
}

impl Outcome {
    fn new(inputs: Vec<PathBuf>, config: Value) -> Self {
        Outcome {
            inputs,
            config,
            outputs: Vec::new(),
            extra: Value::Null,
            domain_failure: None,
        }
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    subcommand: &'a str,
    inputs: Vec<String>,
    config: &'a Value,
    tool_version: &'a str,
    seed: u64,
    wall_clock_secs: f64,
    outputs: Vec<String>,
    #[serde(skip_serializing_if = "Value::is_null")]
    extra: &'a Value,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(anyhow!("thread pool: {e}")))?;
    }
    fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("creating {}", cli.out_dir.display()))
        .map_err(Failure::usage)?;
    let start = Instant::now();
    let (name, outcome) = match &cli.command {
        Command::Validate { instance } => ("validate", cmd_validate(instance)?),
        Command::Fit(a) => ("fit", cmd_fit(cli, a)?),
        Command::Solve { instance, solver } => ("solve", cmd_solve(cli, instance, solver)?),
        Command::Simulate(a) => ("simulate", cmd_simulate(cli, a)?),
        Command::Experiment(a) => ("experiment", cmd_experiment(cli, a)?),
        Command::CheckConditions { instance, grid } => {
            ("check-conditions", cmd_check_conditions(cli, instance, *grid)?)
        }
        Command::Generate(a) => ("generate", cmd_generate(cli, a)?),
    };
    let manifest = RunManifest {
        subcommand: name,
        inputs: outcome.inputs.iter().map(|p| p.display().to_string()).collect(),
        config: &outcome.config,
        tool_version: env!("CARGO_PKG_VERSION"),
        seed: cli.seed,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        outputs: outcome.outputs.iter().map(|p| p.display().to_string()).collect(),
        extra: &outcome.extra,
    };
    write_json(&cli.out_dir.join("manifest.json"), &manifest)?;
    match outcome.domain_failure {
        Some(msg) => Err(Failure::domain(anyhow!(msg))),
        None => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::usage(e.into()))?;
    }
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::usage)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::usage(e.into()))?;
    text.push('\n');
    write_text(path, &text)
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Failure::usage(e.into());
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::usage(anyhow!("{e}")))?;
    write_text(path, &String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn read_to_string(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::usage)
}

/// Reads, parses and validates an instance; violations are a domain failure.
fn load_instance(path: &Path) -> Result<Instance, Failure> {
    let doc = InstanceDoc::from_json(&read_to_string(path)?)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::usage)?;
    let errors: Vec<String> = validate(&doc)
        .iter()
        .filter(|v| v.severity == Severity::Error)
        .map(|v| v.to_string())
        .collect();
    if !errors.is_empty() {
        return Err(Failure::domain(anyhow!("invalid instance:\n{}", errors.join("\n"))));
    }
    Instance::new(doc).map_err(Failure::from)
}

fn cmd_validate(path: &Path) -> Result<Outcome, Failure> {
    let doc = InstanceDoc::from_json(&read_to_string(path)?)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::usage)?;
    let violations = validate(&doc);
    for v in &violations {
        println!("{v}");
    }
    let mut out = Outcome::new(vec![path.to_path_buf()], Value::Null);
    out.extra = json!({ "violations": violations.len() });
    if !violations.is_empty() {
        out.domain_failure = Some(format!("{} violation(s)", violations.len()));
    }
    Ok(out)
}

fn parse_utility(s: &str) -> Result<UtilityTemplate, Failure> {
    let bad = || Failure::usage(anyhow!("bad --utility {s:?}"));
    let (kind, arg) = match s.split_once(':') {
        Some((k, a)) => (k, Some(a.parse::<f64>().map_err(|_| bad())?)),
        None => (s, None),
    };
    match (kind, arg) {
        ("budget_cap", None) => Ok(UtilityTemplate::BudgetCap),
        ("quadratic_target", Some(multiplier)) => Ok(UtilityTemplate::QuadraticTarget { multiplier }),
        ("spend_range", Some(alpha_spend)) => Ok(UtilityTemplate::SpendRange { alpha_spend }),
        _ => Err(bad()),
    }
}

fn cmd_fit(cli: &Cli, a: &FitArgs) -> Result<Outcome, Failure> {
    let file = fs::File::open(&a.log)
        .with_context(|| format!("opening {}", a.log.display()))
        .map_err(Failure::usage)?;
    let records = read_log(std::io::BufReader::new(file)).map_err(|e| Failure::usage(e.into()))?;
    let opts = BuildOptions {
        min_count: a.min_count,
        mc_samples: a.mc_samples,
        grid: a.grid,
        seed: cli.seed,
        default_cpc: a.default_cpc,
        utility: parse_utility(&a.utility)?,
        max_bid: a.max_bid,
        ..BuildOptions::default()
    };
    let report = build_instance(&records, &opts)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let path = a.out.clone().unwrap_or_else(|| cli.out_dir.join("instance.json"));
    write_text(&path, &(report.instance.to_doc().to_json() + "\n"))?;
    let fit_path = cli.out_dir.join("fit_report.json");
    write_json(
        &fit_path,
        &json!({ "fit_methods": report.fit_methods, "warnings": report.warnings }),
    )?;
    let mut out = Outcome::new(vec![a.log.clone()], serde_json::to_value(a).unwrap_or_default());
    out.outputs = vec![path, fit_path];
    Ok(out)
}

fn condition_digest(instance: &Instance, grid: usize) -> Value {
    let failing: Vec<&str> = instance
        .landscapes()
        .iter()
        .filter(|l| !l.model.check_conditions(grid).passes())
        .map(|l| l.id.as_str())
        .collect();
    json!({
        "landscapes": instance.landscapes().len(),
        "passing": instance.landscapes().len() - failing.len(),
        "failing": failing,
    })
}

fn cmd_solve(cli: &Cli, path: &Path, solver: &SolverArgs) -> Result<Outcome, Failure> {
    let instance = load_instance(path)?;
    let planner = solver.planner(cli.seed)?;
    let run = two_phase(&instance, &planner.solve, &planner.recovery)?;
    let dir = &cli.out_dir;
    let mut out = Outcome::new(
        vec![path.to_path_buf()],
        serde_json::to_value(&planner).unwrap_or_default(),
    );

    let lambda: BTreeMap<&str, f64> = instance
        .campaigns()
        .iter()
        .zip(&run.solve.lambda_best)
        .map(|(c, l)| (c.id.as_str(), *l))
        .collect();
    let lambda_path = dir.join("lambda.json");
    write_json(&lambda_path, &lambda)?;

    let history_path = dir.join("history.csv");
    let rows: Vec<Vec<String>> = run
        .solve
        .history
        .iter()
        .map(|h| {
            vec![
                h.iter.to_string(),
                h.q.to_string(),
                h.grad_norm.to_string(),
                h.step.to_string(),
            ]
        })
        .collect();
    let header = ["iter", "Q", "grad_norm", "step"].map(String::from);
    write_csv(&history_path, &header, &rows)?;

    let f = run.recovery.objective_value.to_f64();
    let q = run.solve.q_best;
    let summary = json!({
        "q_best": q,
        "f": f.is_finite().then_some(f),
        "gap": f.is_finite().then_some(q - f),
        "relative_gap": f.is_finite().then(|| (q - f).abs() / q.abs().max(1.0)),
        "iterations_used": run.solve.iterations_used,
        "converged": run.solve.converged,
        "recovery_status": run.recovery.status,
        "fw_gap": run.recovery.fw_gap,
        "conditions": condition_digest(&instance, 1024),
    });
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, &summary)?;
    out.outputs = vec![lambda_path, history_path, summary_path];

    match (&run.recovery.plan, run.recovery.status) {
        (Some(plan), RecoveryStatus::Optimal | RecoveryStatus::IterationLimit) => {
            let plan_path = dir.join("plan.json");
            write_json(&plan_path, &instance.plan_records(plan))?;
            out.outputs.insert(0, plan_path);
            println!("Q_best = {q:.6}, F = {f:.6}, gap = {:.3e}", q - f);
        }
        _ => {
            let mut msg = format!("allocation recovery ended {:?}; no plan written", run.recovery.status);
            for (c, alpha) in instance.campaigns().iter().zip(&run.recovery.suggested_alpha) {
                if let Some(a) = alpha {
                    msg.push_str(&format!("\n  campaign {}: suggested alpha_spend <= {a:.6}", c.id));
                }
            }
            out.domain_failure = Some(msg);
        }
    }
    Ok(out)
}

fn report_rows(report: &SimReport) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = [
        "replication",
        "profit",
        "revenue",
        "payments",
        "budget_utilization",
        "bids",
        "wins",
        "clicks",
        "resolves",
    ]
    .map(String::from)
    .to_vec();
    header.extend(report.campaign_ids.iter().map(|id| format!("spend_{id}")));
    let mut rows: Vec<Vec<String>> = report
        .replications
        .iter()
        .map(|r| {
            let mut row = vec![
                r.replication.to_string(),
                r.profit.to_string(),
                r.revenue.to_string(),
                r.payments.to_string(),
                r.budget_utilization.to_string(),
                r.bids.to_string(),
                r.wins.to_string(),
                r.clicks.iter().sum::<u64>().to_string(),
                r.resolves.to_string(),
            ];
            row.extend(r.spend.iter().map(|s| s.to_string()));
            row
        })
        .collect();
    let a = &report.aggregate;
    let blank = |n: usize| vec![String::new(); n];
    let mut mean = vec!["mean".into(), a.mean_profit.to_string()];
    mean.extend(blank(2));
    mean.push(a.mean_budget_utilization.to_string());
    mean.push(String::new());
    mean.push(a.mean_wins.to_string());
    mean.push(a.mean_clicks.to_string());
    mean.push(String::new());
    mean.extend(a.mean_spend.iter().map(|s| s.to_string()));
    let mut se = vec!["se".into(), a.se_profit.to_string()];
    se.extend(blank(2));
    se.push(a.se_budget_utilization.to_string());
    se.extend(blank(header.len() - se.len()));
    rows.push(mean);
    rows.push(se);
    (header, rows)
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> Result<Outcome, Failure> {
    let instance = load_instance(&a.instance)?;
    let planner = a.solver.planner(cli.seed)?;
    let config = SimConfig {
        seed: cli.seed,
        replications: a.replications,
        budget_fraction: a.budget_fraction,
        resolve_every: a.resolve_every,
        test_ctr: None,
    };
    let mut inputs = vec![a.instance.clone()];
    let stream = generate_stream(&instance, cli.seed);
    let report = match a.policy {
        PolicyArg::Greedy => run_greedy(&instance, &stream, &config)?,
        PolicyArg::TwoPhase => {
            let plan = match (&a.plan, a.solve_inline) {
                (Some(p), _) => {
                    inputs.push(p.clone());
                    let records: Vec<PlanRecord> = serde_json::from_str(&read_to_string(p)?)
                        .with_context(|| format!("parsing {}", p.display()))
                        .map_err(Failure::usage)?;
                    instance
                        .plan_from_records(&records)
                        .map_err(|e| Failure::usage(e.into()))?
                }
                (None, true) => plan_instance(&instance.with_budget_fraction(a.budget_fraction), &planner)?,
                (None, false) => return Err(Failure::usage(anyhow!("two_phase needs --plan or --solve-inline"))),
            };
            if a.resolve_every.is_some() {
                run_mpc(&instance, &plan, &stream, &config, &planner)?
            } else {
                run_two_phase(&instance, &plan, &stream, &config)?
            }
        }
    };
    let (header, rows) = report_rows(&report);
    let csv_path = cli.out_dir.join("simulation.csv");
    write_csv(&csv_path, &header, &rows)?;
    let json_path = cli.out_dir.join("simulation.json");
    write_json(&json_path, &report)?;
    println!(
        "{:?}: mean profit {:.4} (se {:.4}), mean b.u. {:.4}",
        report.policy,
        report.aggregate.mean_profit,
        report.aggregate.se_profit,
        report.aggregate.mean_budget_utilization
    );
    let mut out = Outcome::new(inputs, json!({ "simulate": a, "planner": planner }));
    out.outputs = vec![csv_path, json_path];
    let resolves: usize = report.replications.iter().map(|r| r.resolves).sum();
    out.extra = json!({
        "policy": report.policy,
        "resolves_per_replication": if report.policy == Policy::TwoPhase && a.resolve_every.is_some() {
            Some(resolves / report.replications.len().max(1))
        } else {
            None
        },
    });
    Ok(out)
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    let values = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let v = match t.split_once('/') {
                Some((n, d)) => n
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .zip(d.trim().parse::<f64>().ok())
                    .map(|(n, d)| n / d),
                None => t.parse::<f64>().ok(),
            };
            v.filter(|v| v.is_finite())
                .ok_or_else(|| Failure::usage(anyhow!("bad {what} entry {t:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(Failure::usage(anyhow!("empty {what} list")));
    }
    Ok(values)
}

fn cmd_experiment(cli: &Cli, a: &ExperimentArgs) -> Result<Outcome, Failure> {
    let instance = load_instance(&a.instance)?;
    let planner = a.solver.planner(cli.seed)?;
    let config = SimConfig {
        seed: cli.seed,
        replications: a.replications,
        budget_fraction: a.budget_fraction,
        resolve_every: None,
        test_ctr: None,
    };
    let mut out = Outcome::new(vec![a.instance.clone()], json!({ "experiment": a, "planner": planner }));
    let dir = &cli.out_dir;
    match a.sweep {
        Sweep::BudgetSweep => {
            let fractions = parse_list(&a.fractions, "fraction")?;
            let rows = experiment_budget_sweep(&instance, &fractions, &config, &planner)?;
            let mut header = vec!["row".to_string()];
            header.extend(rows.iter().map(|r| r.fraction.to_string()));
            let line = |name: &str, f: &dyn Fn(&bidalloc::sim::BudgetSweepRow) -> f64| {
                let mut v = vec![name.to_string()];
                v.extend(rows.iter().map(|r| f(r).to_string()));
                v
            };
            let table = vec![
                line("relative_profit", &|r| r.relative_profit),
                line("relative_budget_utilization", &|r| r.relative_budget_utilization),
                line("two_phase_profit", &|r| r.two_phase.mean_profit),
                line("greedy_profit", &|r| r.greedy.mean_profit),
                line("two_phase_budget_utilization", &|r| r.two_phase.mean_budget_utilization),
                line("greedy_budget_utilization", &|r| r.greedy.mean_budget_utilization),
                line("p_value", &|r| r.p_value),
            ];
            let csv_path = dir.join("budget_sweep.csv");
            write_csv(&csv_path, &header, &table)?;
            let json_path = dir.join("budget_sweep.json");
            write_json(&json_path, &rows)?;
            for r in &rows {
                println!(
                    "fraction {:>8.5}: relative profit {:.3}, relative b.u. {:.3}, p = {:.2e}",
                    r.fraction, r.relative_profit, r.relative_budget_utilization, r.p_value
                );
            }
            out.outputs = vec![csv_path, json_path];
        }
        Sweep::PenaltySweep => {
            let multipliers = match &a.multipliers {
                Some(s) => parse_list(s, "multiplier")?,
                None => (0..11).map(|j| 0.1 + 0.2 * j as f64).collect(),
            };
            let sweep = experiment_penalty_sweep(&instance, &multipliers, &config, &planner)?;
            let header = [
                "multiplier",
                "relative_profit",
                "relative_budget_utilization",
                "mean_profit",
                "mean_budget_utilization",
            ]
            .map(String::from);
            let table: Vec<Vec<String>> = sweep
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.multiplier.to_string(),
                        r.relative_profit.to_string(),
                        r.relative_budget_utilization.to_string(),
                        r.quadratic.mean_profit.to_string(),
                        r.quadratic.mean_budget_utilization.to_string(),
                    ]
                })
                .collect();
            let csv_path = dir.join("penalty_sweep.csv");
            write_csv(&csv_path, &header, &table)?;
            let json_path = dir.join("penalty_sweep.json");
            write_json(&json_path, &sweep)?;
            for r in &sweep.rows {
                println!(
                    "multiplier {:.2}: relative profit {:.3}, relative b.u. {:.3}",
                    r.multiplier, r.relative_profit, r.relative_budget_utilization
                );
            }
            out.outputs = vec![csv_path, json_path];
        }
    }
    Ok(out)
}

fn cmd_check_conditions(cli: &Cli, path: &Path, grid: usize) -> Result<Outcome, Failure> {
    let instance = load_instance(path)?;
    let reports: BTreeMap<&str, _> = instance
        .landscapes()
        .iter()
        .map(|l| (l.id.as_str(), l.model.check_conditions(grid)))
        .collect();
    let failing: Vec<&str> = reports.iter().filter(|(_, r)| !r.passes()).map(|(id, _)| *id).collect();
    for (id, r) in &reports {
        println!(
            "{id}: rho increasing {}, g increasing {}",
            r.rho_strictly_increasing, r.g_strictly_increasing
        );
    }
    let report_path = cli.out_dir.join("conditions.json");
    write_json(&report_path, &reports)?;
    let mut out = Outcome::new(vec![path.to_path_buf()], json!({ "grid": grid }));
    out.outputs = vec![report_path];
    if !failing.is_empty() {
        out.domain_failure = Some(format!("conditions fail for: {}", failing.join(", ")));
    }
    Ok(out)
}

fn cmd_generate(cli: &Cli, a: &GenerateArgs) -> Result<Outcome, Failure> {
    if a.supply_scale.is_nan() || a.supply_scale <= 0.0 || !(0.0..=1.0).contains(&a.train_fraction) {
        return Err(Failure::usage(anyhow!(
            "--supply-scale must be positive and --train-fraction in [0, 1]"
        )));
    }
    let instance = market_instance(&MarketShape::default(), cli.seed)?;
    let path = a.out.clone().unwrap_or_else(|| cli.out_dir.join("instance.json"));
    write_text(&path, &(instance.to_doc().to_json() + "\n"))?;
    let mut out = Outcome::new(Vec::new(), serde_json::to_value(a).unwrap_or_default());
    out.outputs.push(path);
    if let Some(log_path) = &a.log {
        let supplies: Vec<f64> = instance.supplies().iter().map(|s| s * a.supply_scale).collect();
        let scaled = instance.with_supplies(&supplies);
        let stream = generate_stream(&scaled, cli.seed);
        let records = log_from_stream(&scaled, &stream, a.train_fraction, cli.seed);
        let mut buf = Vec::new();
        write_log(&mut buf, &records)?;
        write_text(log_path, &String::from_utf8(buf).expect("log output is UTF-8"))?;
        out.outputs.push(log_path.clone());
    }
    Ok(out)
}
