//! `revcause`: solve, sweep, and verify misspecified-causal-model decision
//! problems.
//!
//! Exit codes: 0 success, 1 verification or numerical failure, 2 usage or
//! validation error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use revcause_core::dag::Dag;
use revcause_core::equilibrium::{
    closed_form_strategy, solve_extrapolated, solve_personal_equilibrium, EquilibriumReport,
    IterationMethod, SolverConfig, DEFAULT_MAX_ITER, DEFAULT_TOLERANCE,
};
use revcause_core::output::{format_number, round_significant};
use revcause_core::scm::{parse_key_values, KeyValue, LinearStrategy, Scenario, PRESETS};
use revcause_core::sweep::SweepSpec;
use revcause_core::verify::{self, VerifyOptions, DEFAULT_DRAWS, DEFAULT_SEED};
use revcause_core::Error;

#[derive(Parser)]
#[command(
    name = "revcause",
    version,
    about = "Personal equilibria under reverse-causality misperceptions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and report equilibrium, benchmark, and welfare.
    Solve(SolveArgs),
    /// Sweep one parameter over a grid and write CSV.
    Sweep(SweepArgs),
    /// Run the analytic / closed-form / simulation check matrix.
    Verify(VerifyArgs),
    /// List the named presets.
    Presets,
}

#[derive(Args, Default)]
struct ScenarioArgs {
    /// Start from a named preset.
    #[arg(long, conflicts_with = "scenario")]
    preset: Option<String>,
    /// Key-value scenario file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// main, exogeneity-only, or reverse-only.
    #[arg(long)]
    family: Option<String>,
    /// Direct effect of a on x (main, reverse-only).
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<String>,
    /// Direct effect of a on y (main, reverse-only).
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<String>,
    /// Direct effect of a on x (exogeneity-only).
    #[arg(long, allow_hyphen_values = true)]
    kappa: Option<String>,
    /// Effect of y on x (exogeneity-only).
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<String>,
    /// Effect of a on y (exogeneity-only).
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<String>,
    /// Variance of theta.
    #[arg(long, allow_hyphen_values = true)]
    var_theta: Option<String>,
    /// Variance of the x-equation noise.
    #[arg(long, allow_hyphen_values = true)]
    var_eps: Option<String>,
    /// Variance of the y-equation noise.
    #[arg(long, allow_hyphen_values = true)]
    var_eta: Option<String>,
    /// Sets var_eps = tau * var_eta.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "var_eps")]
    tau: Option<String>,
}

#[derive(Args)]
struct CommonArgs {
    /// Edge-list file replacing the family's subjective DAG.
    #[arg(long)]
    subjective_dag: Option<PathBuf>,
    /// Skip structural range checks; output is tagged as unsafe.
    #[arg(long)]
    unsafe_params: bool,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = Method::Newton)]
    method: Method,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Newton,
    BestReply,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    common: CommonArgs,
    /// Solve at this tremble variance only, instead of extrapolating to 0.
    #[arg(long)]
    tremble: Option<f64>,
    /// Initial slope.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    init_k: f64,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec: a scenario plus `sweep=`, `grid=`, and optional `outputs=`.
    spec: PathBuf,
    /// Output CSV path (standard output if omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    draws: u64,
    #[arg(long, env = "REVCAUSE_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    json: bool,
    /// Mutation test: add this to every closed-form denominator.
    #[arg(long, hide = true, default_value_t = 0.0, allow_hyphen_values = true)]
    mutate_closed_form: f64,
}

enum Failure {
    Usage(String),
    Numerical(String),
    Verification,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NoConvergence { .. }
            | Error::DegenerateFoc { .. }
            | Error::NotPositiveSemidefinite(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(args) => solve(args),
        Command::Sweep(args) => sweep(args),
        Command::Verify(args) => run_verify(args),
        Command::Presets => presets(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(1),
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn build_scenario(args: &ScenarioArgs, unsafe_params: bool) -> Result<Scenario, Failure> {
    let mut pairs: Vec<KeyValue> = match (&args.preset, &args.scenario) {
        (Some(name), _) => parse_key_values(&Scenario::preset(name)?.to_key_values())?,
        (None, Some(path)) => parse_key_values(&read(path)?)?,
        (None, None) => Vec::new(),
    };
    let flags = [
        ("family", &args.family),
        ("gamma", &args.gamma),
        ("lambda", &args.lambda),
        ("kappa", &args.kappa),
        ("alpha", &args.alpha),
        ("delta", &args.delta),
        ("var_theta", &args.var_theta),
        ("var_eps", &args.var_eps),
        ("var_eta", &args.var_eta),
        ("tau", &args.tau),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            if key == "tau" || key == "var_eps" {
                pairs.retain(|kv| kv.key != "tau" && kv.key != "var_eps");
            }
            if key == "family" {
                // A new family drops parameters that belonged to the old one.
                pairs.retain(|kv| kv.key.starts_with("var_") || kv.key == "tau");
            }
            pairs.push(KeyValue {
                key: key.to_string(),
                value: v.clone(),
                line: 0,
            });
        }
    }
    Ok(Scenario::from_pairs(&pairs, unsafe_params)?)
}

fn apply_dag(scenario: Scenario, path: &Option<PathBuf>) -> Result<Scenario, Failure> {
    match path {
        Some(p) => Ok(scenario.with_subjective_dag(Dag::parse_edge_list(&read(p)?)?)?),
        None => Ok(scenario),
    }
}

fn solver_config(common: &CommonArgs) -> SolverConfig {
    SolverConfig {
        tol: common.tol,
        max_iter: common.max_iter,
        method: match common.method {
            Method::Newton => IterationMethod::Newton,
            Method::BestReply => IterationMethod::BestReply,
        },
    }
}

fn warn_unsafe(scenario: &Scenario) {
    if scenario.is_unsafe() {
        eprintln!("warning: structural range checks skipped (--unsafe-params)");
    }
}

fn solve(args: SolveArgs) -> Result<(), Failure> {
    let scenario = build_scenario(&args.scenario, args.common.unsafe_params)?;
    let scenario = apply_dag(scenario, &args.common.subjective_dag)?;
    warn_unsafe(&scenario);
    let config = solver_config(&args.common);
    let report = match args.tremble {
        Some(t) => {
            let init = LinearStrategy::new(0.0, args.init_k, t)?;
            solve_personal_equilibrium(&scenario, &init, &config)?
        }
        None => solve_extrapolated(&scenario, &LinearStrategy::pure(0.0, args.init_k), &config)?,
    };
    let fields = solve_fields(&scenario, &report);
    if args.json {
        let mut obj = Map::new();
        obj.insert("family".into(), json!(scenario.family().name()));
        let params: Map<String, Value> = scenario
            .structure()
            .parameters()
            .into_iter()
            .map(|(k, v)| (k.to_string(), number(v)))
            .chain([
                ("var_theta".to_string(), number(scenario.var_theta())),
                ("var_eps".to_string(), number(scenario.var_eps())),
                ("var_eta".to_string(), number(scenario.var_eta())),
            ])
            .collect();
        obj.insert("parameters".into(), Value::Object(params));
        obj.insert(
            "subjective_dag".into(),
            json!(scenario.subjective_dag().to_string()),
        );
        obj.insert("unsafe_params".into(), json!(scenario.is_unsafe()));
        for (k, v) in &fields {
            let value = if *k == "iterations" {
                json!(report.iterations)
            } else {
                number(*v)
            };
            obj.insert(k.to_string(), value);
        }
        println!(
            "{}",
            serde_json::to_string_pretty(&Value::Object(obj)).expect("JSON value serializes")
        );
    } else {
        println!("{:<18} {}", "family", scenario.family());
        for (k, v) in scenario.structure().parameters() {
            println!("{k:<18} {}", format_number(v));
        }
        println!(
            "{:<18} {}",
            "var_theta",
            format_number(scenario.var_theta())
        );
        println!("{:<18} {}", "var_eps", format_number(scenario.var_eps()));
        println!("{:<18} {}", "var_eta", format_number(scenario.var_eta()));
        println!("{:<18} {}", "subjective_dag", scenario.subjective_dag());
        if scenario.is_unsafe() {
            println!("{:<18} true", "unsafe_params");
        }
        for (k, v) in &fields {
            println!("{k:<18} {}", format_number(*v));
        }
    }
    Ok(())
}

/// Report values shared by the human and JSON renderings. `k_closed_form`
/// is NaN (`null` in JSON) when a subjective DAG override is active.
fn solve_fields(scenario: &Scenario, report: &EquilibriumReport) -> Vec<(&'static str, f64)> {
    let closed = if scenario.has_subjective_override() {
        f64::NAN
    } else {
        closed_form_strategy(scenario)
            .map(|s| s.slope)
            .unwrap_or(f64::NAN)
    };
    vec![
        ("k_equilibrium", report.strategy.slope),
        ("b_equilibrium", report.strategy.intercept),
        ("k_benchmark", report.benchmark_strategy.slope),
        ("k_closed_form", closed),
        ("welfare", report.welfare),
        ("welfare_benchmark", report.welfare_benchmark),
        ("welfare_gap", report.welfare_gap()),
        ("c2_margin", report.c2_margin),
        ("iterations", report.iterations as f64),
        ("residual", report.residual),
    ]
}

/// JSON number carrying exactly the printed digits; non-finite becomes null.
fn number(v: f64) -> Value {
    serde_json::Number::from_f64(round_significant(v)).map_or(Value::Null, Value::Number)
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let mut spec = SweepSpec::parse(&read(&args.spec)?, args.common.unsafe_params)?;
    spec.base = apply_dag(spec.base, &args.common.subjective_dag)?;
    warn_unsafe(&spec.base);
    let rows = spec.run(&solver_config(&args.common))?;
    let csv = spec.to_csv(&rows);
    match &args.output {
        Some(path) => {
            fs::write(path, csv).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn run_verify(args: VerifyArgs) -> Result<(), Failure> {
    if args.draws == 0 {
        return Err(Failure::Usage("draws must be at least 1".into()));
    }
    let report = verify::run(&VerifyOptions {
        draws: args.draws,
        seed: args.seed,
        closed_form_shift: args.mutate_closed_form,
    })?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if args.json {
        let checks: Vec<Value> = report
            .checks
            .iter()
            .map(|c| {
                json!({
                    "name": c.name,
                    "passed": c.passed,
                    "worst_deviation": number(c.worst_deviation),
                    "tolerance": number(c.tolerance),
                    "unit": c.unit,
                    "points": c.points,
                })
            })
            .collect();
        let out = json!({
            "draws": args.draws,
            "seed": args.seed,
            "passed": report.passed(),
            "checks": checks,
        });
        println!(
            "{}",
            serde_json::to_string_pretty(&out).expect("JSON value serializes")
        );
    } else {
        println!("draws {} seed {}", args.draws, args.seed);
        for c in &report.checks {
            println!(
                "{}  {:<40} worst {:>12} {:<3} tol {:>6}  ({} points)",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                format_number(c.worst_deviation),
                c.unit,
                format_number(c.tolerance),
                c.points
            );
        }
        let passed = report.checks.iter().filter(|c| c.passed).count();
        println!("{passed}/{} checks passed", report.checks.len());
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn presets() -> Result<(), Failure> {
    for name in PRESETS {
        let s = Scenario::preset(name)?;
        let params: Vec<String> = s
            .structure()
            .parameters()
            .into_iter()
            .map(|(k, v)| format!("{k}={}", format_number(v)))
            .collect();
        println!(
            "{name:<17} {:<16} {} var_theta={} var_eps={} var_eta={}",
            s.family().name(),
            params.join(" "),
            format_number(s.var_theta()),
            format_number(s.var_eps()),
            format_number(s.var_eta())
        );
    }
    Ok(())
}
