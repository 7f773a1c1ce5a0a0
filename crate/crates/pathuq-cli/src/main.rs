//! `pathuq`: compute uncertainty bound curves for the built-in scenarios and
//! check them against Monte Carlo simulations of alternative models.
//!
//! Exit codes: 0 success, 1 a validation check failed, 2 configuration or
//! I/O error, 3 numerical failure.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use pathuq::scenarios::{
    run_scenario, validate_scenario, CurveTable, ParamValue, ScenarioConfig, ScenarioError, ScenarioId,
    ValidationCheck, ValidationSettings,
};
use serde_json::{json, Value};

use crate::config::{parse_inline_param, parse_inline_sweep, ConfigFile};

#[derive(Parser, Debug)]
#[command(name = "pathuq", version, about = "Relative-entropy uncertainty bounds for path-space quantities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the bound curves of a scenario and write them as CSV.
    Run(RunArgs),
    /// Compute the bounds and check them against Monte Carlo estimates.
    Validate(RunArgs),
    /// List scenarios with their parameters and default sweeps.
    List,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Scenario id: bm-cdf, bm-mean, nonrev, lq-control, queue, vasicek, rate-drop.
    scenario: String,
    /// TOML or JSON file with one table per scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV destination; `-` writes to stdout. Defaults to `<scenario>.csv`.
    #[arg(long)]
    out: Option<String>,
    /// Seed for Monte Carlo validation.
    #[arg(long, default_value_t = 20_200_506)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, env = "PATHUQ_THREADS")]
    threads: Option<usize>,
    /// Also run the Monte Carlo validation.
    #[arg(long)]
    validate: bool,
    /// Sweep as `name=v1,v2,...` or `name=start:stop:points`; `none` disables it.
    #[arg(long)]
    sweep: Option<String>,
    /// Any parameter as `name=value`; matrices as JSON nested arrays.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    set: Vec<String>,
    /// Monte Carlo paths per simulated model.
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    /// Monte Carlo time step.
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Largest number of sweep points validated.
    #[arg(long, default_value_t = 5)]
    max_points: usize,
    /// Multiplier on the entropy budget (for negative controls).
    #[arg(long, hide = true)]
    budget_scale: Option<f64>,
    #[command(flatten)]
    params: NamedParams,
}

/// Shorthand flags for the real and boolean scenario parameters.
#[derive(Args, Debug, Clone, Default)]
struct NamedParams {
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    a: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    horizon: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    strength: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    kappa: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    rho: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    epsilon: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    r: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    sigma: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    sigma_tilde: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    strike: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    level: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    dr_plus: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    t_f: Option<f64>,
    #[arg(long)]
    kappa_optimize: bool,
}

impl NamedParams {
    fn pairs(&self) -> Vec<(&'static str, ParamValue)> {
        let reals = [
            ("mu", self.mu),
            ("a", self.a),
            ("alpha", self.alpha),
            ("horizon", self.horizon),
            ("strength", self.strength),
            ("kappa", self.kappa),
            ("lambda", self.lambda),
            ("rho", self.rho),
            ("delta", self.delta),
            ("epsilon", self.epsilon),
            ("r", self.r),
            ("sigma", self.sigma),
            ("gamma", self.gamma),
            ("sigma_tilde", self.sigma_tilde),
            ("strike", self.strike),
            ("level", self.level),
            ("x0", self.x0),
            ("dr_plus", self.dr_plus),
            ("t_f", self.t_f),
        ];
        let mut out: Vec<_> = reals.into_iter().filter_map(|(k, v)| v.map(|x| (k, ParamValue::Real(x)))).collect();
        if self.kappa_optimize {
            out.push(("kappa_optimize", ParamValue::Flag(true)));
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

impl From<config::ConfigError> for CliError {
    fn from(e: config::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

/// Builds the configuration: defaults, then the file, then inline flags.
/// A scalar for the sweep variable replaces the default or file sweep unless
/// the same layer also gives a sweep.
fn build_config(args: &RunArgs) -> Result<ScenarioConfig, CliError> {
    let id = ScenarioId::parse(&args.scenario).ok_or_else(|| {
        let known: Vec<&str> = ScenarioId::ALL.iter().map(|s| s.name()).collect();
        CliError::Config(format!("unknown scenario `{}`; expected one of {}", args.scenario, known.join(", ")))
    })?;
    let mut cfg = ScenarioConfig::new(id);
    if let Some(path) = &args.config {
        let file = ConfigFile::load(path)?;
        file.apply(&mut cfg)?;
        let var = cfg.sweep.as_ref().map(|s| s.variable.clone());
        if !file.sets(id, "sweep") && var.is_some_and(|v| file.sets(id, &v)) {
            cfg.sweep = None;
        }
    }
    let mut inline = Vec::new();
    for s in &args.set {
        let (k, v) = parse_inline_param(s).map_err(|m| CliError::Config(format!("--set {s}: {m}")))?;
        inline.push((k, v));
    }
    inline.extend(args.params.pairs().into_iter().map(|(k, v)| (k.to_string(), v)));
    for (k, v) in &inline {
        cfg.set(k, v.clone()).map_err(|e| CliError::Config(format!("--{}: {e}", k.replace('_', "-"))))?;
    }
    match args.sweep.as_deref() {
        Some("none") => cfg.sweep = None,
        Some(s) => {
            let sweep = parse_inline_sweep(s).map_err(|m| CliError::Config(format!("--sweep {s}: {m}")))?;
            cfg.set_sweep(Some(sweep)).map_err(|e| CliError::Config(format!("--sweep {s}: {e}")))?;
        }
        None => {
            let var = cfg.sweep.as_ref().map(|s| s.variable.clone());
            if var.is_some_and(|v| inline.iter().any(|(k, _)| *k == v)) {
                cfg.sweep = None;
            }
        }
    }
    if let Some(s) = args.budget_scale {
        cfg.budget_scale = s;
    }
    Ok(cfg)
}

fn param_json(v: &ParamValue) -> Value {
    match v {
        ParamValue::Real(x) => json!(x),
        ParamValue::Flag(b) => json!(b),
        ParamValue::Matrix(rows) => json!(rows),
    }
}

fn config_json(cfg: &ScenarioConfig) -> Value {
    let params: serde_json::Map<String, Value> = cfg.params.iter().map(|(k, v)| (k.clone(), param_json(v))).collect();
    json!({
        "scenario": cfg.id.name(),
        "parameters": params,
        "sweep": cfg.sweep.as_ref().map(|s| json!({"variable": s.variable, "values": s.values})),
        "budget_scale": cfg.budget_scale,
    })
}

fn checks_json(checks: &[ValidationCheck]) -> Value {
    Value::Array(
        checks
            .iter()
            .map(|c| {
                let r = &c.report;
                json!({
                    "sweep": c.sweep,
                    "model": c.model,
                    "verdict": r.verdict.label(),
                    "lower": r.interval.0,
                    "upper": r.interval.1,
                    "allowance": r.allowance,
                    "estimate": r.estimate.mean,
                    "stderr": r.estimate.stderr,
                    "paths": r.estimate.n_effective,
                    "capped_fraction": r.estimate.capped_fraction,
                    "direction": r.direction(),
                    "excess_sigmas": if r.excess_sigmas.is_finite() { json!(r.excess_sigmas) } else { Value::Null },
                })
            })
            .collect(),
    )
}

fn write_output(dest: &str, contents: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Config(format!("cannot write {dest}: {e}"));
    if dest == "-" {
        std::io::stdout().lock().write_all(contents.as_bytes()).map_err(io)
    } else {
        std::fs::write(dest, contents).map_err(io)
    }
}

fn sidecar_path(out: &str, suffix: &str) -> Option<PathBuf> {
    (out != "-").then(|| {
        let p = Path::new(out);
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        p.with_file_name(format!("{stem}{suffix}.json"))
    })
}

fn execute(args: &RunArgs, validate: bool) -> Result<bool, CliError> {
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?;
    }
    let cfg = build_config(args)?;
    let out = args.out.clone().unwrap_or_else(|| format!("{}.csv", cfg.id.name()));
    let start = Instant::now();
    let table: CurveTable = run_scenario(&cfg)?;
    let bounds_seconds = start.elapsed().as_secs_f64();
    write_output(&out, &table.to_csv_string())?;

    let mut sidecar = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": config_json(&cfg),
        "output": out,
        "rows": table.len(),
        "seed": args.seed,
        "threads": rayon::current_num_threads(),
        "timings": {"bounds_seconds": bounds_seconds},
    });
    let mut passed = true;
    if validate {
        let settings =
            ValidationSettings { n_paths: args.paths, dt: args.dt, seed: args.seed, max_points: args.max_points };
        let start = Instant::now();
        let checks = validate_scenario(&cfg, &settings)?;
        sidecar["timings"]["validation_seconds"] = json!(start.elapsed().as_secs_f64());
        sidecar["validation"] = json!({
            "paths": settings.n_paths,
            "dt": settings.dt,
            "checks": checks_json(&checks),
        });
        for c in &checks {
            let at = c.sweep.map_or("-".to_string(), |x| format!("{x:?}"));
            eprintln!("{} sweep={at} model=\"{}\": {}", c.report.verdict.label(), c.model, c.report);
        }
        passed = checks.iter().all(ValidationCheck::passed);
    }
    if let Some(path) = sidecar_path(&out, "") {
        let text = serde_json::to_string_pretty(&sidecar).expect("serializable") + "\n";
        write_output(&path.to_string_lossy(), &text)?;
    } else if validate {
        eprintln!("{}", serde_json::to_string_pretty(&sidecar).expect("serializable"));
    }
    Ok(passed)
}

fn list() {
    for id in ScenarioId::ALL {
        let cfg = ScenarioConfig::new(id);
        let params: Vec<String> = cfg
            .params
            .iter()
            .map(|(k, v)| match v {
                ParamValue::Real(x) => format!("{k}={x:?}"),
                ParamValue::Flag(b) => format!("{k}={b}"),
                ParamValue::Matrix(m) => format!("{k}={m:?}"),
            })
            .collect();
        let sweep = cfg.sweep.map_or("none".to_string(), |s| format!("{} ({} points)", s.variable, s.values.len()));
        println!("{id}\n  parameters: {}\n  sweep: {sweep}", params.join(" "));
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::List => {
            list();
            return ExitCode::SUCCESS;
        }
        Command::Run(args) => execute(args, args.validate),
        Command::Validate(args) => execute(args, true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: validation failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
