//! Command-line front end: `nodal <command> --config run.toml`.
//!
//! Exit status is 0 on success, 1 for invalid input or failed validation and
//! 2 for numerical failures or unwritable output.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::{Format, Resolved, RunConfig, OUTPUT_DIR_ENV};
use crate::diagnostics::{check_bounds_suite, check_prop1, check_simon_seeded, energy_profile};
use crate::error::Error;
use crate::ivp::{integral_residuals, integrate_trajectory, Trajectory, TrajectoryStatus};
use crate::nonlinearity::validate_f;
use crate::phi::validate_phi;
use crate::report::ValidationReport;
use crate::shooting::{lambda_threshold, solve_problem, zeros_of};

#[derive(Debug, Parser)]
#[command(name = "nodal", version, about = "Radial quasilinear problems: shooting for nodal solutions")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; falls back to the config, then to $NODAL_OUTPUT_DIR, then `nodal-out`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Omit the timestamp so reruns produce identical summaries.
    #[arg(long, global = true)]
    deterministic: bool,

    #[arg(long, global = true)]
    abs_tol: Option<f64>,
    #[arg(long, global = true)]
    rel_tol: Option<f64>,
    #[arg(long, global = true)]
    boundary_tol: Option<f64>,
    #[arg(long, global = true)]
    r_tol: Option<f64>,
    #[arg(long, global = true)]
    dead_core_tol: Option<f64>,
    #[arg(long, global = true)]
    eps0: Option<f64>,
    #[arg(long, global = true)]
    max_ell: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Check phi, f and the weights.
    Validate,
    /// Integrate from u(0) = d and write `profile_ivp.csv`.
    SolveIvp,
    /// Locate the first zeros of the solution from u(0) = d.
    Zeros,
    /// Print the admissible bound on lambda.
    LambdaThreshold,
    /// Compute the levels d_0 > d_1 > ... > d_L and their profiles.
    Shoot,
    /// Energy inequalities and sampled growth bounds.
    Diagnose,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::SolveIvp => "solve-ivp",
            Command::Zeros => "zeros",
            Command::LambdaThreshold => "lambda-threshold",
            Command::Shoot => "shoot",
            Command::Diagnose => "diagnose",
        }
    }
}

/// Failure with its exit status.
struct Exit(u8, String);

impl From<Error> for Exit {
    fn from(e: Error) -> Self {
        Exit(if e.is_domain() { 1 } else { 2 }, e.to_string())
    }
}

/// Where and how artifacts are written.
struct Sink {
    dir: PathBuf,
    format: Format,
    deterministic: bool,
}

impl Sink {
    fn ensure_writable(&self) -> Result<(), Exit> {
        let probe = self.dir.join(".nodal-write-check");
        fs::create_dir_all(&self.dir)
            .and_then(|_| fs::write(&probe, b""))
            .and_then(|_| fs::remove_file(&probe))
            .map_err(|e| Exit(2, format!("output directory {} is not writable: {e}", self.dir.display())))
    }

    fn csv(&self, name: &str, traj: &Trajectory, energy: &[f64]) -> Result<(), Exit> {
        let path = self.dir.join(name);
        let file = fs::File::create(&path).map_err(|e| io_exit(&path, e))?;
        traj.write_csv(std::io::BufWriter::new(file), energy)
            .map_err(|e| io_exit(&path, e))
    }

    fn summary(&self, command: Command, config: &RunConfig, results: Value) -> Result<PathBuf, Exit> {
        let mut doc = json!({
            "tool": { "name": "nodal", "version": env!("CARGO_PKG_VERSION") },
            "command": command.name(),
            "config": serde_json::to_value(config).expect("config serializes"),
            "results": results,
        });
        if !self.deterministic {
            let now = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            doc["timestamp"] = json!(now);
        }
        let text = match self.format {
            Format::Json => serde_json::to_string_pretty(&doc).expect("summary serializes") + "\n",
            Format::Toml => toml::to_string(&strip_nulls(doc)).map_err(|e| Exit(2, e.to_string()))?,
        };
        let path = self.dir.join(format!("summary.{}", self.format.extension()));
        fs::write(&path, text).map_err(|e| io_exit(&path, e))?;
        Ok(path)
    }
}

fn io_exit(path: &Path, e: std::io::Error) -> Exit {
    Exit(2, format!("writing {}: {e}", path.display()))
}

/// TOML has no null; drop such entries.
fn strip_nulls(v: Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(
            m.into_iter()
                .filter(|(_, v)| !v.is_null())
                .map(|(k, v)| (k, strip_nulls(v)))
                .collect(),
        ),
        Value::Array(a) => Value::Array(a.into_iter().filter(|v| !v.is_null()).map(strip_nulls).collect()),
        other => other,
    }
}

fn report_value(r: &ValidationReport) -> Value {
    serde_json::to_value(r).expect("report serializes")
}

fn print_report(r: &ValidationReport) {
    for line in r.summary_lines() {
        println!("{line}");
    }
    for c in r.checks.iter().filter(|c| !c.passed()) {
        println!("violated: {} ({})", c.name, c.detail);
    }
}

/// Per-trajectory diagnostics for the summary, plus whether all passed.
fn trajectory_summary(traj: &Trajectory, res: &Resolved) -> (Value, Vec<f64>, bool) {
    let params = res.params.with_d(traj.d());
    let energy = energy_profile(traj, &params, &res.phi, &res.f);
    let residual = integral_residuals(traj, &params, &res.phi, &res.f);
    let prop1 = check_prop1(traj, &params, &res.phi, &res.f);
    let zs = zeros_of(traj, usize::MAX);
    let ok = prop1.is_pass();
    let v = json!({
        "d": traj.d(),
        "status": traj.status,
        "nodes": traj.len(),
        "r_end": traj.r.last().copied().unwrap_or(0.0),
        "u_end": traj.u.last().copied().unwrap_or(0.0),
        "zeros": zs.zeros,
        "slopes": zs.slopes,
        "extrema": zs.extrema,
        "residual": residual,
        "energy": {
            "e0": energy.e0,
            "max_increase": energy.monotone_violation,
            "max_deviation": energy.max_deviation(),
            "floor_margin": energy.floor_margin,
        },
        "prop1": report_value(&prop1),
        "picard": traj.picard,
    });
    (v, energy.e, ok)
}

fn status_exit(traj: &Trajectory) -> Result<(), Exit> {
    if traj.status == TrajectoryStatus::StepFailure {
        return Err(Exit(2, format!("step size underflow at r = {:e}", traj.r_end())));
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), Exit> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Exit(1, "missing --config <path>".into()))?;
    let mut cfg = RunConfig::load(path)?;
    let s = &mut cfg.solver;
    if let Some(x) = cli.abs_tol {
        s.abs_tol = x;
    }
    if let Some(x) = cli.rel_tol {
        s.rel_tol = x;
    }
    if let Some(x) = cli.dead_core_tol {
        s.dead_core_tol = x;
    }
    if let Some(x) = cli.max_ell {
        s.max_ell = x;
    }
    if let Some(x) = cli.seed {
        s.seed = x;
    }
    s.boundary_tol = cli.boundary_tol.or(s.boundary_tol);
    s.r_tol = cli.r_tol.or(s.r_tol);
    s.eps0 = cli.eps0.or(s.eps0);
    if let Some(f) = cli.format {
        cfg.output.format = f;
    }
    let dir = cli
        .output_dir
        .clone()
        .or_else(|| cfg.output.directory.clone())
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("nodal-out"));
    let cfg = cfg.expanded()?;
    let res = cfg.resolve()?;
    let sink = Sink {
        dir,
        format: cfg.output.format,
        deterministic: cli.deterministic,
    };
    sink.ensure_writable()?;

    let command = cli.command;
    let (results, failure) = match command {
        Command::Validate => validate(&res),
        Command::SolveIvp => solve_ivp(&cfg, &res, &sink)?,
        Command::Zeros => zeros(&cfg, &res)?,
        Command::LambdaThreshold => threshold(&res)?,
        Command::Shoot => shoot(&cfg, &res, &sink)?,
        Command::Diagnose => diagnose(&cfg, &res)?,
    };
    let written = sink.summary(command, &cfg, results)?;
    eprintln!("wrote {}", written.display());
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

type Outcome = (Value, Option<Exit>);

fn validate(res: &Resolved) -> Outcome {
    let phi_report = validate_phi(&res.phi);
    print_report(&phi_report);
    let (f_value, f_ok) = match validate_f(&res.f, res.phi.gamma1(), res.f.d_infinity()) {
        Ok(r) => {
            print_report(&r);
            let ok = r.is_pass();
            (report_value(&r), ok)
        }
        Err(e) => {
            println!("f: {e}");
            (json!({ "error": e.to_string() }), false)
        }
    };
    let ok = phi_report.is_pass() && f_ok;
    let value = json!({
        "phi": report_value(&phi_report),
        "f": f_value,
        "pass": ok,
    });
    let failure = (!ok).then(|| Exit(1, "validation failed".into()));
    (value, failure)
}

fn solve_ivp(cfg: &RunConfig, res: &Resolved, sink: &Sink) -> Result<Outcome, Exit> {
    let r_max = cfg.solver.r_max.unwrap_or(res.params.radius);
    let traj = integrate_trajectory(&res.params, &res.phi, &res.f, r_max, None, &res.solver)?;
    let (summary, energy, _) = trajectory_summary(&traj, res);
    sink.csv("profile_ivp.csv", &traj, &energy)?;
    println!("status {:?}, {} nodes, {} sign changes", traj.status, traj.len(), traj.sign_changes);
    Ok((json!({ "trajectory": summary }), status_exit(&traj).err()))
}

fn zeros(cfg: &RunConfig, res: &Resolved) -> Result<Outcome, Exit> {
    let count = cfg.solver.zero_count.unwrap_or(cfg.solver.max_ell + 1);
    let r_max = cfg.solver.r_max.unwrap_or(10.0 * res.params.radius);
    let traj = integrate_trajectory(&res.params, &res.phi, &res.f, r_max, Some(count), &res.solver)?;
    let zs = zeros_of(&traj, count);
    for (l, (z, s)) in zs.zeros.iter().zip(&zs.slopes).enumerate() {
        println!("z_{} = {z:.15e}  u' = {s:.6e}", l + 1);
    }
    if !zs.complete {
        println!("only {} of {count} zeros before r = {:e} ({:?})", zs.len(), traj.r_end(), traj.status);
    }
    Ok((json!({ "requested": count, "zeros": zs }), status_exit(&traj).err()))
}

fn threshold(res: &Resolved) -> Result<Outcome, Exit> {
    let p = &res.params;
    let lam = lambda_threshold(&res.phi, &res.f, p.alpha, p.gamma, p.radius, res.f.d_infinity())?;
    println!("{lam:?}");
    Ok((json!({ "lambda_threshold": lam, "lambda": p.lambda, "admissible": p.lambda <= lam }), None))
}

fn shoot(cfg: &RunConfig, res: &Resolved, sink: &Sink) -> Result<Outcome, Exit> {
    let p = &res.params;
    let lam = lambda_threshold(&res.phi, &res.f, p.alpha, p.gamma, p.radius, res.f.d_infinity())?;
    if p.lambda > lam {
        eprintln!("warning: lambda = {} exceeds the admissible bound {lam}", p.lambda);
    }
    let levels = cfg.solver.max_ell;
    let (result, failure) = match solve_problem(p, &res.phi, &res.f, levels, &res.shooting) {
        Ok(r) => (r, None),
        Err(partial) => {
            let exit = Exit::from(partial.error.clone());
            (partial.completed, Some(Exit(exit.0, format!("level {}: {}", partial.failed_level, exit.1))))
        }
    };
    let mut profiles = Vec::new();
    for (ell, traj) in result.profiles.iter().enumerate() {
        let (summary, energy, _) = trajectory_summary(traj, res);
        sink.csv(&format!("profile_ell{ell}.csv"), traj, &energy)?;
        profiles.push(summary);
        println!("d_{ell} = {:.15e}  ({} interior zeros)", result.d_levels[ell], result.zero_counts[ell]);
    }
    let value = json!({
        "lambda_threshold": lam,
        "lambda_used": result.lambda_used,
        "requested_levels": levels,
        "d_levels": result.d_levels,
        "zero_counts": result.zero_counts,
        "tolerances": result.tolerances,
        "profiles": profiles,
        "error": failure.as_ref().map(|e| e.1.clone()),
    });
    Ok((value, failure))
}

fn diagnose(cfg: &RunConfig, res: &Resolved) -> Result<Outcome, Exit> {
    let bounds = check_bounds_suite(&res.phi, cfg.solver.bound_samples);
    print_report(&bounds);
    let simon: Vec<ValidationReport> = (1..=3)
        .map(|dim| check_simon_seeded(&res.phi, dim, cfg.solver.simon_trials, cfg.solver.seed))
        .collect();
    simon.iter().for_each(print_report);
    let r_max = cfg.solver.r_max.unwrap_or(res.params.radius);
    let traj = integrate_trajectory(&res.params, &res.phi, &res.f, r_max, None, &res.solver)?;
    let (summary, _, traj_ok) = trajectory_summary(&traj, res);
    println!("energy inequalities along u(.; d = {}): {}", traj.d(), if traj_ok { "pass" } else { "fail" });
    let ok = bounds.is_pass() && simon.iter().all(ValidationReport::is_pass) && traj_ok;
    let value = json!({
        "bounds": report_value(&bounds),
        "simon": simon.iter().map(report_value).collect::<Vec<_>>(),
        "trajectory": summary,
        "pass": ok,
    });
    let failure = (!ok).then(|| Exit(1, "diagnostics reported violations".into()));
    Ok((value, failure))
}

/// Parses `args` (including the program name) and runs; returns the exit status.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(Exit(code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}
