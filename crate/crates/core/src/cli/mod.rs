//! Command-line front end: `solve`, `simulate`, `plot`.

pub mod matrix_io;
pub mod plot;
pub mod results;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use crate::error::Error;
use crate::metrics::{heywood_check, psi_residual};
use crate::simlab::{run_experiment, ExperimentConfig};
use crate::solvers::{
    fit, numerical_rank, objective_f, rmtfa_fixed_point_residual, soft_impute_fixed_point_residual, Control,
    Method, StopRule,
};
use matrix_io::{write_matrix, MatrixFormat};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 1;
pub const EXIT_ARGS: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hetero-spectra", version, about = "Relaxed MTFA and heteroskedastic PCA toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decompose one covariance matrix.
    Solve(SolveArgs),
    /// Run a simulation sweep and write a results CSV.
    Simulate(SimulateArgs),
    /// Render a results CSV as an SVG line chart.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    /// Symmetric matrix, dense CSV or Matrix Market array (`.mtx`).
    #[arg(long)]
    pub input: PathBuf,
    /// svd, dd, hpca, dhpca, hpca_plus, rmtfa or si.
    #[arg(long)]
    pub method: String,
    /// Threshold for rmtfa and si.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Target rank for the spectral methods.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Results CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config replicate count.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Worker threads; output does not depend on it.
    #[arg(long, env = "HETERO_SPECTRA_JOBS")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    /// Results CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// SVG path.
    #[arg(long)]
    pub out: PathBuf,
}

/// A failed command: message plus process exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::new(EXIT_PARSE, format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Plot(a) => cmd_plot(&a),
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSummary {
    pub method: String,
    pub tau: Option<f64>,
    pub rank: Option<usize>,
    pub p: usize,
    pub objective: f64,
    pub psi: f64,
    /// Rank of `L` at the `1e-8` relative eigenvalue cutoff.
    pub l_rank: usize,
    pub heywood: bool,
    pub converged: bool,
    pub iterations: Option<usize>,
    /// `‖L - prox(poffdiag Σ + pdiag L)‖_F` for the threshold methods.
    pub fixed_point_residual: Option<f64>,
    /// The same divided by `max(1, ‖L‖_F)`; the stopping rule bounds this one.
    pub relative_fixed_point_residual: Option<f64>,
}

fn solve_control(args: &SolveArgs, method: Method) -> Result<Control, CliError> {
    match (method.uses_tau(), args.tau, args.rank) {
        (true, Some(t), None) if t > 0.0 && t.is_finite() => Ok(Control::Tau(t)),
        (true, Some(t), None) => Err(CliError::new(EXIT_ARGS, format!("--tau must be > 0, got {t}"))),
        (false, None, Some(r)) if r >= 1 => Ok(Control::Rank(r)),
        (false, None, Some(_)) => Err(CliError::new(EXIT_ARGS, "--rank must be >= 1")),
        (true, _, _) => Err(CliError::new(EXIT_ARGS, format!("method {method} takes --tau only"))),
        (false, _, _) => Err(CliError::new(EXIT_ARGS, format!("method {method} takes --rank only"))),
    }
}

pub fn cmd_solve(args: &SolveArgs) -> Result<(), CliError> {
    let method: Method = args.method.parse().map_err(|e: Error| CliError::new(EXIT_ARGS, e.to_string()))?;
    let control = solve_control(args, method)?;
    let sigma = matrix_io::parse_matrix(&args.input, MatrixFormat::from_path(&args.input))
        .map_err(|e| io_err(&args.input, e))?;
    if let Control::Rank(r) = control {
        if r > sigma.dim() {
            return Err(CliError::new(
                EXIT_ARGS,
                format!("--rank {r} exceeds the matrix dimension {}", sigma.dim()),
            ));
        }
    }
    let solver_err = |e: Error| CliError::new(EXIT_ARGS, format!("solver failed: {e}"));
    let f = fit(method, &sigma, control, StopRule::default()).map_err(solver_err)?;
    let tau = match control {
        Control::Tau(t) => Some(t),
        Control::Rank(_) => None,
    };
    let fixed_point_residual = match (method, tau) {
        (Method::Rmtfa, Some(t)) => Some(rmtfa_fixed_point_residual(&sigma, &f.l, t).map_err(solver_err)?),
        (Method::Si, Some(t)) => Some(soft_impute_fixed_point_residual(&sigma, &f.l, t).map_err(solver_err)?),
        _ => None,
    };
    let summary = SolveSummary {
        method: method.tag().to_string(),
        tau,
        rank: match control {
            Control::Rank(r) => Some(r),
            Control::Tau(_) => None,
        },
        p: sigma.dim(),
        objective: objective_f(&sigma, &f.l, &f.d, tau.unwrap_or(0.0)).map_err(solver_err)?,
        psi: psi_residual(&sigma, &f.l, &f.d).map_err(solver_err)?,
        l_rank: numerical_rank(&f.l).map_err(solver_err)?,
        heywood: heywood_check(&f.d),
        converged: f.converged(),
        iterations: f.trace.as_ref().map(|t| t.iterations),
        fixed_point_residual,
        relative_fixed_point_residual: fixed_point_residual.map(|r| r / f.l.frobenius_norm().max(1.0)),
    };

    let out = &args.out;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let write = |name: &str, m| write_matrix(&out.join(name), m, MatrixFormat::CsvDense).map_err(|e| io_err(out, e));
    write("L.csv", &f.l)?;
    write("D.csv", &f.d)?;
    let mut trace = String::from("k,objective,fixed_point_residual,psi\n");
    for r in f.trace.iter().flat_map(|t| &t.records) {
        trace.push_str(&format!(
            "{},{},{},{}\n",
            r.k,
            matrix_io::fmt_f64(r.objective),
            matrix_io::fmt_f64(r.fixed_point_residual),
            matrix_io::fmt_f64(r.psi)
        ));
    }
    write_file(&out.join("trace.csv"), trace)?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::new(EXIT_PARSE, e.to_string()))?;
    write_file(&out.join("summary.json"), json + "\n")?;

    if summary.converged {
        info!("{method}: wrote {}", out.display());
        Ok(())
    } else {
        Err(CliError::new(
            EXIT_NOT_CONVERGED,
            format!(
                "{method} did not converge in {} iterations; last iterate written to {}",
                summary.iterations.unwrap_or(0),
                out.display()
            ),
        ))
    }
}

/// Reads, overrides and validates an experiment config. Every failure is an argument error.
pub fn load_config(args: &SimulateArgs) -> Result<ExperimentConfig, CliError> {
    let bad = |msg: String| CliError::new(EXIT_ARGS, format!("{}: {msg}", args.config.display()));
    let text = fs::read_to_string(&args.config).map_err(|e| bad(e.to_string()))?;
    let mut config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.replicates {
        config.replicates = n;
    }
    config.validate().map_err(|e| bad(e.to_string()))?;
    Ok(config)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let config = load_config(args)?;
    if args.jobs == Some(0) {
        return Err(CliError::new(EXIT_ARGS, "--jobs must be >= 1"));
    }
    let rows = run_experiment(&config, args.jobs).map_err(|e| CliError::new(EXIT_ARGS, e.to_string()))?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    if failed > 0 {
        warn!("{failed} of {} rows did not finish with status ok", rows.len());
    }
    let text = results::to_csv_string(&rows).map_err(|e| CliError::new(EXIT_PARSE, e.to_string()))?;
    write_file(&args.out, text)?;
    info!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(())
}

pub fn cmd_plot(args: &PlotArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.input).map_err(|e| io_err(&args.input, e))?;
    let rows = results::parse_results(&text).map_err(|e| io_err(&args.input, e))?;
    let series = plot::aggregate(&rows);
    if series.is_empty() {
        return Err(CliError::new(
            EXIT_ARGS,
            format!("{}: no rows with a sin_theta value", args.input.display()),
        ));
    }
    let mut params: Vec<&str> = rows.iter().map(|r| r.param.as_str()).collect();
    params.dedup();
    if params.len() > 1 {
        warn!("results mix several swept parameters: {params:?}");
    }
    write_file(&args.out, plot::render_svg(&series, params[0]))
}
