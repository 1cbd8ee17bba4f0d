//! Library side of the `zidrm` binary: argument parsing, CSV input, and
//! report rendering.

pub mod config;
pub mod fit;
pub mod input;
pub mod simulate;
pub mod table;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use zidrm_core::{BasisKind, BootstrapKind, CiMethod, SolverOptions};

use config::{AnalysisConfig, DataSource, OutputFormat};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(#[from] zidrm_core::Error),
}

impl CliError {
    /// 1 for usage, I/O and input problems; 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "zidrm",
    version,
    about = "Two-sample inference for zero-inflated data under a density ratio model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit observed data from CSV.
    Fit(FitArgs),
    /// Run a Monte Carlo study.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// DRM basis: log, identity or log+identity.
    #[arg(long, default_value = "log")]
    pub basis: BasisKind,
    /// Interval methods, comma separated (I1, I1B, I4, I4L).
    #[arg(long, value_delimiter = ',', default_value = "I4,I4L")]
    pub ci: Vec<CiMethod>,
    #[arg(long, default_value_t = 0.05)]
    pub gamma: f64,
    #[arg(long = "bootstrap-b", default_value_t = 999)]
    pub bootstrap_b: usize,
    /// studentized or percentile.
    #[arg(long = "bootstrap-kind", default_value = "studentized")]
    pub bootstrap_kind: BootstrapKind,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: OutputFormat,
    #[arg(long = "grad-tol", default_value_t = SolverOptions::default().grad_tol)]
    pub grad_tol: f64,
    #[arg(long = "max-iter", default_value_t = SolverOptions::default().max_iter)]
    pub max_iter: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// One CSV with `group` and `value` columns.
    #[arg(long, conflicts_with_all = ["input0", "input1"])]
    pub input: Option<PathBuf>,
    /// CSV with a `value` column for sample 0.
    #[arg(long, requires = "input1")]
    pub input0: Option<PathBuf>,
    /// CSV with a `value` column for sample 1.
    #[arg(long, requires = "input0")]
    pub input1: Option<PathBuf>,
    /// Functionals: mean_pair, mean_and_m2, mean_and_xlogx, moment_<k>.
    #[arg(long, value_delimiter = ',', default_value = "mean_pair")]
    pub functional: Vec<String>,
    /// Maps: identity, ratio, log_ratio, variance_pair, variance_diff,
    /// cv_pair, cv_diff, ge1_pair, ge1_diff.
    #[arg(long, value_delimiter = ',', default_value = "ratio")]
    pub map: Vec<String>,
    /// Null value(s) for the Wald test of each map with matching dimension.
    #[arg(long = "test-null", value_delimiter = ',', allow_negative_numbers = true)]
    pub test_null: Option<Vec<f64>>,
    /// Values at or below this count as zeros.
    #[arg(long = "zero-tol", default_value_t = 0.0)]
    pub zero_tol: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Preset names, comma separated (model1 .. model10).
    #[arg(long, value_delimiter = ',')]
    pub model: Vec<String>,
    /// Sample sizes of sample 0; paired with --n1.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub n0: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub n1: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    /// JSON scenario with fields name, v, a, b, n.
    #[arg(long = "scenario-file")]
    pub scenario_file: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

fn apply_common(cfg: &mut AnalysisConfig, c: &Common) -> Result<(), CliError> {
    if !(c.gamma > 0.0 && c.gamma < 1.0) {
        return Err(CliError::Usage(format!("--gamma must be in (0, 1), got {}", c.gamma)));
    }
    if c.workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    if c.ci.contains(&CiMethod::I1B) && c.bootstrap_b == 0 {
        return Err(CliError::Usage("--bootstrap-b must be at least 1".into()));
    }
    cfg.basis = c.basis;
    cfg.cis = c.ci.clone();
    cfg.gamma = c.gamma;
    cfg.bootstrap_b = c.bootstrap_b;
    cfg.bootstrap_kind = c.bootstrap_kind;
    cfg.seed = c.seed;
    cfg.workers = c.workers;
    cfg.out = c.out.clone();
    cfg.format = c.format;
    cfg.solver.grad_tol = c.grad_tol;
    cfg.solver.max_iter = c.max_iter;
    Ok(())
}

pub fn fit_config(a: &FitArgs) -> Result<AnalysisConfig, CliError> {
    let source = match (&a.input, &a.input0, &a.input1) {
        (Some(p), None, None) => DataSource::Grouped { input: p.clone() },
        (None, Some(p0), Some(p1)) => DataSource::Files {
            input0: p0.clone(),
            input1: p1.clone(),
        },
        _ => return Err(CliError::Usage("give --input, or both --input0 and --input1".into())),
    };
    let mut cfg = AnalysisConfig::new(source);
    apply_common(&mut cfg, &a.common)?;
    cfg.functionals = a.functional.clone();
    cfg.maps = a.map.clone();
    cfg.test_null = a.test_null.clone();
    cfg.zero_tol = a.zero_tol;
    Ok(cfg)
}

pub fn simulate_config(a: &SimulateArgs) -> Result<AnalysisConfig, CliError> {
    if a.n0.len() != a.n1.len() {
        return Err(CliError::Usage("--n0 and --n1 need the same number of entries".into()));
    }
    let models = if a.model.is_empty() && a.scenario_file.is_none() {
        vec!["model1".to_string()]
    } else {
        a.model.clone()
    };
    let mut cfg = AnalysisConfig::new(DataSource::Scenarios {
        models,
        sizes: a.n0.iter().zip(&a.n1).map(|(x, y)| [*x, *y]).collect(),
        scenario_file: a.scenario_file.clone(),
    });
    apply_common(&mut cfg, &a.common)?;
    cfg.reps = a.reps;
    Ok(cfg)
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

fn emit(cfg: &AnalysisConfig, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &cfg.out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(e.to_string())),
    }
}

fn dispatch(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(a) => {
            let cfg = fit_config(&a)?;
            let report = fit::run_fit(&cfg)?;
            let text = match cfg.format {
                OutputFormat::Json => to_json(&report),
                OutputFormat::Table => fit::render_fit_table(&report),
            };
            emit(&cfg, &text, stdout)
        }
        Command::Simulate(a) => {
            let cfg = simulate_config(&a)?;
            let report = simulate::run_simulate(&cfg)?;
            for r in &report.reports {
                let _ = writeln!(
                    stderr,
                    "{} ({},{}): {} replicates in {:.2}s",
                    r.scenario.name, r.scenario.n[0], r.scenario.n[1], r.reps, r.wall_clock_secs
                );
            }
            let text = match cfg.format {
                OutputFormat::Json => to_json(&report),
                OutputFormat::Table => simulate::render_sim_table(&report),
            };
            emit(&cfg, &text, stdout)
        }
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = write!(stderr, "{e}");
            return 1;
        }
        Err(e) => {
            let _ = write!(stdout, "{e}");
            return 0;
        }
    };
    match dispatch(cli, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
