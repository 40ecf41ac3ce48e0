use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use msvg_cli::commands::{
    exit_code, fit_command, grid_command, simulate_command, summary_command, FitArgs, GridArgs, InputArgs, EXIT_USAGE,
};
use msvg_core::ecm::Algorithm;

/// Fit the multivariate skewed variance gamma model to return data.
#[derive(Parser)]
#[command(name = "msvg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model and write <out>.txt and <out>.json (plus <out>.residuals.csv for --ar 1).
    Fit(FitCmd),
    /// Write bivariate density values on a grid as x,y,density CSV.
    Grid(GridCmd),
    /// Run a simulation study spec and write <out>.csv and <out>.json.
    Simulate(SimulateCmd),
    /// Print per-series summary statistics of the returns.
    Summary(SummaryCmd),
}

#[derive(Args)]
struct Input {
    /// Price CSV with a header row.
    input: PathBuf,
    /// Name of the date column; rows are numbered when omitted.
    #[arg(long)]
    date_column: Option<String>,
    /// Comma-separated price columns (default: all but the date column).
    #[arg(long, value_delimiter = ',')]
    columns: Option<Vec<String>>,
    /// Use simple instead of log returns.
    #[arg(long)]
    simple_returns: bool,
    /// The file holds returns already (optional leading `date` column).
    #[arg(long, conflicts_with_all = ["simple_returns", "columns", "date_column"])]
    returns: bool,
}

impl Input {
    fn args(&self) -> InputArgs {
        InputArgs {
            path: self.input.clone(),
            date_column: self.date_column.clone(),
            columns: self.columns.clone(),
            simple_returns: self.simple_returns,
            returns: self.returns,
        }
    }
}

#[derive(Args)]
struct FitCmd {
    #[command(flatten)]
    input: Input,
    /// AR order of the mean (0 or 1).
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
    ar: u8,
    /// mcecm, ecme or hecm.
    #[arg(long, default_value = "hecm")]
    algorithm: Algorithm,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Centre guard threshold (default 1e-4 for d <= 2, 1e-2 otherwise).
    #[arg(long)]
    delta: Option<f64>,
    /// Data scaling constant C.
    #[arg(long, default_value_t = 100.0)]
    scale: f64,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    /// Recorded in the report; fitting itself draws no random numbers.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path prefix.
    #[arg(long)]
    out: PathBuf,
    /// Omit wall-clock times so reruns give identical files.
    #[arg(long)]
    deterministic: bool,
}

fn pair(s: &str) -> Result<(f64, f64)> {
    let (a, b) = s.split_once(',').ok_or_else(|| anyhow!("expected two comma-separated numbers, got '{s}'"))?;
    Ok((a.trim().parse().context("lower limit")?, b.trim().parse().context("upper limit")?))
}

fn index_pair(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s.split_once(',').ok_or_else(|| anyhow!("expected two comma-separated indices, got '{s}'"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

#[derive(Args)]
struct GridCmd {
    /// Fit report JSON or a bare parameter JSON.
    #[arg(long)]
    params: PathBuf,
    #[arg(long, value_parser = pair, allow_hyphen_values = true)]
    xlim: (f64, f64),
    #[arg(long, value_parser = pair, allow_hyphen_values = true)]
    ylim: (f64, f64),
    /// Cells per axis.
    #[arg(long, default_value_t = 100)]
    res: usize,
    #[arg(long)]
    delta: Option<f64>,
    /// 1-based series indices when the fit has more than two series.
    #[arg(long, value_parser = index_pair)]
    pair: Option<(usize, usize)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateCmd {
    /// Study spec JSON.
    spec: PathBuf,
    /// Output path prefix.
    #[arg(long)]
    out: PathBuf,
    /// Omit timing fields from the sidecar.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct SummaryCmd {
    #[command(flatten)]
    input: Input,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// `MSVG_THREADS` caps the worker pool; 0 or unset means automatic.
fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("MSVG_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().with_context(|| format!("MSVG_THREADS must be a non-negative integer, got '{raw}'"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    configure_threads()?;
    match cli.command {
        Command::Fit(c) => fit_command(&FitArgs {
            input: c.input.args(),
            ar: c.ar as usize,
            algorithm: c.algorithm,
            tol: c.tol,
            delta: c.delta,
            scale: c.scale,
            max_iter: c.max_iter,
            seed: c.seed,
            out: c.out,
            deterministic: c.deterministic,
        }),
        Command::Grid(c) => grid_command(&GridArgs {
            params: c.params,
            xlim: c.xlim,
            ylim: c.ylim,
            res: c.res,
            delta: c.delta,
            pair: c.pair,
            out: c.out,
        }),
        Command::Simulate(c) => simulate_command(&c.spec, &c.out, c.deterministic),
        Command::Summary(c) => summary_command(&c.input.args(), c.out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
