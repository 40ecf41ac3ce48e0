//! Subcommand bodies. Each returns the process exit code on success.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use msvg_core::ecm::{fit_sample, Algorithm, FitConfig};
use msvg_core::harness::{delta_sweep, run_study, skew_sweep, StudySpec};
use msvg_core::msvg::{density_grid, marginal, CenterGuard, MsvgParams, Params, Sample};

use crate::panel::{load_returns, read_return_matrix, LoadOptions, ReturnsPanel};
use crate::report::{ar_residuals, build_output, render_text, ParamsJson};
use crate::stats::{summarize, summary_table};

/// Exit code for usage and schema errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for numerical failures (and non-converged fits).
pub const EXIT_NUMERIC: i32 = 1;

/// Configuration and dimension-support errors from the library are usage
/// errors, the rest numerical; anything else (files, parsing) is usage.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<msvg_core::Error>() {
            return match e {
                msvg_core::Error::Config(_) | msvg_core::Error::UnsupportedDimension(_) => EXIT_USAGE,
                _ => EXIT_NUMERIC,
            };
        }
    }
    EXIT_USAGE
}

#[derive(Debug, Clone)]
pub struct InputArgs {
    pub path: PathBuf,
    pub date_column: Option<String>,
    pub columns: Option<Vec<String>>,
    pub simple_returns: bool,
    /// The file already holds returns.
    pub returns: bool,
}

pub fn read_panel(input: &InputArgs) -> Result<ReturnsPanel> {
    if input.returns {
        let file = fs::File::open(&input.path).with_context(|| format!("cannot open {}", input.path.display()))?;
        return read_return_matrix(file);
    }
    let opts = LoadOptions {
        date_column: input.date_column.clone(),
        price_columns: input.columns.clone(),
        log_returns: !input.simple_returns,
    };
    load_returns(&input.path, &opts)
}

#[derive(Debug, Clone)]
pub struct FitArgs {
    pub input: InputArgs,
    pub ar: usize,
    pub algorithm: Algorithm,
    pub tol: f64,
    pub delta: Option<f64>,
    pub scale: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub deterministic: bool,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn fit_command(args: &FitArgs) -> Result<i32> {
    let panel = read_panel(&args.input)?;
    let config = FitConfig {
        algorithm: args.algorithm,
        tol: args.tol,
        max_iter: args.max_iter,
        delta_cap: args.delta,
        scale_c: args.scale,
        ar_order: args.ar,
        ..FitConfig::real_data(args.algorithm, args.ar)
    };
    config.validate()?;
    let sample = if args.ar == 1 { Sample::ar1(&panel.values)? } else { Sample::iid(&panel.values) };
    let report = fit_sample(&sample, &config).context("fit failed")?;
    let output = build_output(&panel, &sample, &config, &report, args.seed, args.deterministic)?;
    write(&with_suffix(&args.out, ".txt"), &render_text(&output))?;
    write(&with_suffix(&args.out, ".json"), &(serde_json::to_string_pretty(&output)? + "\n"))?;
    if let Params::Ar1(p) = &report.params {
        let res = ReturnsPanel {
            dates: panel.dates[1..].to_vec(),
            values: ar_residuals(p, &sample),
            series_names: panel.series_names.clone(),
            dropped_rows: 0,
        };
        write(&with_suffix(&args.out, ".residuals.csv"), &res.to_csv()?)?;
    }
    if !report.converged {
        eprintln!("fit did not converge within {} cycles; the report shows the last iterate", args.max_iter);
        return Ok(EXIT_NUMERIC);
    }
    Ok(0)
}

#[derive(Debug, Clone)]
pub struct GridArgs {
    pub params: PathBuf,
    pub xlim: (f64, f64),
    pub ylim: (f64, f64),
    pub res: usize,
    pub delta: Option<f64>,
    /// 1-based series indices for fits with `d > 2`.
    pub pair: Option<(usize, usize)>,
    pub out: PathBuf,
}

/// The innovation density for AR(1) fits, i.e. the model with zero location.
fn grid_params(p: &Params) -> MsvgParams {
    match p {
        Params::Iid(q) => q.clone(),
        Params::Ar1(q) => MsvgParams { mu: q.beta0.clone() * 0.0, sigma: q.sigma.clone(), gamma: q.gamma.clone(), nu: q.nu },
    }
}

pub fn grid_csv(p: &MsvgParams, args: &GridArgs) -> Result<String> {
    let p = match args.pair {
        Some((a, b)) => {
            if a == 0 || b == 0 || a == b {
                bail!("--pair needs two distinct 1-based indices");
            }
            marginal(p, &[a - 1, b - 1])?
        }
        None => p.clone(),
    };
    if p.dim() != 2 {
        return Err(msvg_core::Error::UnsupportedDimension(format!(
            "grid needs d = 2 (got d = {}); pick two series with --pair",
            p.dim()
        ))
        .into());
    }
    let guard = match args.delta {
        Some(v) => CenterGuard::new(v)?,
        None => CenterGuard::default_for_dim(2),
    };
    let g = density_grid(&p, args.xlim, args.ylim, args.res, guard)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "density"])?;
    for (j, y) in g.ys.iter().enumerate() {
        for (i, x) in g.xs.iter().enumerate() {
            w.write_record([format!("{x:.16e}"), format!("{y:.16e}"), format!("{:.16e}", g.at(i, j))])?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn grid_command(args: &GridArgs) -> Result<i32> {
    let text = fs::read_to_string(&args.params).with_context(|| format!("cannot read {}", args.params.display()))?;
    let params = ParamsJson::from_json_text(&text)?.to_params()?;
    write(&args.out, &grid_csv(&grid_params(&params), args)?)?;
    Ok(0)
}

pub fn simulate_command(spec_path: &Path, out: &Path, deterministic: bool) -> Result<i32> {
    let text = fs::read_to_string(spec_path).with_context(|| format!("cannot read {}", spec_path.display()))?;
    let spec = StudySpec::from_json(&text)?;
    let result = if spec.delta_levels.is_some() {
        let (res, notes) = delta_sweep(&spec)?;
        for n in notes {
            eprintln!("note: {n}");
        }
        res
    } else if spec.gamma_levels.is_some() {
        skew_sweep(&spec)?
    } else {
        run_study(&spec)?
    };
    write(&with_suffix(out, ".csv"), &result.to_csv()?)?;
    let mut side = result.sidecar();
    if deterministic {
        if let Some(obj) = side.as_object_mut() {
            obj.remove("wall_time_s");
        }
        if let Some(cells) = side["cells"].as_array_mut() {
            for c in cells {
                if let Some(obj) = c.as_object_mut() {
                    obj.remove("total_time_s");
                }
            }
        }
    }
    write(&with_suffix(out, ".json"), &(serde_json::to_string_pretty(&side)? + "\n"))?;
    let flagged = result.flagged_cells();
    if flagged > 0 {
        eprintln!("{flagged} cell(s) flagged: more than 20% of replicates failed");
        return Ok(EXIT_NUMERIC);
    }
    Ok(0)
}

pub fn summary_command(input: &InputArgs, out: Option<&Path>) -> Result<i32> {
    let panel = read_panel(input)?;
    let mut text = format!("n = {}, dropped price rows = {}\n", panel.n(), panel.dropped_rows);
    text.push_str(&summary_table(&summarize(&panel)));
    match out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(0)
}
