//! Fit reports (text and JSON) and their parameter blocks.

use anyhow::{bail, Context, Result};
use msvg_core::ecm::{FitConfig, FitReport};
use msvg_core::infer::{aicc, observed_info, parameter_labels, standard_errors, theta_vector};
use msvg_core::msvg::{ArMsvgParams, MsvgParams, Params, Sample};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::panel::ReturnsPanel;

/// Parameters as nested lists; `beta0`/`beta1` replace `mu` for AR(1) fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<Vec<Vec<f64>>>,
    pub sigma: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub nu: f64,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix(name: &str, r: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    if r.len() != d || r.iter().any(|row| row.len() != d) {
        bail!("`{name}` must be a {d} x {d} matrix");
    }
    Ok(DMatrix::from_fn(d, d, |i, j| r[i][j]))
}

impl From<&Params> for ParamsJson {
    fn from(p: &Params) -> Self {
        let vec = |v: &DVector<f64>| v.iter().copied().collect::<Vec<f64>>();
        let (mu, beta0, beta1) = match p {
            Params::Iid(q) => (Some(vec(&q.mu)), None, None),
            Params::Ar1(q) => (None, Some(vec(&q.beta0)), Some(rows(&q.beta1))),
        };
        Self { mu, beta0, beta1, sigma: rows(p.sigma()), gamma: vec(p.gamma()), nu: p.nu() }
    }
}

impl ParamsJson {
    pub fn to_params(&self) -> Result<Params> {
        let d = self.gamma.len();
        let sigma = matrix("sigma", &self.sigma, d)?;
        let gamma = DVector::from_vec(self.gamma.clone());
        let p = match (&self.mu, &self.beta0, &self.beta1) {
            (Some(mu), None, None) => {
                Params::Iid(MsvgParams::new(DVector::from_vec(mu.clone()), sigma, gamma, self.nu)?)
            }
            (None, Some(b0), Some(b1)) => Params::Ar1(ArMsvgParams::new(
                DVector::from_vec(b0.clone()),
                matrix("beta1", b1, d)?,
                sigma,
                gamma,
                self.nu,
            )?),
            _ => bail!("parameters need either `mu` or both `beta0` and `beta1`"),
        };
        Ok(p)
    }

    /// Accepts a bare parameter object or a fit report carrying one under `params`.
    pub fn from_json_text(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text).context("parameter file is not valid JSON")?;
        let inner = v.get("params").cloned().unwrap_or(v);
        serde_json::from_value(inner).context("parameter block")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub label: String,
    pub value: f64,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettingsJson {
    pub algorithm: String,
    pub ar_order: usize,
    pub tol: f64,
    pub delta: f64,
    pub scale_c: f64,
    pub max_iter: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitOutput {
    pub model: String,
    pub n: usize,
    pub d: usize,
    pub series: Vec<String>,
    pub dropped_rows: usize,
    pub settings: SettingsJson,
    pub params: ParamsJson,
    pub estimates: Vec<Estimate>,
    /// `Sigma` scaled to unit diagonal.
    pub corr_sigma: Vec<Vec<f64>>,
    /// Correlation of `Cov(Y) = Sigma + gamma gamma' / nu`.
    pub corr_total: Vec<Vec<f64>>,
    pub loglik: f64,
    pub k: usize,
    pub aicc: Option<f64>,
    pub conv_iter: usize,
    pub switch_iter: Option<usize>,
    pub converged: bool,
    pub guarded_count: usize,
    /// `None` in deterministic mode.
    pub wall_time_s: Option<f64>,
    pub warnings: Vec<String>,
}

pub fn correlation(m: &DMatrix<f64>) -> DMatrix<f64> {
    let s: Vec<f64> = (0..m.nrows()).map(|i| m[(i, i)].sqrt()).collect();
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| if i == j { 1.0 } else { m[(i, j)] / (s[i] * s[j]) })
}

pub fn total_covariance(p: &Params) -> DMatrix<f64> {
    p.sigma() + p.gamma() * p.gamma().transpose() / p.nu()
}

/// Standard errors, AICc and correlations for a finished fit. SE failures are
/// reported as warnings rather than errors.
pub fn build_output(
    panel: &ReturnsPanel,
    sample: &Sample,
    config: &FitConfig,
    report: &FitReport,
    seed: u64,
    deterministic: bool,
) -> Result<FitOutput> {
    let p = &report.params;
    let d = p.dim();
    let guard = config.guard(d)?;
    let labels = parameter_labels(p);
    let theta = theta_vector(p);
    let mut warnings = report.warnings.clone();
    let ses = match observed_info(p, sample, guard).and_then(|info| standard_errors(&info)) {
        Ok(se) => {
            warnings.extend(se.warnings.iter().cloned());
            Some(se.values)
        }
        Err(e) => {
            warnings.push(format!("standard errors unavailable: {e}"));
            None
        }
    };
    let estimates = labels
        .iter()
        .enumerate()
        .map(|(i, l)| Estimate { label: l.clone(), value: theta[i], se: ses.as_ref().map(|s| s[i]) })
        .collect();
    let k = p.free_parameter_count();
    let n = report.n_obs;
    Ok(FitOutput {
        model: if p.is_ar() { "MSVG-AR(1)".into() } else { "MSVG".into() },
        n,
        d,
        series: panel.series_names.clone(),
        dropped_rows: panel.dropped_rows,
        settings: SettingsJson {
            algorithm: config.algorithm.to_string(),
            ar_order: config.ar_order,
            tol: config.tol,
            delta: guard.delta_cap,
            scale_c: config.scale_c,
            max_iter: config.max_iter,
            seed,
        },
        params: ParamsJson::from(p),
        estimates,
        corr_sigma: rows(&correlation(p.sigma())),
        corr_total: rows(&correlation(&total_covariance(p))),
        loglik: report.final_loglik,
        k,
        aicc: aicc(report.final_loglik, k, n).ok(),
        conv_iter: report.conv_iter,
        switch_iter: report.switch_iter,
        converged: report.converged,
        guarded_count: report.guarded_count_final,
        wall_time_s: (!deterministic).then_some(report.wall_time),
        warnings,
    })
}

fn matrix_block(title: &str, m: &[Vec<f64>], out: &mut String) {
    out.push_str(title);
    out.push('\n');
    for row in m {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>8.4}")).collect();
        out.push_str(&format!("  {}\n", cells.join(" ")));
    }
}

/// Human-readable report in the layout of the JSON twin.
pub fn render_text(o: &FitOutput) -> String {
    let mut out = String::new();
    out.push_str(&format!("{} fit ({}), n = {}, d = {}\n", o.model, o.settings.algorithm, o.n, o.d));
    out.push_str(&format!("series: {}\n", o.series.join(", ")));
    out.push_str(&format!("dropped price rows: {}\n", o.dropped_rows));
    out.push_str(&format!(
        "tol = {:e}, delta = {:e}, scale C = {}\n\n",
        o.settings.tol, o.settings.delta, o.settings.scale_c
    ));
    out.push_str(&format!("{:<16} {:>24} {:>24}\n", "parameter", "estimate", "std.error"));
    for e in &o.estimates {
        let se = e.se.map_or_else(|| "NA".to_string(), |s| format!("{s:.16e}"));
        out.push_str(&format!("{:<16} {:>24} {:>24}\n", e.label, format!("{:.16e}", e.value), se));
    }
    out.push('\n');
    matrix_block("corr_sigma", &o.corr_sigma, &mut out);
    matrix_block("corr_total", &o.corr_total, &mut out);
    out.push('\n');
    out.push_str(&format!("loglik       {:.10}\n", o.loglik));
    out.push_str(&format!("k            {}\n", o.k));
    match o.aicc {
        Some(a) => out.push_str(&format!("AICc         {a:.4}\n")),
        None => out.push_str("AICc         NA\n"),
    }
    out.push_str(&format!("conv_iter    {}\n", o.conv_iter));
    if let Some(s) = o.switch_iter {
        out.push_str(&format!("switch_iter  {s}\n"));
    }
    out.push_str(&format!("converged    {}\n", o.converged));
    out.push_str(&format!("guarded      {}\n", o.guarded_count));
    if let Some(t) = o.wall_time_s {
        out.push_str(&format!("time_s       {t:.3}\n"));
    }
    for w in &o.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}

/// `y_i - beta0 - beta1 y_{i-1}` for every modelled row.
pub fn ar_residuals(p: &ArMsvgParams, sample: &Sample) -> DMatrix<f64> {
    let ys = sample.responses();
    let d = p.dim();
    DMatrix::from_fn(ys.len(), d, |i, j| {
        let x = sample.regressor(i).expect("AR sample has regressors");
        let e = &ys[i] - &p.beta0 - &p.beta1 * x;
        e[j]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_round_trip() {
        let p = Params::Iid(MsvgParams::base_bivariate(2.0));
        let j = ParamsJson::from(&p);
        let text = serde_json::to_string(&serde_json::json!({ "params": j })).unwrap();
        assert_eq!(ParamsJson::from_json_text(&text).unwrap().to_params().unwrap(), p);
        let bad = r#"{"mu": [0, 0], "beta0": [0, 0], "sigma": [[1, 0], [0, 1]], "gamma": [0, 0], "nu": 1}"#;
        assert!(ParamsJson::from_json_text(bad).unwrap().to_params().is_err());
    }

    #[test]
    fn correlations() {
        let p = Params::Iid(MsvgParams::base_bivariate(2.0));
        let c = correlation(p.sigma());
        assert!((c[(0, 1)] - 0.4).abs() < 1e-15 && c[(1, 1)] == 1.0);
        let t = total_covariance(&p);
        assert!((t[(0, 1)] - (0.4 + 0.06 / 2.0)).abs() < 1e-15);
    }
}
