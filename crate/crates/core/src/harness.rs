//! Replicated simulation studies: algorithm races, delta sweeps and skew sweeps.
//!
//! A study crosses algorithms, delta levels and skew levels into cells. Every
//! replicate index owns one ChaCha stream, so a given replicate sees the same
//! random numbers in every cell (the data differ across skew levels only
//! through the parameters). Replicates run in parallel and are aggregated in
//! index order.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::ecm::{fit, Algorithm, FitConfig};
use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::msvg::{sample_with_rng, Fnv, MsvgParams, Params};

/// Share of failed replicates above which a cell is flagged.
const FLAG_FAILURE_SHARE: f64 = 0.2;

/// JSON form of [`MsvgParams`] (`sigma` as rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub nu: f64,
}

impl ParamSpec {
    pub fn to_params(&self) -> Result<MsvgParams> {
        let d = self.mu.len();
        if self.sigma.len() != d || self.sigma.iter().any(|r| r.len() != d) {
            return Err(Error::Config(format!("field `sigma`: expected a {d} x {d} matrix")));
        }
        let sigma = DMatrix::from_fn(d, d, |i, j| self.sigma[i][j]);
        MsvgParams::new(DVector::from_vec(self.mu.clone()), sigma, DVector::from_vec(self.gamma.clone()), self.nu)
    }
}

impl From<&MsvgParams> for ParamSpec {
    fn from(p: &MsvgParams) -> Self {
        let d = p.dim();
        Self {
            mu: p.mu.iter().copied().collect(),
            sigma: (0..d).map(|i| (0..d).map(|j| p.sigma[(i, j)]).collect()).collect(),
            gamma: p.gamma.iter().copied().collect(),
            nu: p.nu,
        }
    }
}

/// Fitting options shared by every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub min_iter: usize,
    pub scale_c: f64,
    pub nu_bounds: (f64, f64),
    /// Used when the study has no `delta_levels`; `None` means the default.
    pub delta_cap: Option<f64>,
}

impl Default for FitSettings {
    fn default() -> Self {
        let c = FitConfig::default();
        Self { tol: c.tol, max_iter: c.max_iter, min_iter: c.min_iter, scale_c: c.scale_c, nu_bounds: c.nu_bounds, delta_cap: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    #[serde(default)]
    pub name: String,
    pub true_params: ParamSpec,
    pub n: usize,
    pub r: usize,
    pub seed: u64,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub delta_levels: Option<Vec<f64>>,
    #[serde(default)]
    pub gamma_levels: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub fit: FitSettings,
}

impl StudySpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: StudySpec = serde_json::from_str(text).map_err(|e| Error::Config(format!("study spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Checks every field; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Err(Error::Config(format!("field `{name}`: {msg}")));
        let truth = self.true_params.to_params().map_err(|e| Error::Config(format!("field `true_params`: {e}")))?;
        let d = truth.dim();
        if self.r < 1 {
            return field("r", "must be at least 1".into());
        }
        if self.n < 10 * d {
            return field("n", format!("must be at least 10 * d = {}", 10 * d));
        }
        if self.algorithms.is_empty() {
            return field("algorithms", "must list at least one algorithm".into());
        }
        if let Some(levels) = &self.delta_levels {
            if levels.is_empty() || levels.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return field("delta_levels", "must be a non-empty list of positive numbers".into());
            }
        }
        if let Some(levels) = &self.gamma_levels {
            if levels.is_empty() || levels.iter().any(|g| g.len() != d || g.iter().any(|v| !v.is_finite())) {
                return field("gamma_levels", format!("must be a non-empty list of length-{d} vectors"));
            }
        }
        let f = &self.fit;
        if !(f.tol > 0.0) {
            return field("fit.tol", "must be positive".into());
        }
        if !(f.scale_c > 0.0 && f.scale_c.is_finite()) {
            return field("fit.scale_c", "must be positive".into());
        }
        if !(f.nu_bounds.0 > 0.0 && f.nu_bounds.1 > f.nu_bounds.0) {
            return field("fit.nu_bounds", "must satisfy 0 < lower < upper".into());
        }
        if f.delta_cap.is_some_and(|v| !(v > 0.0)) {
            return field("fit.delta_cap", "must be positive".into());
        }
        Ok(())
    }

    fn truth(&self) -> Result<MsvgParams> {
        self.true_params.to_params()
    }

    fn deltas(&self) -> Vec<Option<f64>> {
        match &self.delta_levels {
            Some(v) => v.iter().map(|&x| Some(x)).collect(),
            None => vec![self.fit.delta_cap],
        }
    }

    fn gammas(&self, truth: &MsvgParams) -> Vec<DVector<f64>> {
        match &self.gamma_levels {
            Some(v) => v.iter().map(|g| DVector::from_vec(g.clone())).collect(),
            None => vec![truth.gamma.clone()],
        }
    }
}

/// Data for replicate `index`: stream `index` of the ChaCha generator keyed by `seed`.
pub fn replicate_data(params: &MsvgParams, n: usize, seed: u64, index: usize) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    sample_with_rng(params, n, rng)
}

/// FNV-1a hash of a data matrix.
pub fn data_hash(data: &DMatrix<f64>) -> u64 {
    let mut h = Fnv::default();
    h.write_all(data.iter());
    h.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellKey {
    pub algorithm: Algorithm,
    pub delta: Option<f64>,
    pub gamma: Vec<f64>,
}

impl CellKey {
    pub fn label(&self) -> String {
        let delta = self.delta.map_or_else(|| "default".to_string(), |v| format!("{v:e}"));
        let gamma: Vec<String> = self.gamma.iter().map(|v| v.to_string()).collect();
        format!("{} delta={} gamma=({})", self.algorithm, delta, gamma.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub data_hash: u64,
    /// Estimates in [`crate::infer::theta_vector`] order; `None` on failure.
    pub estimates: Option<Vec<f64>>,
    pub loglik: Option<f64>,
    pub conv_iter: usize,
    pub switch_iter: Option<usize>,
    pub converged: bool,
    pub wall_time: f64,
    pub error: Option<String>,
}

impl ReplicateOutcome {
    pub fn ok(&self) -> bool {
        self.error.is_none() && self.converged
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub key: CellKey,
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
    /// Monte Carlo standard error of each mean.
    pub mc_se: Vec<f64>,
    pub mean_loglik: f64,
    pub mc_se_loglik: f64,
    pub mean_conv_iter: f64,
    pub mean_switch_iter: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
    pub flagged: bool,
    pub total_time: f64,
    pub replicates: Vec<ReplicateOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub spec: StudySpec,
    pub labels: Vec<String>,
    pub cells: Vec<CellSummary>,
    pub wall_time: f64,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = values.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (m, f64::NAN);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1) as f64;
    (m, (var / k as f64).sqrt())
}

fn theta_of(p: &MsvgParams) -> Vec<f64> {
    crate::infer::theta_vector(&Params::Iid(p.clone())).iter().copied().collect()
}

fn summarise(key: CellKey, truth: &MsvgParams, replicates: Vec<ReplicateOutcome>) -> CellSummary {
    let good: Vec<&ReplicateOutcome> = replicates.iter().filter(|r| r.ok()).collect();
    let truth_v = theta_of(truth);
    let k = truth_v.len();
    let mut mean = Vec::with_capacity(k);
    let mut mc_se = Vec::with_capacity(k);
    for j in 0..k {
        let col: Vec<f64> = good.iter().filter_map(|r| r.estimates.as_ref().map(|e| e[j])).collect();
        let (m, s) = mean_and_se(&col);
        mean.push(m);
        mc_se.push(s);
    }
    let ll: Vec<f64> = good.iter().filter_map(|r| r.loglik).collect();
    let (mean_loglik, mc_se_loglik) = mean_and_se(&ll);
    let conv: Vec<f64> = good.iter().map(|r| r.conv_iter as f64).collect();
    let switch: Vec<f64> = good.iter().filter_map(|r| r.switch_iter.map(|s| s as f64)).collect();
    let n_failed = replicates.len() - good.len();
    CellSummary {
        mean_switch_iter: (key.algorithm == Algorithm::Hecm).then(|| mean_and_se(&switch).0),
        key,
        truth: truth_v,
        mean,
        mc_se,
        mean_loglik,
        mc_se_loglik,
        mean_conv_iter: mean_and_se(&conv).0,
        n_ok: good.len(),
        n_failed,
        flagged: n_failed as f64 > FLAG_FAILURE_SHARE * replicates.len() as f64,
        total_time: replicates.iter().map(|r| r.wall_time).sum(),
        replicates,
    }
}

fn run_replicate(truth: &MsvgParams, spec: &StudySpec, key: &CellKey, index: usize) -> ReplicateOutcome {
    let failed = |hash, e: String| ReplicateOutcome {
        index,
        data_hash: hash,
        estimates: None,
        loglik: None,
        conv_iter: 0,
        switch_iter: None,
        converged: false,
        wall_time: 0.0,
        error: Some(e),
    };
    let data = match replicate_data(truth, spec.n, spec.seed, index) {
        Ok(d) => d,
        Err(e) => return failed(0, e.to_string()),
    };
    let hash = data_hash(&data);
    let config = FitConfig {
        algorithm: key.algorithm,
        tol: spec.fit.tol,
        max_iter: spec.fit.max_iter,
        min_iter: spec.fit.min_iter,
        delta_cap: key.delta,
        scale_c: spec.fit.scale_c,
        nu_bounds: spec.fit.nu_bounds,
        ..FitConfig::default()
    };
    match fit(&data, &config) {
        Ok(rep) => {
            let Params::Iid(p) = &rep.params else {
                return failed(hash, "unexpected AR estimate".into());
            };
            ReplicateOutcome {
                index,
                data_hash: hash,
                estimates: Some(theta_of(p)),
                loglik: Some(rep.final_loglik),
                conv_iter: rep.conv_iter,
                switch_iter: rep.switch_iter,
                converged: rep.converged,
                wall_time: rep.wall_time,
                error: None,
            }
        }
        Err(e) => failed(hash, e.to_string()),
    }
}

/// Runs every cell of the study.
pub fn run_study(spec: &StudySpec) -> Result<StudyResult> {
    spec.validate()?;
    let start = Instant::now();
    let base = spec.truth()?;
    let mut keys = Vec::new();
    for gamma in spec.gammas(&base) {
        for delta in spec.deltas() {
            for &algorithm in &spec.algorithms {
                keys.push(CellKey { algorithm, delta, gamma: gamma.iter().copied().collect() });
            }
        }
    }
    let truths: Vec<MsvgParams> = keys
        .iter()
        .map(|k| MsvgParams { gamma: DVector::from_vec(k.gamma.clone()), ..base.clone() })
        .collect();
    let r = spec.r;
    let mut outcomes = map_indexed(keys.len() * r, |job| {
        let (cell, index) = (job / r, job % r);
        run_replicate(&truths[cell], spec, &keys[cell], index)
    })
    .into_iter();
    let mut cells = Vec::with_capacity(keys.len());
    for (key, truth) in keys.into_iter().zip(truths.iter()) {
        let reps: Vec<ReplicateOutcome> = outcomes.by_ref().take(r).collect();
        cells.push(summarise(key, truth, reps));
    }
    Ok(StudyResult {
        spec: spec.clone(),
        labels: crate::infer::parameter_labels(&Params::Iid(base)),
        cells,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// One cell per delta level on shared datasets. Warns (in the returned
/// messages) when the true `nu` exceeds `d / 2`.
pub fn delta_sweep(spec: &StudySpec) -> Result<(StudyResult, Vec<String>)> {
    if spec.delta_levels.is_none() {
        return Err(Error::Config("field `delta_levels`: required for a delta sweep".into()));
    }
    let truth = spec.truth()?;
    let mut notes = Vec::new();
    if truth.nu > truth.dim() as f64 / 2.0 {
        notes.push(format!("true nu {} exceeds d/2; the delta region has little effect", truth.nu));
    }
    Ok((run_study(spec)?, notes))
}

/// One cell per skew level.
pub fn skew_sweep(spec: &StudySpec) -> Result<StudyResult> {
    if spec.gamma_levels.is_none() {
        return Err(Error::Config("field `gamma_levels`: required for a skew sweep".into()));
    }
    run_study(spec)
}

impl StudyResult {
    /// Table-shaped CSV: one row per statistic, a `true` column, then a mean
    /// and a Monte Carlo SE column per cell. Contains no timing, so identical
    /// specs give identical bytes.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["statistic".to_string(), "true".to_string()];
        for c in &self.cells {
            let l = c.key.label();
            header.push(format!("{l} mean"));
            header.push(format!("{l} se"));
        }
        let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
        w.write_record(&header).map_err(csv_err)?;
        let same_truth = self.cells.windows(2).all(|p| p[0].truth == p[1].truth);
        for (j, label) in self.labels.iter().enumerate() {
            let truth = if same_truth || !label.starts_with("gamma") {
                fmt(self.cells[0].truth[j])
            } else {
                String::new()
            };
            let mut row = vec![label.clone(), truth];
            for c in &self.cells {
                row.push(fmt(c.mean[j]));
                row.push(fmt(c.mc_se[j]));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        type Stat = fn(&CellSummary) -> (f64, f64);
        let extra: [(&str, Stat); 5] = [
            ("loglik", |c| (c.mean_loglik, c.mc_se_loglik)),
            ("conv_iter", |c| (c.mean_conv_iter, f64::NAN)),
            ("switch_iter", |c| (c.mean_switch_iter.unwrap_or(f64::NAN), f64::NAN)),
            ("n_ok", |c| (c.n_ok as f64, f64::NAN)),
            ("n_failed", |c| (c.n_failed as f64, f64::NAN)),
        ];
        for (name, f) in extra {
            let mut row = vec![name.to_string(), String::new()];
            for c in &self.cells {
                let (m, s) = f(c);
                row.push(fmt(m));
                row.push(fmt(s));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        let mut row = vec!["flagged".to_string(), String::new()];
        for c in &self.cells {
            row.push(c.flagged.to_string());
            row.push(String::new());
        }
        w.write_record(&row).map_err(csv_err)?;
        let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
    }

    /// Spec, per-cell timing and failure messages.
    pub fn sidecar(&self) -> serde_json::Value {
        let cells: Vec<serde_json::Value> = self
            .cells
            .iter()
            .map(|c| {
                let errors: Vec<String> = c
                    .replicates
                    .iter()
                    .filter_map(|r| r.error.as_ref().map(|e| format!("replicate {}: {e}", r.index)))
                    .collect();
                serde_json::json!({
                    "cell": c.key.label(),
                    "total_time_s": c.total_time,
                    "n_ok": c.n_ok,
                    "n_failed": c.n_failed,
                    "flagged": c.flagged,
                    "errors": errors,
                })
            })
            .collect();
        serde_json::json!({ "spec": self.spec, "wall_time_s": self.wall_time, "cells": cells })
    }

    pub fn flagged_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.flagged).count()
    }
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}
