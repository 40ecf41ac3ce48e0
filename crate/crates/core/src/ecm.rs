//! ECM-family estimation for the MSVG model.
//!
//! One cycle is
//! E-step 1 -> CM(location, skew) -> extra E-step -> CM(Sigma) -> E-step 2 -> CM(nu),
//! followed by the stopping test `|l_new - l_old| / (|l_old| + 1) < tol`.
//! MCECM updates `nu` from the expected complete-data likelihood, ECME from the
//! observed likelihood, and the hybrid runs MCECM until the test fires, drops
//! that last iterate and finishes with ECME steps.
//!
//! Data are multiplied by `scale_c` before fitting and the estimates are mapped
//! back afterwards; the reported log-likelihoods refer to the original data.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::linalg::{condition_number, floor_eigenvalues, SpdFactor};
use crate::msvg::{ArMsvgParams, CenterGuard, Kernel, MixingExpectations, MsvgParams, Params, Sample};
use crate::optim::{bracketed_root, brent_maximize};
use crate::specfun::{digamma_unchecked, trigamma_unchecked};

const EIGEN_FLOOR_REL: f64 = 1e-12;
const DEGENERATE_EPS: f64 = 1e-12;
const AR_MAX_CONDITION: f64 = 1e14;
const ECME_XTOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Algorithm {
    Mcecm,
    Ecme,
    Hecm,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcecm" => Ok(Algorithm::Mcecm),
            "ecme" => Ok(Algorithm::Ecme),
            "hecm" => Ok(Algorithm::Hecm),
            other => Err(Error::Config(format!("unknown algorithm '{other}' (expected mcecm, ecme or hecm)"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Mcecm => "MCECM",
            Algorithm::Ecme => "ECME",
            Algorithm::Hecm => "HECM",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub algorithm: Algorithm,
    pub tol: f64,
    pub max_iter: usize,
    /// The stopping rule is not applied before this many cycles; with
    /// `min_iter = max_iter` every fit runs a fixed budget.
    pub min_iter: usize,
    /// `None` picks [`CenterGuard::default_for_dim`].
    pub delta_cap: Option<f64>,
    pub scale_c: f64,
    pub nu_bounds: (f64, f64),
    pub ar_order: usize,
    /// Starting values in the original data scale.
    pub init: Option<Params>,
    /// Fitting requires `n > min_obs_per_dim * d`.
    pub min_obs_per_dim: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Hecm,
            tol: 1e-8,
            max_iter: 5000,
            min_iter: 0,
            delta_cap: None,
            scale_c: 100.0,
            nu_bounds: (1e-4, 200.0),
            ar_order: 0,
            init: None,
            min_obs_per_dim: 10.0,
        }
    }
}

impl FitConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self { algorithm, ..Self::default() }
    }

    /// Tighter tolerance used for real return data.
    pub fn real_data(algorithm: Algorithm, ar_order: usize) -> Self {
        Self { algorithm, tol: 1e-10, ar_order, ..Self::default() }
    }

    pub fn guard(&self, d: usize) -> Result<CenterGuard> {
        match self.delta_cap {
            Some(cap) => CenterGuard::new(cap),
            None => Ok(CenterGuard::default_for_dim(d)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        if !(self.scale_c.is_finite() && self.scale_c > 0.0) {
            return Err(Error::Config(format!("scale_c must be > 0, got {}", self.scale_c)));
        }
        let (lo, hi) = self.nu_bounds;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Config(format!("invalid nu bounds ({lo}, {hi})")));
        }
        if self.ar_order > 1 {
            return Err(Error::Config(format!("AR order must be 0 or 1, got {}", self.ar_order)));
        }
        if let Some(cap) = self.delta_cap {
            CenterGuard::new(cap)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub algorithm: Algorithm,
    /// Estimates in the original data scale.
    pub params: Params,
    /// Observed log-likelihood of every accepted iterate, starting values first.
    pub loglik_trace: Vec<f64>,
    pub final_loglik: f64,
    /// Hybrid only: MCECM cycles run before switching to ECME.
    pub switch_iter: Option<usize>,
    /// Completed cycles, including the one discarded at a hybrid switch.
    pub conv_iter: usize,
    pub wall_time: f64,
    pub guarded_count_final: usize,
    /// Guarded-observation count for each entry of `loglik_trace`.
    pub guarded_trace: Vec<usize>,
    pub converged: bool,
    pub n_obs: usize,
    pub warnings: Vec<String>,
}

/// AR-specific complete-data sums.
#[derive(Debug, Clone, PartialEq)]
pub struct ArSuffStats {
    pub s_x: DVector<f64>,
    pub s_x_over_lambda: DVector<f64>,
    pub s_xx_over_lambda: DMatrix<f64>,
    /// `sum y_i x_i' / lambda_i`.
    pub s_xy_over_lambda: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    pub n: usize,
    pub s_y: DVector<f64>,
    pub s_y_over_lambda: DVector<f64>,
    pub s_lambda: f64,
    pub s_inv_lambda: f64,
    pub s_log_lambda: f64,
    pub ar: Option<ArSuffStats>,
}

/// Sample mean, sample covariance (divisor `n - 1`), zero skew and `nu = d`;
/// the AR version starts from `beta0 = mean`, `beta1 = 0`.
pub fn initial_params(sample: &Sample) -> Result<Params> {
    let n = sample.len();
    let d = sample.dim();
    if n <= d + 1 {
        return Err(Error::DegenerateData(format!("need more than d + 1 = {} observations, got {n}", d + 1)));
    }
    let ys = sample.responses();
    let mut mean = DVector::zeros(d);
    for y in ys {
        mean += y;
    }
    mean /= n as f64;
    let mut q = DMatrix::zeros(d, d);
    for y in ys {
        let e = y - &mean;
        q += &e * e.transpose();
    }
    q /= (n - 1) as f64;
    let singular = || {
        Error::DegenerateData(
            "sample covariance is singular; add jitter to the data or drop redundant columns".into(),
        )
    };
    if SpdFactor::new(&q).is_err() || condition_number(&q) > 1e14 {
        return Err(singular());
    }
    let nu = d as f64;
    let gamma = DVector::zeros(d);
    Ok(if sample.is_ar() {
        Params::Ar1(ArMsvgParams { beta0: mean, beta1: DMatrix::zeros(d, d), sigma: q, gamma, nu })
    } else {
        Params::Iid(MsvgParams { mu: mean, sigma: q, gamma, nu })
    })
}

/// Complete-data sums with the latent quantities replaced by their posterior
/// moments; observations are added in order.
pub fn accumulate_suff_stats(sample: &Sample, mix: &MixingExpectations) -> Result<SuffStats> {
    let n = sample.len();
    if mix.len() != n {
        return Err(Error::Dimension(format!("{n} observations but {} moment rows", mix.len())));
    }
    let d = sample.dim();
    let mut st = SuffStats {
        n,
        s_y: DVector::zeros(d),
        s_y_over_lambda: DVector::zeros(d),
        s_lambda: 0.0,
        s_inv_lambda: 0.0,
        s_log_lambda: 0.0,
        ar: sample.regressors().map(|_| ArSuffStats {
            s_x: DVector::zeros(d),
            s_x_over_lambda: DVector::zeros(d),
            s_xx_over_lambda: DMatrix::zeros(d, d),
            s_xy_over_lambda: DMatrix::zeros(d, d),
        }),
    };
    for (i, y) in sample.responses().iter().enumerate() {
        let w = mix.e_inv_lambda[i];
        st.s_y += y;
        st.s_y_over_lambda.axpy(w, y, 1.0);
        st.s_lambda += mix.e_lambda[i];
        st.s_inv_lambda += w;
        st.s_log_lambda += mix.e_log_lambda[i];
        if let (Some(ar), Some(x)) = (st.ar.as_mut(), sample.regressor(i)) {
            ar.s_x += x;
            ar.s_x_over_lambda.axpy(w, x, 1.0);
            ar.s_xx_over_lambda += x * x.transpose() * w;
            ar.s_xy_over_lambda += y * x.transpose() * w;
        }
    }
    Ok(st)
}

/// Closed-form location and skew update.
pub fn cm_step_location_skew(stats: &SuffStats) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = stats.n as f64;
    let denom = stats.s_inv_lambda * stats.s_lambda - n * n;
    if !(denom > DEGENERATE_EPS * n * n) {
        return Err(Error::DegenerateMixing { gap: denom / (n * n) });
    }
    // divided through by s_inv_lambda, which can be astronomically large when
    // an observation sits on the location
    let w = stats.s_inv_lambda;
    let mu = (&stats.s_y_over_lambda / w * stats.s_lambda - &stats.s_y * (n / w)) / (stats.s_lambda - n * (n / w));
    let gamma = (&stats.s_y - &mu * n) / stats.s_lambda;
    Ok((mu, gamma))
}

/// Weighted-mean location with zero skew, used when all posterior moments
/// coincide and the closed form is 0/0.
pub fn degenerate_location(stats: &SuffStats) -> (DVector<f64>, DVector<f64>) {
    let d = stats.s_y.len();
    (&stats.s_y_over_lambda / stats.s_inv_lambda, DVector::zeros(d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArStep {
    pub beta0: DVector<f64>,
    pub beta1: DMatrix<f64>,
    pub gamma: DVector<f64>,
    /// Condition number of the `(d + 2)`-square system.
    pub condition: f64,
}

/// Joint update of `(beta0, beta1, gamma)` from one `(d + 2)`-square linear system.
pub fn cm_step_ar(stats: &SuffStats) -> Result<ArStep> {
    let ar = stats
        .ar
        .as_ref()
        .ok_or_else(|| Error::Config("AR step needs AR sufficient statistics".into()))?;
    let d = stats.s_y.len();
    let k = d + 2;
    let n = stats.n as f64;
    // unknowns U = [beta0 | beta1 | gamma] (d x (d + 2)); U M = R
    let mut m = DMatrix::zeros(k, k);
    m[(0, 0)] = stats.s_inv_lambda;
    m[(0, k - 1)] = n;
    m[(k - 1, 0)] = n;
    m[(k - 1, k - 1)] = stats.s_lambda;
    for j in 0..d {
        m[(0, 1 + j)] = ar.s_x_over_lambda[j];
        m[(1 + j, 0)] = ar.s_x_over_lambda[j];
        m[(1 + j, k - 1)] = ar.s_x[j];
        m[(k - 1, 1 + j)] = ar.s_x[j];
        for l in 0..d {
            m[(1 + j, 1 + l)] = ar.s_xx_over_lambda[(j, l)];
        }
    }
    let mut r = DMatrix::zeros(d, k);
    r.set_column(0, &stats.s_y_over_lambda);
    r.view_mut((0, 1), (d, d)).copy_from(&ar.s_xy_over_lambda);
    r.set_column(k - 1, &stats.s_y);

    let condition = condition_number(&m);
    let singular = |condition: f64| Error::Singular { condition, context: "AR location/skew system".into() };
    if !(condition < AR_MAX_CONDITION) {
        return Err(singular(condition));
    }
    let ut = m.lu().solve(&r.transpose()).ok_or_else(|| singular(condition))?;
    let u = ut.transpose();
    Ok(ArStep {
        beta0: u.column(0).into_owned(),
        beta1: u.view((0, 1), (d, d)).into_owned(),
        gamma: u.column(k - 1).into_owned(),
        condition,
    })
}

/// Weighted least squares for `(beta0, beta1)` with `gamma = 0`; the AR
/// counterpart of [`degenerate_location`].
fn degenerate_ar(stats: &SuffStats) -> Result<ArStep> {
    let ar = stats.ar.as_ref().ok_or_else(|| Error::Config("missing AR statistics".into()))?;
    let d = stats.s_y.len();
    let mut m = DMatrix::zeros(d + 1, d + 1);
    m[(0, 0)] = stats.s_inv_lambda;
    m.view_mut((0, 1), (1, d)).copy_from(&ar.s_x_over_lambda.transpose());
    m.view_mut((1, 0), (d, 1)).copy_from(&ar.s_x_over_lambda);
    m.view_mut((1, 1), (d, d)).copy_from(&ar.s_xx_over_lambda);
    let mut r = DMatrix::zeros(d, d + 1);
    r.set_column(0, &stats.s_y_over_lambda);
    r.view_mut((0, 1), (d, d)).copy_from(&ar.s_xy_over_lambda);
    let condition = condition_number(&m);
    let u = m
        .lu()
        .solve(&r.transpose())
        .ok_or(Error::Singular { condition, context: "AR weighted regression".into() })?
        .transpose();
    Ok(ArStep {
        beta0: u.column(0).into_owned(),
        beta1: u.view((0, 1), (d, d)).into_owned(),
        gamma: DVector::zeros(d),
        condition,
    })
}

/// Scale update from moments computed at `params` (the just-updated location
/// and skew). `refreshed.source` must match `params.fingerprint()`.
pub fn cm_step_scale(sample: &Sample, params: &Params, refreshed: &MixingExpectations) -> Result<DMatrix<f64>> {
    if refreshed.source != params.fingerprint() {
        return Err(Error::Config("scale step needs moments refreshed at the updated location and skew".into()));
    }
    if refreshed.len() != sample.len() {
        return Err(Error::Dimension("moment rows do not match the sample".into()));
    }
    let d = sample.dim();
    let gamma = params.gamma();
    let gg = gamma * gamma.transpose();
    let mut acc = DMatrix::zeros(d, d);
    for i in 0..sample.len() {
        let e = sample.residual(params, i);
        let eg = &e * gamma.transpose();
        acc += &e * e.transpose() * refreshed.e_inv_lambda[i] - &eg - eg.transpose() + &gg * refreshed.e_lambda[i];
    }
    acc /= sample.len() as f64;
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scale update".into()));
    }
    Ok(floor_eigenvalues(&acc, EIGEN_FLOOR_REL))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeStep {
    pub nu: f64,
    /// The score had no root inside the bounds; `nu` is a bound.
    pub at_bound: bool,
}

/// Score of the expected complete-data log-likelihood in `nu`.
pub fn shape_score(stats: &SuffStats, nu: f64) -> f64 {
    let n = stats.n as f64;
    n + n * nu.ln() - n * digamma_unchecked(nu) + stats.s_log_lambda - stats.s_lambda
}

fn shape_score_derivative(n: f64, nu: f64) -> f64 {
    n / nu - n * trigamma_unchecked(nu)
}

/// Root of [`shape_score`] by Newton steps safeguarded with bisection.
pub fn cm_step_shape_mcecm(stats: &SuffStats, nu_current: f64, bounds: (f64, f64)) -> Result<ShapeStep> {
    let (lo, hi) = bounds;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Config(format!("invalid nu bounds ({lo}, {hi})")));
    }
    let n = stats.n as f64;
    let f_lo = shape_score(stats, lo);
    let f_hi = shape_score(stats, hi);
    if f_lo.is_nan() || f_hi.is_nan() {
        return Err(Error::NonFinite("shape score".into()));
    }
    // the score is strictly decreasing in nu
    if f_lo <= 0.0 {
        return Ok(ShapeStep { nu: lo, at_bound: true });
    }
    if f_hi >= 0.0 {
        return Ok(ShapeStep { nu: hi, at_bound: true });
    }
    let (mut a, mut b) = (lo, hi);
    let mut x = nu_current.clamp(lo, hi);
    let mut fx = shape_score(stats, x);
    for _ in 0..200 {
        if fx.abs() < 1e-13 * n {
            break;
        }
        if fx > 0.0 {
            a = x;
        } else {
            b = x;
        }
        let newton = x - fx / shape_score_derivative(n, x);
        let candidate = if newton > a && newton < b { newton } else { 0.5 * (a + b) };
        let fc = shape_score(stats, candidate);
        let (nx, nf) = if fc.abs() < fx.abs() || candidate == 0.5 * (a + b) {
            (candidate, fc)
        } else {
            let mid = 0.5 * (a + b);
            (mid, shape_score(stats, mid))
        };
        x = nx;
        fx = nf;
        if b - a <= 4.0 * f64::EPSILON * x {
            break;
        }
    }
    Ok(ShapeStep { nu: x, at_bound: false })
}

/// Distance and skew term of every observation; independent of `nu`.
fn geometry(sample: &Sample, params: &Params, kernel: &Kernel) -> Vec<(f64, f64)> {
    map_indexed(sample.len(), |i| kernel.geometry(&sample.residual(params, i)))
}

fn sum_log_density(kernel: &Kernel, geo: &[(f64, f64)], guard: CenterGuard) -> f64 {
    map_indexed(geo.len(), |i| kernel.log_density_from(geo[i].0, geo[i].1, guard)).into_iter().sum()
}

/// `nu` maximising the observed log-likelihood with the other parameters fixed.
pub fn cm_step_shape_ecme(sample: &Sample, params: &Params, bounds: (f64, f64), guard: CenterGuard) -> Result<f64> {
    params.validate()?;
    let base = params.kernel()?;
    let geo = geometry(sample, params, &base);
    let (sigma, gamma) = (params.sigma(), params.gamma());
    let (nu, _) = brent_maximize(
        |nu| match Kernel::new(sigma, gamma, nu) {
            Ok(k) => sum_log_density(&k, &geo, guard),
            Err(_) => f64::NEG_INFINITY,
        },
        bounds.0,
        bounds.1,
        ECME_XTOL,
    );
    // Function values pin the maximiser down to about sqrt(eps); the score
    // root inside a small bracket gets it to rounding level.
    let score = |nu: f64| match Kernel::new(sigma, gamma, nu) {
        Ok(k) => map_indexed(geo.len(), |i| k.dlog_density_dnu(geo[i].0, guard)).into_iter().sum::<f64>(),
        Err(_) => f64::NAN,
    };
    let width = 10.0 * (1.5e-8 * nu + ECME_XTOL);
    let (a, b) = ((nu - width).max(bounds.0), (nu + width).min(bounds.1));
    if a < nu && nu < b && score(a) > 0.0 && score(b) < 0.0 {
        return Ok(bracketed_root(score, a, b));
    }
    Ok(nu)
}

/// Sum of capped log-densities; the AR version is conditional on the first row.
pub fn observed_loglik(sample: &Sample, params: &Params, guard: CenterGuard) -> Result<f64> {
    if sample.dim() != params.dim() || sample.is_ar() != params.is_ar() {
        return Err(Error::Dimension("sample does not match the model".into()));
    }
    let kernel = params.kernel()?;
    let geo = geometry(sample, params, &kernel);
    Ok(sum_log_density(&kernel, &geo, guard))
}

/// E-step moments and the observed log-likelihood from one pass.
fn e_step(sample: &Sample, params: &Params, guard: CenterGuard) -> Result<(MixingExpectations, f64)> {
    let kernel = params.kernel()?;
    let rows = map_indexed(sample.len(), |i| {
        let (delta, skew) = kernel.geometry(&sample.residual(params, i));
        (kernel.moments_from(delta, guard), kernel.log_density_from(delta, skew, guard))
    });
    let n = rows.len();
    let mut mix = MixingExpectations {
        e_lambda: Vec::with_capacity(n),
        e_inv_lambda: Vec::with_capacity(n),
        e_log_lambda: Vec::with_capacity(n),
        guarded: Vec::with_capacity(n),
        source: params.fingerprint(),
    };
    let mut ll = 0.0;
    for (i, (m, l)) in rows.into_iter().enumerate() {
        if !(m.e_lambda.is_finite() && m.e_inv_lambda.is_finite() && m.e_log_lambda.is_finite() && l.is_finite()) {
            return Err(Error::NonFinite(format!("E-step at observation {i}")));
        }
        mix.e_lambda.push(m.e_lambda);
        mix.e_inv_lambda.push(m.e_inv_lambda);
        mix.e_log_lambda.push(m.e_log_lambda);
        mix.guarded.push(m.guarded);
        ll += l;
    }
    Ok((mix, ll))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Mcecm,
    Ecme,
}

struct Engine<'a> {
    sample: &'a Sample,
    guard: CenterGuard,
    bounds: (f64, f64),
    /// Univariate hybrid: location from the observed likelihood.
    profile_location: bool,
    warnings: Vec<String>,
}

impl Engine<'_> {
    fn warn(&mut self, msg: String) {
        if !self.warnings.contains(&msg) {
            self.warnings.push(msg);
        }
    }

    fn location_skew(&mut self, params: &Params, mix: &MixingExpectations) -> Result<Params> {
        let stats = accumulate_suff_stats(self.sample, mix)?;
        let mut next = params.clone();
        match &mut next {
            Params::Iid(p) => {
                let (mu, gamma) = match cm_step_location_skew(&stats) {
                    Ok(v) => v,
                    Err(Error::DegenerateMixing { .. }) => {
                        self.warn("degenerate mixing moments; used the weighted mean with zero skew".into());
                        degenerate_location(&stats)
                    }
                    Err(e) => return Err(e),
                };
                p.mu = mu;
                p.gamma = gamma;
            }
            Params::Ar1(p) => {
                let step = match cm_step_ar(&stats) {
                    Ok(s) => s,
                    Err(Error::Singular { .. }) => {
                        self.warn("singular AR system; used weighted least squares with zero skew".into());
                        degenerate_ar(&stats)?
                    }
                    Err(e) => return Err(e),
                };
                if step.condition > 1e10 {
                    self.warn(format!("AR system condition number {:.3e}", step.condition));
                }
                p.beta0 = step.beta0;
                p.beta1 = step.beta1;
                p.gamma = step.gamma;
            }
        }
        Ok(next)
    }

    /// Univariate location from the observed likelihood, then skew from the
    /// expected complete-data likelihood at that location.
    fn profiled_location_skew(&mut self, params: &Params, current_ll: f64) -> Result<Params> {
        let Params::Iid(p) = params else {
            return Err(Error::Config("profiled location is defined for the constant-mean model".into()));
        };
        let sd = p.sigma[(0, 0)].sqrt();
        let half = 3.0 * (sd + p.gamma[0].abs());
        let mu0 = p.mu[0];
        let sample = self.sample;
        let guard = self.guard;
        let (mu_new, ll_new) = brent_maximize(
            |m| {
                let mut q = p.clone();
                q.mu[0] = m;
                observed_loglik(sample, &Params::Iid(q), guard).unwrap_or(f64::NEG_INFINITY)
            },
            mu0 - half,
            mu0 + half,
            1e-10 * (sd + mu0.abs()),
        );
        let mut moved = p.clone();
        if ll_new > current_ll {
            moved.mu[0] = mu_new;
        }
        let moved = Params::Iid(moved);
        let (mix, _) = e_step(self.sample, &moved, self.guard)?;
        let stats = accumulate_suff_stats(self.sample, &mix)?;
        let mut out = moved.clone();
        if let Params::Iid(q) = &mut out {
            q.gamma = (&stats.s_y - &q.mu * stats.n as f64) / stats.s_lambda;
        }
        Ok(out)
    }

    fn cycle(&mut self, params: &Params, mix: &MixingExpectations, ll: f64, phase: Phase) -> Result<Params> {
        let mut next = if self.profile_location {
            self.profiled_location_skew(params, ll)?
        } else {
            self.location_skew(params, mix)?
        };
        let (refreshed, _) = e_step(self.sample, &next, self.guard)?;
        let sigma = cm_step_scale(self.sample, &next, &refreshed)?;
        next.set_sigma(sigma);
        let nu = match phase {
            Phase::Mcecm => {
                let (mix2, _) = e_step(self.sample, &next, self.guard)?;
                let stats = accumulate_suff_stats(self.sample, &mix2)?;
                let step = cm_step_shape_mcecm(&stats, next.nu(), self.bounds)?;
                if step.at_bound {
                    self.warn(format!("nu step hit the bound {}", step.nu));
                }
                step.nu
            }
            Phase::Ecme => cm_step_shape_ecme(self.sample, &next, self.bounds, self.guard)?,
        };
        next.set_nu(nu);
        Ok(next)
    }
}

/// Fits the constant-mean (`ar_order = 0`) or AR(1) model to the rows of `data`.
pub fn fit(data: &DMatrix<f64>, config: &FitConfig) -> Result<FitReport> {
    let sample = if config.ar_order == 1 { Sample::ar1(data)? } else { Sample::iid(data) };
    fit_sample(&sample, config)
}

pub fn fit_sample(sample: &Sample, config: &FitConfig) -> Result<FitReport> {
    let start = Instant::now();
    config.validate()?;
    let n = sample.len();
    let d = sample.dim();
    if d == 0 || (n as f64) <= config.min_obs_per_dim * d as f64 {
        return Err(Error::DegenerateData(format!(
            "need more than {} observations for d = {d}, got {n}",
            config.min_obs_per_dim * d as f64
        )));
    }
    if sample.responses().iter().chain(sample.regressors().unwrap_or(&[])).any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("data contain non-finite values".into()));
    }
    let c = config.scale_c;
    let scaled = sample.scaled(c);
    let guard = config.guard(d)?;
    let mut params = match &config.init {
        Some(p) => {
            if p.dim() != d || p.is_ar() != scaled.is_ar() {
                return Err(Error::Config("initial parameters do not match the data".into()));
            }
            p.validate()?;
            p.scaled(c)
        }
        None => initial_params(&scaled)?,
    };
    let nu0 = params.nu().clamp(config.nu_bounds.0, config.nu_bounds.1);
    params.set_nu(nu0);
    let offset = (n * d) as f64 * c.ln();

    let mut engine = Engine {
        sample: &scaled,
        guard,
        bounds: config.nu_bounds,
        profile_location: config.algorithm == Algorithm::Hecm && d == 1 && !scaled.is_ar(),
        warnings: Vec::new(),
    };
    let (mut mix, mut ll) = e_step(&scaled, &params, guard)?;
    let mut trace = vec![ll + offset];
    let mut guarded_trace = vec![mix.guarded_count()];
    let mut phase = if config.algorithm == Algorithm::Ecme { Phase::Ecme } else { Phase::Mcecm };
    let mut switch_iter = None;
    let mut cycles = 0;
    let mut converged = false;
    while cycles < config.max_iter {
        let next = engine.cycle(&params, &mix, ll, phase)?;
        let (next_mix, next_ll) = e_step(&scaled, &next, guard)?;
        cycles += 1;
        let small = (next_ll - ll).abs() / (ll.abs() + 1.0) < config.tol;
        if small && config.algorithm == Algorithm::Hecm && phase == Phase::Mcecm {
            switch_iter = Some(cycles);
            phase = Phase::Ecme;
            continue;
        }
        params = next;
        mix = next_mix;
        ll = next_ll;
        trace.push(ll + offset);
        guarded_trace.push(mix.guarded_count());
        if small && cycles >= config.min_iter {
            converged = true;
            break;
        }
    }
    let mut warnings = std::mem::take(&mut engine.warnings);
    if !converged {
        warnings.push(format!("no convergence within {} cycles", config.max_iter));
    }
    let params = params.scaled(1.0 / c);
    if let Params::Ar1(p) = &params {
        if p.nonstationary_warning() {
            warnings.push(format!("beta1 spectral radius {:.4} >= 1", p.spectral_radius()));
        }
    }
    Ok(FitReport {
        algorithm: config.algorithm,
        params,
        final_loglik: ll + offset,
        loglik_trace: trace,
        switch_iter,
        conv_iter: cycles,
        wall_time: start.elapsed().as_secs_f64(),
        guarded_count_final: mix.guarded_count(),
        guarded_trace,
        converged,
        n_obs: n,
        warnings,
    })
}
