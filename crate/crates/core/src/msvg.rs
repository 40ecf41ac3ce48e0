//! The multivariate skewed variance gamma distribution.
//!
//! `y | lambda ~ N(mu + gamma * lambda, lambda * Sigma)` with
//! `lambda ~ Gamma(nu, rate = nu)`. With an AR(1) mean the location becomes
//! `beta0 + beta1 * y_prev`.
//!
//! Densities and posterior moments of the mixing variable are evaluated in log
//! space through [`crate::specfun`]. Observations whose scaled Mahalanobis
//! distance `delta * psi` falls below the [`CenterGuard`] threshold are treated
//! as sitting exactly at `delta* = Delta / psi`; this caps the density (which is
//! unbounded at the location when `nu <= d/2`) and the divergent E-step moments.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::linalg::{spectral_radius, SpdFactor};
use crate::specfun::{self, OrderDiffStep};

const LN_2: f64 = std::f64::consts::LN_2;
const LN_PI: f64 = 1.144_729_885_849_400_2;
/// Ceiling on `E(1/lambda)`. Tiny delta caps push the exact value past the
/// double range; the ceiling leaves headroom for sums over many observations.
pub(crate) const MAX_INV_LAMBDA: f64 = 1e290;

/// Constant-mean model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MsvgParams {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub nu: f64,
}

impl MsvgParams {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, gamma: DVector<f64>, nu: f64) -> Result<Self> {
        let p = Self { mu, sigma, gamma, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mu.len();
        check_common(d, &self.sigma, &self.gamma, self.nu)?;
        if self.mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mu".into()));
        }
        Ok(())
    }

    /// The bivariate base model used in the simulation studies
    /// (`mu = 0`, unit variances with correlation 0.4, `gamma = (0.2, 0.3)`).
    pub fn base_bivariate(nu: f64) -> Self {
        Self {
            mu: DVector::zeros(2),
            sigma: DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]),
            gamma: DVector::from_vec(vec![0.2, 0.3]),
            nu,
        }
    }
}

/// AR(1)-mean model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ArMsvgParams {
    pub beta0: DVector<f64>,
    pub beta1: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub nu: f64,
}

impl ArMsvgParams {
    pub fn new(
        beta0: DVector<f64>,
        beta1: DMatrix<f64>,
        sigma: DMatrix<f64>,
        gamma: DVector<f64>,
        nu: f64,
    ) -> Result<Self> {
        let p = Self { beta0, beta1, sigma, gamma, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.beta0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.beta0.len();
        check_common(d, &self.sigma, &self.gamma, self.nu)?;
        if self.beta1.shape() != (d, d) {
            return Err(Error::Dimension(format!("beta1 is {:?}, expected ({d}, {d})", self.beta1.shape())));
        }
        if self.beta0.iter().chain(self.beta1.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("AR coefficients".into()));
        }
        Ok(())
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.beta1)
    }

    /// `true` when the spectral radius of `beta1` is at least one.
    pub fn nonstationary_warning(&self) -> bool {
        self.spectral_radius() >= 1.0
    }

    /// `(I - beta1)^{-1} (beta0 + gamma)`.
    pub fn stationary_mean(&self) -> Result<DVector<f64>> {
        let d = self.dim();
        let a = DMatrix::identity(d, d) - &self.beta1;
        a.lu()
            .solve(&(&self.beta0 + &self.gamma))
            .ok_or_else(|| Error::Singular { condition: f64::INFINITY, context: "I - beta1".into() })
    }
}

fn check_common(d: usize, sigma: &DMatrix<f64>, gamma: &DVector<f64>, nu: f64) -> Result<()> {
    if d == 0 {
        return Err(Error::Dimension("dimension must be at least 1".into()));
    }
    if sigma.shape() != (d, d) || gamma.len() != d {
        return Err(Error::Dimension(format!(
            "sigma {:?} / gamma {} do not match dimension {d}",
            sigma.shape(),
            gamma.len()
        )));
    }
    if !(nu.is_finite() && nu > 0.0) {
        return Err(Error::Domain(format!("nu must be > 0, got {nu}")));
    }
    if gamma.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gamma".into()));
    }
    SpdFactor::new(sigma).map(|_| ())
}

/// Either parameterisation of the mean.
#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Iid(MsvgParams),
    Ar1(ArMsvgParams),
}

impl Params {
    pub fn dim(&self) -> usize {
        match self {
            Params::Iid(p) => p.dim(),
            Params::Ar1(p) => p.dim(),
        }
    }

    pub fn is_ar(&self) -> bool {
        matches!(self, Params::Ar1(_))
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        match self {
            Params::Iid(p) => &p.sigma,
            Params::Ar1(p) => &p.sigma,
        }
    }

    pub fn gamma(&self) -> &DVector<f64> {
        match self {
            Params::Iid(p) => &p.gamma,
            Params::Ar1(p) => &p.gamma,
        }
    }

    pub fn nu(&self) -> f64 {
        match self {
            Params::Iid(p) => p.nu,
            Params::Ar1(p) => p.nu,
        }
    }

    pub fn set_nu(&mut self, nu: f64) {
        match self {
            Params::Iid(p) => p.nu = nu,
            Params::Ar1(p) => p.nu = nu,
        }
    }

    pub fn set_sigma(&mut self, sigma: DMatrix<f64>) {
        match self {
            Params::Iid(p) => p.sigma = sigma,
            Params::Ar1(p) => p.sigma = sigma,
        }
    }

    pub fn set_gamma(&mut self, gamma: DVector<f64>) {
        match self {
            Params::Iid(p) => p.gamma = gamma,
            Params::Ar1(p) => p.gamma = gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Params::Iid(p) => p.validate(),
            Params::Ar1(p) => p.validate(),
        }
    }

    /// Conditional location of an observation given its regressor.
    pub fn center(&self, prev: Option<&DVector<f64>>) -> DVector<f64> {
        match (self, prev) {
            (Params::Iid(p), _) => p.mu.clone(),
            (Params::Ar1(p), Some(x)) => &p.beta0 + &p.beta1 * x,
            (Params::Ar1(p), None) => p.beta0.clone(),
        }
    }

    /// Parameters of `c * Y` when `Y` follows `self`.
    pub fn scaled(&self, c: f64) -> Params {
        match self {
            Params::Iid(p) => Params::Iid(MsvgParams {
                mu: &p.mu * c,
                sigma: &p.sigma * (c * c),
                gamma: &p.gamma * c,
                nu: p.nu,
            }),
            Params::Ar1(p) => Params::Ar1(ArMsvgParams {
                beta0: &p.beta0 * c,
                beta1: p.beta1.clone(),
                sigma: &p.sigma * (c * c),
                gamma: &p.gamma * c,
                nu: p.nu,
            }),
        }
    }

    /// Number of free parameters.
    pub fn free_parameter_count(&self) -> usize {
        let d = self.dim();
        let base = d + d * (d + 1) / 2 + d + 1;
        if self.is_ar() {
            base + d * d
        } else {
            base
        }
    }

    /// Hash of every parameter's bit pattern; identifies the iterate an
    /// E-step was computed from.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        match self {
            Params::Iid(p) => {
                h.write_all(p.mu.iter());
            }
            Params::Ar1(p) => {
                h.write_all(p.beta0.iter());
                h.write_all(p.beta1.iter());
            }
        }
        h.write_all(self.sigma().iter());
        h.write_all(self.gamma().iter());
        h.write_all(std::iter::once(&self.nu()));
        h.0
    }

    pub(crate) fn kernel(&self) -> Result<Kernel> {
        Kernel::new(self.sigma(), self.gamma(), self.nu())
    }
}

impl From<MsvgParams> for Params {
    fn from(p: MsvgParams) -> Self {
        Params::Iid(p)
    }
}

impl From<ArMsvgParams> for Params {
    fn from(p: ArMsvgParams) -> Self {
        Params::Ar1(p)
    }
}

pub(crate) struct Fnv(pub(crate) u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    pub(crate) fn write_all<'a>(&mut self, vals: impl Iterator<Item = &'a f64>) {
        for v in vals {
            for b in v.to_bits().to_le_bytes() {
                self.0 ^= b as u64;
                self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
}

/// Threshold `Delta` on `delta * psi` below which an observation is treated as
/// lying at `delta* = Delta / psi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterGuard {
    pub delta_cap: f64,
}

impl CenterGuard {
    pub fn new(delta_cap: f64) -> Result<Self> {
        if delta_cap.is_finite() && delta_cap > 0.0 {
            Ok(Self { delta_cap })
        } else {
            Err(Error::Domain(format!("delta cap must be > 0, got {delta_cap}")))
        }
    }

    /// 1e-4 for `d <= 2`, 1e-2 otherwise.
    pub fn default_for_dim(d: usize) -> Self {
        Self { delta_cap: if d <= 2 { 1e-4 } else { 1e-2 } }
    }
}

/// Per-observation posterior moments of the mixing variable.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingExpectations {
    pub e_lambda: Vec<f64>,
    pub e_inv_lambda: Vec<f64>,
    pub e_log_lambda: Vec<f64>,
    pub guarded: Vec<bool>,
    /// [`Params::fingerprint`] of the parameters used to compute these moments.
    pub source: u64,
}

impl MixingExpectations {
    pub fn len(&self) -> usize {
        self.e_lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e_lambda.is_empty()
    }

    pub fn guarded_count(&self) -> usize {
        self.guarded.iter().filter(|&&g| g).count()
    }

    /// Moments with every observation at the same mixing value.
    pub fn constant(n: usize, lambda: f64) -> Self {
        Self {
            e_lambda: vec![lambda; n],
            e_inv_lambda: vec![1.0 / lambda; n],
            e_log_lambda: vec![lambda.ln(); n],
            guarded: vec![false; n],
            source: 0,
        }
    }
}

/// Observations, with lagged regressors for the AR(1) model.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    y: Vec<DVector<f64>>,
    x: Option<Vec<DVector<f64>>>,
}

impl Sample {
    /// Independent observations, one per row.
    pub fn iid(data: &DMatrix<f64>) -> Self {
        Self { y: rows(data), x: None }
    }

    /// A series for the AR(1) model: row `i` is explained by row `i - 1`, and the
    /// first row only serves as the initial regressor.
    pub fn ar1(series: &DMatrix<f64>) -> Result<Self> {
        if series.nrows() < 2 {
            return Err(Error::DegenerateData("AR(1) needs at least two rows".into()));
        }
        let all = rows(series);
        let x = all[..all.len() - 1].to_vec();
        let y = all[1..].to_vec();
        Ok(Self { y, x: Some(x) })
    }

    pub fn from_parts(y: Vec<DVector<f64>>, x: Option<Vec<DVector<f64>>>) -> Result<Self> {
        if let Some(x) = &x {
            if x.len() != y.len() {
                return Err(Error::Dimension(format!("{} responses but {} regressors", y.len(), x.len())));
            }
        }
        Ok(Self { y, x })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.y.first().map_or(0, |r| r.len())
    }

    pub fn is_ar(&self) -> bool {
        self.x.is_some()
    }

    pub fn responses(&self) -> &[DVector<f64>] {
        &self.y
    }

    pub fn regressors(&self) -> Option<&[DVector<f64>]> {
        self.x.as_deref()
    }

    pub fn regressor(&self, i: usize) -> Option<&DVector<f64>> {
        self.x.as_ref().map(|x| &x[i])
    }

    pub fn scaled(&self, c: f64) -> Sample {
        Sample {
            y: self.y.iter().map(|v| v * c).collect(),
            x: self.x.as_ref().map(|x| x.iter().map(|v| v * c).collect()),
        }
    }

    /// Responses as an `n x d` matrix.
    pub fn response_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(self.len(), d, |i, j| self.y[i][j])
    }

    pub(crate) fn residual(&self, params: &Params, i: usize) -> DVector<f64> {
        &self.y[i] - params.center(self.regressor(i))
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    (0..m.nrows()).map(|i| m.row(i).transpose()).collect()
}

/// Moments at one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PointMoments {
    pub e_lambda: f64,
    pub e_inv_lambda: f64,
    pub e_log_lambda: f64,
    pub guarded: bool,
}

/// Everything about `(Sigma, gamma, nu)` that observations share.
#[derive(Debug, Clone)]
pub(crate) struct Kernel {
    factor: SpdFactor,
    gamma_w: DVector<f64>,
    pub(crate) psi: f64,
    pub(crate) p: f64,
    log_const: f64,
    nu: f64,
    gq: f64,
}

impl Kernel {
    pub(crate) fn new(sigma: &DMatrix<f64>, gamma: &DVector<f64>, nu: f64) -> Result<Self> {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::Domain(format!("nu must be > 0, got {nu}")));
        }
        let factor = SpdFactor::new(sigma)?;
        let gamma_w = factor.whiten(gamma);
        let gq = gamma_w.norm_squared();
        let d = gamma.len();
        let df = d as f64;
        let psi = (2.0 * nu + gq).sqrt();
        let p = nu - 0.5 * df;
        let log_const = (1.0 - nu) * LN_2 + 0.5 * df * nu.ln() - 0.5 * factor.log_det - 0.5 * df * LN_PI
            - specfun::ln_gamma_unchecked(nu)
            - p * (gq / (2.0 * nu)).ln_1p();
        Ok(Self { factor, gamma_w, psi, p, log_const, nu, gq })
    }

    /// `(delta, e' Sigma^{-1} gamma)` for a residual `e`.
    pub(crate) fn geometry(&self, e: &DVector<f64>) -> (f64, f64) {
        let w = self.factor.whiten(e);
        (w.norm(), w.dot(&self.gamma_w))
    }

    /// The distance actually used, and whether the guard replaced it.
    pub(crate) fn capped_delta(&self, delta: f64, guard: CenterGuard) -> (f64, bool) {
        if delta * self.psi < guard.delta_cap {
            (guard.delta_cap / self.psi, true)
        } else {
            (delta, false)
        }
    }

    pub(crate) fn log_density_from(&self, delta: f64, skew: f64, guard: CenterGuard) -> f64 {
        let (delta, _) = self.capped_delta(delta, guard);
        let z = delta * self.psi;
        let lk = specfun::log_k_and_ratio(self.p.abs(), z).0;
        self.log_const + lk + skew + self.p * z.ln()
    }

    /// Derivative of [`Self::log_density_from`] in `nu` with `Sigma` and
    /// `gamma` held fixed. A guarded point sits at `z = Delta` whatever `nu` is.
    pub(crate) fn dlog_density_dnu(&self, delta: f64, guard: CenterGuard) -> f64 {
        let (delta, guarded) = self.capped_delta(delta, guard);
        let (nu, gq, p, psi2) = (self.nu, self.gq, self.p, self.psi * self.psi);
        let df = 2.0 * (nu - p);
        let z = delta * self.psi;
        let dconst = -LN_2 + 0.5 * df / nu - specfun::digamma_unchecked(nu) - (gq / (2.0 * nu)).ln_1p()
            + p * gq / (nu * psi2);
        let h = OrderDiffStep::default().get();
        let l0 = specfun::log_k_and_ratio(p.abs(), z).0;
        let up = specfun::log_k_and_ratio((p + h).abs(), z).0 - l0;
        let down = specfun::log_k_and_ratio((p - h).abs(), z).0 - l0;
        let d_order = (up.exp_m1() - down.exp_m1()) / (2.0 * h);
        let mut out = dconst + d_order + z.ln();
        if !guarded {
            // d ln K_p / dz = -K_{p-1} / K_p - p / z, and dz/dnu = z / psi^2
            let (lm, l0, _) = specfun::log_k_triplet(p, z);
            let d_arg = -(lm - l0).exp() - p / z;
            out += d_arg * z / psi2 + p / psi2;
        }
        out
    }

    pub(crate) fn moments_from(&self, delta: f64, guard: CenterGuard) -> PointMoments {
        let (delta, guarded) = self.capped_delta(delta, guard);
        let z = delta * self.psi;
        let (lm, l0, lp) = specfun::log_k_triplet(self.p, z);
        let scale = delta / self.psi;
        let h = OrderDiffStep::default().get();
        let up = specfun::log_k_and_ratio((self.p + h).abs(), z).0 - l0;
        let down = specfun::log_k_and_ratio((self.p - h).abs(), z).0 - l0;
        let dlog = (up.exp_m1() - down.exp_m1()) / (2.0 * h);
        PointMoments {
            e_lambda: scale * (lp - l0).exp(),
            e_inv_lambda: (lm - l0 - scale.ln()).exp().min(MAX_INV_LAMBDA),
            e_log_lambda: scale.ln() + dlog,
            guarded,
        }
    }
}

/// Mahalanobis distance of `y` from its (conditional) location.
pub fn mahalanobis_delta(params: &Params, y: &DVector<f64>, y_prev: Option<&DVector<f64>>) -> Result<f64> {
    let d = params.dim();
    if y.len() != d || y_prev.is_some_and(|x| x.len() != d) {
        return Err(Error::Dimension(format!("observation length {} vs model dimension {d}", y.len())));
    }
    if params.is_ar() && y_prev.is_none() {
        return Err(Error::Dimension("AR model needs the previous observation".into()));
    }
    let factor = SpdFactor::new(params.sigma())?;
    Ok(factor.whiten(&(y - params.center(y_prev))).norm())
}

/// Log-density with the delta-region cap applied.
pub fn log_density(params: &MsvgParams, y: &DVector<f64>, guard: CenterGuard) -> Result<f64> {
    if y.len() != params.dim() {
        return Err(Error::Dimension(format!("observation length {} vs model dimension {}", y.len(), params.dim())));
    }
    let kernel = Kernel::new(&params.sigma, &params.gamma, params.nu)?;
    let (delta, skew) = kernel.geometry(&(y - &params.mu));
    Ok(kernel.log_density_from(delta, skew, guard))
}

/// Mean `mu + gamma` and covariance `Sigma + gamma gamma' / nu`.
pub fn moments(params: &MsvgParams) -> (DVector<f64>, DMatrix<f64>) {
    let mean = &params.mu + &params.gamma;
    let cov = &params.sigma + &params.gamma * params.gamma.transpose() / params.nu;
    (mean, cov)
}

fn draw_one(
    rng: &mut ChaCha20Rng,
    mixing: &Gamma<f64>,
    center: &DVector<f64>,
    gamma: &DVector<f64>,
    chol_l: &DMatrix<f64>,
) -> DVector<f64> {
    let lambda: f64 = mixing.sample(rng);
    let d = center.len();
    let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
    center + gamma * lambda + chol_l * z * lambda.sqrt()
}

fn mixing_law(nu: f64) -> Result<Gamma<f64>> {
    Gamma::new(nu, 1.0 / nu).map_err(|e| Error::Domain(format!("gamma mixing law: {e}")))
}

/// Draws `n` observations; identical output for identical `seed`.
pub fn sample(params: &MsvgParams, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let rng = ChaCha20Rng::seed_from_u64(seed);
    sample_with_rng(params, n, rng)
}

/// Draws with a caller-supplied generator (used for per-replicate streams).
pub fn sample_with_rng(params: &MsvgParams, n: usize, mut rng: ChaCha20Rng) -> Result<DMatrix<f64>> {
    params.validate()?;
    let mixing = mixing_law(params.nu)?;
    let l = SpdFactor::new(&params.sigma)?.lower();
    let d = params.dim();
    let mut out = DMatrix::zeros(n, d);
    for i in 0..n {
        let y = draw_one(&mut rng, &mixing, &params.mu, &params.gamma, &l);
        out.set_row(i, &y.transpose());
    }
    Ok(out)
}

/// Draws `n` consecutive observations of the AR(1) model. The first row is drawn
/// given `y0` (the stationary mean when `None`); `y0` itself is not returned.
pub fn sample_ar(params: &ArMsvgParams, n: usize, seed: u64, y0: Option<DVector<f64>>) -> Result<DMatrix<f64>> {
    params.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mixing = mixing_law(params.nu)?;
    let l = SpdFactor::new(&params.sigma)?.lower();
    let mut prev = match y0 {
        Some(v) => v,
        None => params.stationary_mean()?,
    };
    let d = params.dim();
    let mut out = DMatrix::zeros(n, d);
    for i in 0..n {
        let center = &params.beta0 + &params.beta1 * &prev;
        let y = draw_one(&mut rng, &mixing, &center, &params.gamma, &l);
        out.set_row(i, &y.transpose());
        prev = y;
    }
    Ok(out)
}

/// E-step: posterior moments of every mixing variable given its observation.
pub fn posterior_lambda_moments(params: &Params, sample: &Sample, guard: CenterGuard) -> Result<MixingExpectations> {
    if sample.dim() != params.dim() || sample.is_ar() != params.is_ar() {
        return Err(Error::Dimension("sample does not match the model".into()));
    }
    let kernel = params.kernel()?;
    let points = map_indexed(sample.len(), |i| {
        let (delta, _) = kernel.geometry(&sample.residual(params, i));
        kernel.moments_from(delta, guard)
    });
    let n = points.len();
    let mut mix = MixingExpectations {
        e_lambda: Vec::with_capacity(n),
        e_inv_lambda: Vec::with_capacity(n),
        e_log_lambda: Vec::with_capacity(n),
        guarded: Vec::with_capacity(n),
        source: params.fingerprint(),
    };
    for (i, m) in points.into_iter().enumerate() {
        if !(m.e_lambda.is_finite() && m.e_inv_lambda.is_finite() && m.e_log_lambda.is_finite()) {
            return Err(Error::NonFinite(format!("E-step moments at observation {i}")));
        }
        mix.e_lambda.push(m.e_lambda);
        mix.e_inv_lambda.push(m.e_inv_lambda);
        mix.e_log_lambda.push(m.e_log_lambda);
        mix.guarded.push(m.guarded);
    }
    Ok(mix)
}

/// Density values on a regular grid of cell centres.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major: `values[j * xs.len() + i]` is the density at `(xs[i], ys[j])`.
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.xs.len() + i]
    }

    pub fn cell_area(&self) -> f64 {
        let dx = if self.xs.len() > 1 { self.xs[1] - self.xs[0] } else { 0.0 };
        let dy = if self.ys.len() > 1 { self.ys[1] - self.ys[0] } else { 0.0 };
        dx * dy
    }
}

pub fn density_grid(
    params: &MsvgParams,
    x_range: (f64, f64),
    y_range: (f64, f64),
    resolution: usize,
    guard: CenterGuard,
) -> Result<DensityGrid> {
    if params.dim() != 2 {
        return Err(Error::UnsupportedDimension(format!("density grids need d = 2, got d = {}", params.dim())));
    }
    if resolution == 0 || !(x_range.1 > x_range.0) || !(y_range.1 > y_range.0) {
        return Err(Error::Domain("grid needs resolution >= 1 and increasing ranges".into()));
    }
    let centres = |(lo, hi): (f64, f64)| -> Vec<f64> {
        let step = (hi - lo) / resolution as f64;
        (0..resolution).map(|k| lo + (k as f64 + 0.5) * step).collect()
    };
    let xs = centres(x_range);
    let ys = centres(y_range);
    let kernel = Kernel::new(&params.sigma, &params.gamma, params.nu)?;
    let values = map_indexed(resolution * resolution, |k| {
        let (i, j) = (k % resolution, k / resolution);
        let e = DVector::from_vec(vec![xs[i] - params.mu[0], ys[j] - params.mu[1]]);
        let (delta, skew) = kernel.geometry(&e);
        kernel.log_density_from(delta, skew, guard).exp()
    });
    Ok(DensityGrid { xs, ys, values })
}

/// Bivariate marginal over components `(a, b)`; the family is closed under
/// taking sub-vectors.
pub fn marginal(params: &MsvgParams, idx: &[usize]) -> Result<MsvgParams> {
    let d = params.dim();
    if idx.is_empty() || idx.iter().any(|&i| i >= d) {
        return Err(Error::Dimension(format!("marginal indices {idx:?} out of range for d = {d}")));
    }
    let k = idx.len();
    MsvgParams::new(
        DVector::from_fn(k, |i, _| params.mu[idx[i]]),
        DMatrix::from_fn(k, k, |i, j| params.sigma[(idx[i], idx[j])]),
        DVector::from_fn(k, |i, _| params.gamma[idx[i]]),
        params.nu,
    )
}
