//! Observed information by Louis's method, standard errors and AICc.
//!
//! The free-parameter vector is ordered as
//! location (`mu` or `beta0`), `vec(beta1)` (column-major, AR only),
//! `vech(Sigma)` (lower triangle by columns), `gamma`, `nu`.
//!
//! Given the mixing variable, the complete-data score of one observation is
//! affine in `(1/lambda, lambda, log lambda)` and its Hessian is affine in
//! `(1/lambda, lambda)`. Both are therefore kept as coefficient blocks, and the
//! posterior expectations and covariances of those three quantities are
//! plugged in. Observations are conditionally independent, so the score
//! variance is a sum of per-observation terms.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::linalg::{symmetrize, unvech, vech, vech_pairs, SpdFactor};
use crate::msvg::{ArMsvgParams, CenterGuard, Kernel, MsvgParams, Params, Sample};
use crate::specfun::{self, digamma_unchecked, trigamma_unchecked, OrderDiffStep};

/// Step for second order-derivatives of `ln K`; larger than the first-derivative
/// step because the second difference loses twice as many digits.
const SECOND_ORDER_STEP: f64 = 1e-4;

/// Parameter labels in vector order (1-based indices).
pub fn parameter_labels(params: &Params) -> Vec<String> {
    let d = params.dim();
    let mut out = Vec::new();
    let loc = if params.is_ar() { "beta0" } else { "mu" };
    out.extend((1..=d).map(|i| format!("{loc}[{i}]")));
    if params.is_ar() {
        for j in 1..=d {
            for i in 1..=d {
                out.push(format!("beta1[{i},{j}]"));
            }
        }
    }
    out.extend(vech_pairs(d).into_iter().map(|(i, j)| format!("sigma[{},{}]", i + 1, j + 1)));
    out.extend((1..=d).map(|i| format!("gamma[{i}]")));
    out.push("nu".into());
    out
}

/// Stacks the parameters in vector order.
pub fn theta_vector(params: &Params) -> DVector<f64> {
    let mut v: Vec<f64> = Vec::new();
    match params {
        Params::Iid(p) => v.extend(p.mu.iter()),
        Params::Ar1(p) => {
            v.extend(p.beta0.iter());
            v.extend(p.beta1.iter());
        }
    }
    v.extend(vech(params.sigma()));
    v.extend(params.gamma().iter());
    v.push(params.nu());
    DVector::from_vec(v)
}

/// Inverse of [`theta_vector`]; `template` supplies the model shape. The result
/// is not validated.
pub fn params_from_theta(template: &Params, theta: &DVector<f64>) -> Result<Params> {
    let d = template.dim();
    let m = d * (d + 1) / 2;
    let expected = theta_vector(template).len();
    if theta.len() != expected {
        return Err(Error::Dimension(format!("theta has {} entries, expected {expected}", theta.len())));
    }
    let loc = DVector::from_fn(d, |i, _| theta[i]);
    let mut k = d;
    let beta1 = template.is_ar().then(|| {
        let b = DMatrix::from_fn(d, d, |i, j| theta[k + j * d + i]);
        k += d * d;
        b
    });
    let sigma = unvech(&theta.as_slice()[k..k + m], d);
    k += m;
    let gamma = DVector::from_fn(d, |i, _| theta[k + i]);
    let nu = theta[k + d];
    Ok(match beta1 {
        Some(beta1) => Params::Ar1(ArMsvgParams { beta0: loc, beta1, sigma, gamma, nu }),
        None => Params::Iid(MsvgParams { mu: loc, sigma, gamma, nu }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentKind {
    /// `E(lambda^k | y)`
    Plain,
    /// `E(lambda^k log lambda | y)`
    TimesLog,
    /// `E(lambda^k (log lambda)^2 | y)`
    LogSquared,
}

fn ln_k(order: f64, z: f64) -> f64 {
    specfun::log_k_and_ratio(order.abs(), z).0
}

/// `d/dp ln K_p(z)` with the same difference formula as the E-step.
fn dlog_k(order: f64, z: f64) -> f64 {
    let h = OrderDiffStep::default().get();
    let c = ln_k(order, z);
    ((ln_k(order + h, z) - c).exp_m1() - (ln_k(order - h, z) - c).exp_m1()) / (2.0 * h)
}

fn d2log_k(order: f64, z: f64) -> f64 {
    let h = SECOND_ORDER_STEP;
    let c = ln_k(order, z);
    ((ln_k(order + h, z) - c) + (ln_k(order - h, z) - c)) / (h * h)
}

/// Posterior moment of the mixing variable for one observation, using the
/// guarded distance when the observation lies in the delta region.
pub fn conditional_lambda_moment(
    params: &Params,
    y: &DVector<f64>,
    y_prev: Option<&DVector<f64>>,
    k: f64,
    kind: MomentKind,
    guard: CenterGuard,
) -> Result<f64> {
    if !k.is_finite() {
        return Err(Error::Domain(format!("moment order must be finite, got {k}")));
    }
    if params.is_ar() && y_prev.is_none() {
        return Err(Error::Dimension("AR model needs the previous observation".into()));
    }
    let kernel = params.kernel()?;
    if y.len() != params.dim() {
        return Err(Error::Dimension("observation length does not match the model".into()));
    }
    let (delta, _) = kernel.geometry(&(y - params.center(y_prev)));
    let (delta, _) = kernel.capped_delta(delta, guard);
    let z = delta * kernel.psi;
    let p = kernel.p;
    let ln_s = (delta / kernel.psi).ln();
    let plain = (k * ln_s + ln_k(p + k, z) - ln_k(p, z)).exp();
    let v = match kind {
        MomentKind::Plain => plain,
        MomentKind::TimesLog => plain * (ln_s + dlog_k(p + k, z)),
        MomentKind::LogSquared => {
            let m = ln_s + dlog_k(p + k, z);
            plain * (m * m + d2log_k(p + k, z))
        }
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("conditional moment (k = {k}, {kind:?})")))
    }
}

/// Posterior means and covariances of `(w, lambda, L) = (1/lambda, lambda, log lambda)`.
#[derive(Debug, Clone, Copy)]
struct GigSummary {
    e_w: f64,
    e_l: f64,
    var_w: f64,
    var_l: f64,
    var_log: f64,
    cov_wl: f64,
    cov_w_log: f64,
    cov_l_log: f64,
}

fn gig_summary(p: f64, delta: f64, psi: f64) -> GigSummary {
    let z = delta * psi;
    let s = delta / psi;
    let g: Vec<f64> = (-2..=2).map(|j| ln_k(p + j as f64, z)).collect();
    let (gm2, gm1, g0, gp1, gp2) = (g[0], g[1], g[2], g[3], g[4]);
    let e_w = (gm1 - g0).exp() / s;
    let e_l = s * (gp1 - g0).exp();
    let d0 = dlog_k(p, z);
    GigSummary {
        e_w,
        e_l,
        var_w: e_w * e_w * (gm2 + g0 - 2.0 * gm1).exp_m1(),
        var_l: e_l * e_l * (gp2 + g0 - 2.0 * gp1).exp_m1(),
        var_log: d2log_k(p, z),
        cov_wl: -(gm1 + gp1 - 2.0 * g0).exp_m1(),
        cov_w_log: e_w * (dlog_k(p - 1.0, z) - d0),
        cov_l_log: e_l * (dlog_k(p + 1.0, z) - d0),
    }
}

/// Score and Hessian of one observation's complete-data log-likelihood as
/// coefficients of `1`, `w = 1/lambda`, `lambda` and `L = log lambda`.
struct ObsTerms {
    c0: DVector<f64>,
    cw: DVector<f64>,
    cl: DVector<f64>,
    c_log: DVector<f64>,
    h0: DMatrix<f64>,
    hw: DMatrix<f64>,
    hl: DMatrix<f64>,
}

/// Everything about the parameters that the per-observation terms share.
struct Layout {
    d: usize,
    n_loc: usize,
    pairs: Vec<(usize, usize)>,
    sigma_off: usize,
    gamma_off: usize,
    nu_idx: usize,
    dim: usize,
    p: DMatrix<f64>,
    v: DVector<f64>,
    nu: f64,
    /// `1/2 tr(P E_b P E_a)`, shared by every observation.
    sigma_sigma_const: DMatrix<f64>,
}

/// Dyads `(i, j)` making up `dSigma / dtheta_a` for the vech entry `(r, c)`.
fn dyads((r, c): (usize, usize)) -> Vec<(usize, usize)> {
    if r == c {
        vec![(r, r)]
    } else {
        vec![(r, c), (c, r)]
    }
}

/// `tr(E_b X E_a Y)` where `E_a`, `E_b` are sums of dyads `e_i e_j'`.
fn trace_pair(a: (usize, usize), b: (usize, usize), x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let mut t = 0.0;
    for (i, j) in dyads(a) {
        for (k, l) in dyads(b) {
            // tr(e_k e_l' X e_i e_j' Y) = X[l, i] * Y[j, k]
            t += x[(l, i)] * y[(j, k)];
        }
    }
    t
}

/// `sum over dyads (i, j) of E_a` of `X[j, i]`, i.e. `tr(E_a X)`.
fn trace_one(a: (usize, usize), x: &DMatrix<f64>) -> f64 {
    dyads(a).into_iter().map(|(i, j)| x[(j, i)]).sum()
}

impl Layout {
    fn new(params: &Params) -> Result<Self> {
        let d = params.dim();
        let n_loc = if params.is_ar() { d + d * d } else { d };
        let pairs = vech_pairs(d);
        let m = pairs.len();
        let sigma_off = n_loc;
        let gamma_off = sigma_off + m;
        let nu_idx = gamma_off + d;
        let p = SpdFactor::new(params.sigma())?.inverse();
        let v = &p * params.gamma();
        let mut ssc = DMatrix::zeros(m, m);
        for (a, &pa) in pairs.iter().enumerate() {
            for (b, &pb) in pairs.iter().enumerate() {
                ssc[(a, b)] = 0.5 * trace_pair(pa, pb, &p, &p);
            }
        }
        Ok(Self {
            d,
            n_loc,
            pairs,
            sigma_off,
            gamma_off,
            nu_idx,
            dim: nu_idx + 1,
            p,
            v,
            nu: params.nu(),
            sigma_sigma_const: ssc,
        })
    }

    /// `Z` with `e = y - Z beta` for the stacked location vector `beta`.
    fn design(&self, x: Option<&DVector<f64>>) -> DMatrix<f64> {
        let d = self.d;
        let mut z = DMatrix::zeros(d, self.n_loc);
        z.view_mut((0, 0), (d, d)).fill_with_identity();
        if let Some(x) = x {
            for j in 0..d {
                for i in 0..d {
                    z[(i, d + j * d + i)] = x[j];
                }
            }
        }
        z
    }

    fn terms(&self, e: &DVector<f64>, x: Option<&DVector<f64>>) -> ObsTerms {
        let (d, k, so, go, ni) = (self.d, self.dim, self.sigma_off, self.gamma_off, self.nu_idx);
        let p = &self.p;
        let v = &self.v;
        let u = p * e;
        let z = self.design(x);
        let zt = z.transpose();
        let mut t = ObsTerms {
            c0: DVector::zeros(k),
            cw: DVector::zeros(k),
            cl: DVector::zeros(k),
            c_log: DVector::zeros(k),
            h0: DMatrix::zeros(k, k),
            hw: DMatrix::zeros(k, k),
            hl: DMatrix::zeros(k, k),
        };
        let nl = self.n_loc;

        // location: Z'(w P e - P gamma)
        t.cw.rows_mut(0, nl).copy_from(&(&zt * &u));
        t.c0.rows_mut(0, nl).copy_from(&(-(&zt * v)));
        // gamma: P e - lambda P gamma
        t.c0.rows_mut(go, d).copy_from(&u);
        t.cl.rows_mut(go, d).copy_from(&(-v));
        // Sigma: -1/2 tr(P E_a) + 1/2 tr(E_a P A P), A = w ee' - e g' - g e' + lambda g g'
        let m_w = &u * u.transpose();
        let m_0 = -(&u * v.transpose() + v * u.transpose());
        let m_l = v * v.transpose();
        for (a, &pa) in self.pairs.iter().enumerate() {
            t.cw[so + a] = 0.5 * trace_one(pa, &m_w);
            t.c0[so + a] = -0.5 * trace_one(pa, p) + 0.5 * trace_one(pa, &m_0);
            t.cl[so + a] = 0.5 * trace_one(pa, &m_l);
        }
        // nu
        t.c0[ni] = self.nu.ln() + 1.0 - digamma_unchecked(self.nu);
        t.cl[ni] = -1.0;
        t.c_log[ni] = 1.0;

        // location-location and location-gamma
        let zpz = &zt * p * &z;
        t.hw.view_mut((0, 0), (nl, nl)).copy_from(&(-zpz));
        let zp = &zt * p;
        t.h0.view_mut((0, go), (nl, d)).copy_from(&(-&zp));
        // gamma-gamma
        t.hl.view_mut((go, go), (d, d)).copy_from(&(-p));
        for (a, &pa) in self.pairs.iter().enumerate() {
            // P E_a u and P E_a v
            let mut peu = DVector::zeros(d);
            let mut pev = DVector::zeros(d);
            for (i, j) in dyads(pa) {
                peu.axpy(u[j], &p.column(i), 1.0);
                pev.axpy(v[j], &p.column(i), 1.0);
            }
            // location-Sigma: Z'(-w P E_a P e + P E_a P gamma)
            t.hw.view_mut((0, so + a), (nl, 1)).copy_from(&(-(&zt * &peu)));
            t.h0.view_mut((0, so + a), (nl, 1)).copy_from(&(&zt * &pev));
            // gamma-Sigma: -P E_a P e + lambda P E_a P gamma
            t.h0.view_mut((so + a, go), (1, d)).copy_from(&(-&peu).transpose());
            t.hl.view_mut((so + a, go), (1, d)).copy_from(&pev.transpose());
            // Sigma-Sigma
            for (b, &pb) in self.pairs.iter().enumerate().skip(a) {
                let cross = |mm: &DMatrix<f64>| -0.5 * (trace_pair(pa, pb, p, mm) + trace_pair(pb, pa, p, mm));
                t.hw[(so + a, so + b)] = cross(&m_w);
                t.h0[(so + a, so + b)] = self.sigma_sigma_const[(a, b)] + cross(&m_0);
                t.hl[(so + a, so + b)] = cross(&m_l);
            }
        }
        t.h0[(ni, ni)] = 1.0 / self.nu - trigamma_unchecked(self.nu);
        for h in [&mut t.h0, &mut t.hw, &mut t.hl] {
            mirror_upper(h);
        }
        t
    }
}

/// Copies the upper triangle onto the lower one.
fn mirror_upper(h: &mut DMatrix<f64>) {
    let k = h.nrows();
    for i in 0..k {
        for j in 0..i {
            h[(i, j)] = h[(j, i)];
        }
    }
}

fn check_lambdas(sample: &Sample, params: &Params, lambdas: &[f64]) -> Result<()> {
    if lambdas.len() != sample.len() {
        return Err(Error::Dimension(format!("{} mixing values for {} observations", lambdas.len(), sample.len())));
    }
    if lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::Domain("mixing values must be positive".into()));
    }
    if sample.dim() != params.dim() || sample.is_ar() != params.is_ar() {
        return Err(Error::Dimension("sample does not match the model".into()));
    }
    Ok(())
}

/// Gradient of the complete-data log-likelihood at given mixing values.
pub fn complete_score(params: &Params, sample: &Sample, lambdas: &[f64]) -> Result<DVector<f64>> {
    check_lambdas(sample, params, lambdas)?;
    let layout = Layout::new(params)?;
    let mut s = DVector::zeros(layout.dim);
    for (i, &l) in lambdas.iter().enumerate() {
        let t = layout.terms(&sample.residual(params, i), sample.regressor(i));
        s += &t.c0 + &t.cw / l + &t.cl * l + &t.c_log * l.ln();
    }
    Ok(s)
}

/// Hessian of the complete-data log-likelihood at given mixing values.
pub fn complete_hessian(params: &Params, sample: &Sample, lambdas: &[f64]) -> Result<DMatrix<f64>> {
    check_lambdas(sample, params, lambdas)?;
    let layout = Layout::new(params)?;
    let mut h = DMatrix::zeros(layout.dim, layout.dim);
    for (i, &l) in lambdas.iter().enumerate() {
        let t = layout.terms(&sample.residual(params, i), sample.regressor(i));
        h += &t.h0 + &t.hw / l + &t.hl * l;
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrix {
    pub matrix: DMatrix<f64>,
    pub labels: Vec<String>,
}

/// Louis observed information at `params`.
pub fn observed_info(params: &Params, sample: &Sample, guard: CenterGuard) -> Result<InfoMatrix> {
    params.validate()?;
    if sample.dim() != params.dim() || sample.is_ar() != params.is_ar() {
        return Err(Error::Dimension("sample does not match the model".into()));
    }
    let layout = Layout::new(params)?;
    let kernel: Kernel = params.kernel()?;
    let k = layout.dim;
    let parts = map_indexed(sample.len(), |i| {
        let e = sample.residual(params, i);
        let (delta, _) = kernel.geometry(&e);
        let (delta, _) = kernel.capped_delta(delta, guard);
        let g = gig_summary(kernel.p, delta, kernel.psi);
        let t = layout.terms(&e, sample.regressor(i));
        let mut c = -(&t.h0 + &t.hw * g.e_w + &t.hl * g.e_l);
        let pairs: [(&DVector<f64>, &DVector<f64>, f64); 6] = [
            (&t.cw, &t.cw, g.var_w),
            (&t.cl, &t.cl, g.var_l),
            (&t.c_log, &t.c_log, g.var_log),
            (&t.cw, &t.cl, g.cov_wl),
            (&t.cw, &t.c_log, g.cov_w_log),
            (&t.cl, &t.c_log, g.cov_l_log),
        ];
        for (a, b, cov) in pairs {
            if std::ptr::eq(a, b) {
                c.ger(-cov, a, b, 1.0);
            } else {
                c.ger(-cov, a, b, 1.0);
                c.ger(-cov, b, a, 1.0);
            }
        }
        (c, g)
    });
    let mut info = DMatrix::zeros(k, k);
    for (i, (c, g)) in parts.into_iter().enumerate() {
        let finite = [g.e_w, g.e_l, g.var_w, g.var_l, g.var_log, g.cov_wl, g.cov_w_log, g.cov_l_log]
            .iter()
            .all(|v| v.is_finite());
        if !finite || c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("information contribution of observation {i}")));
        }
        info += c;
    }
    mirror_upper(&mut info);
    Ok(InfoMatrix { matrix: info, labels: parameter_labels(params) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StandardErrors {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
    /// Condition number of the diagonally equilibrated information.
    pub condition: f64,
    pub warnings: Vec<String>,
}

impl StandardErrors {
    pub fn get(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.values[i])
    }
}

/// Square roots of the diagonal of the inverse information.
///
/// The matrix is equilibrated by its diagonal before inversion so that the
/// conditioning check is not dominated by parameter units.
pub fn standard_errors(info: &InfoMatrix) -> Result<StandardErrors> {
    let m = &info.matrix;
    let k = m.nrows();
    if m.ncols() != k || info.labels.len() != k {
        return Err(Error::Dimension("information matrix shape does not match its labels".into()));
    }
    let diag: Vec<f64> = (0..k).map(|i| m[(i, i)]).collect();
    if diag.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Singular {
            condition: f64::INFINITY,
            context: format!("information diagonal {diag:?}"),
        });
    }
    let s: Vec<f64> = diag.iter().map(|v| 1.0 / v.sqrt()).collect();
    let scaled = symmetrize(&DMatrix::from_fn(k, k, |i, j| m[(i, j)] * s[i] * s[j]));
    let eig = SymmetricEigen::new(scaled);
    let lmax = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if !(lmin > 1e-14 * lmax) {
        return Err(Error::Singular {
            condition,
            context: format!("information eigenvalues {:?}", eig.eigenvalues.as_slice()),
        });
    }
    let mut warnings = Vec::new();
    if condition > 1e10 {
        warnings.push(format!("information condition number {condition:.3e}"));
    }
    let values = (0..k)
        .map(|i| {
            let var: f64 = (0..k).map(|r| eig.eigenvectors[(i, r)].powi(2) / eig.eigenvalues[r]).sum();
            var.sqrt() * s[i]
        })
        .collect();
    Ok(StandardErrors { labels: info.labels.clone(), values, condition, warnings })
}

/// Corrected Akaike criterion `-2 l + 2k + 2k(k+1)/(n-k-1)`.
pub fn aicc(loglik: f64, k: usize, n: usize) -> Result<f64> {
    if n <= k + 1 {
        return Err(Error::Domain(format!("AICc needs n > k + 1 (n = {n}, k = {k})")));
    }
    let kf = k as f64;
    Ok(-2.0 * loglik + 2.0 * kf + 2.0 * kf * (kf + 1.0) / (n as f64 - kf - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msvg::sample as draw;

    #[test]
    fn aicc_examples() {
        assert!((aicc(-50.0, 2, 10).unwrap() - (104.0 + 12.0 / 7.0)).abs() < 1e-12);
        assert_eq!(aicc(-3.5, 0, 10).unwrap(), 7.0);
        assert!(aicc(-1.0, 5, 6).is_err());
    }

    #[test]
    fn diagonal_standard_errors() {
        let info = InfoMatrix {
            matrix: DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 25.0])),
            labels: vec!["a".into(), "b".into()],
        };
        let se = standard_errors(&info).unwrap();
        assert!((se.values[0] - 0.5).abs() < 1e-15 && (se.values[1] - 0.2).abs() < 1e-15);
        let near = InfoMatrix {
            matrix: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 + 1e-16]),
            labels: info.labels.clone(),
        };
        assert!(standard_errors(&near).is_err());
    }

    #[test]
    fn theta_roundtrip() {
        let p = Params::Ar1(ArMsvgParams {
            beta0: DVector::from_vec(vec![0.1, 0.2]),
            beta1: DMatrix::from_row_slice(2, 2, &[0.3, 0.4, 0.5, 0.6]),
            sigma: DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]),
            gamma: DVector::from_vec(vec![0.7, 0.8]),
            nu: 1.5,
        });
        let t = theta_vector(&p);
        assert_eq!(t.as_slice(), &[0.1, 0.2, 0.3, 0.5, 0.4, 0.6, 1.0, 0.2, 2.0, 0.7, 0.8, 1.5]);
        assert_eq!(params_from_theta(&p, &t).unwrap(), p);
        assert_eq!(parameter_labels(&p)[3], "beta1[2,1]");
        assert_eq!(parameter_labels(&p)[7], "sigma[2,1]");
    }

    #[test]
    fn scalar_score_by_hand() {
        // d = 1, n = 1: y = 1.5, mu = 0.5, sigma = 2, gamma = 0.3, nu = 1.2, lambda = 0.8
        let p: Params = MsvgParams::new(
            DVector::from_vec(vec![0.5]),
            DMatrix::from_element(1, 1, 2.0),
            DVector::from_vec(vec![0.3]),
            1.2,
        )
        .unwrap()
        .into();
        let s = Sample::iid(&DMatrix::from_element(1, 1, 1.5));
        let l: f64 = 0.8;
        let sc = complete_score(&p, &s, &[l]).unwrap();
        let (e, sg, g, nu) = (1.0, 2.0, 0.3, 1.2f64);
        let r = e - g * l;
        assert!((sc[0] - r / (l * sg)).abs() < 1e-14);
        assert!((sc[1] - (-0.5 / sg + 0.5 * r * r / (l * sg * sg))).abs() < 1e-14);
        assert!((sc[2] - r / sg).abs() < 1e-14);
        let dnu = nu.ln() + 1.0 - digamma_unchecked(nu) + l.ln() - l;
        assert!((sc[3] - dnu).abs() < 1e-14);
    }

    #[test]
    fn plain_moments_match_e_step() {
        let truth = MsvgParams::base_bivariate(2.5);
        let data = draw(&truth, 20, 3).unwrap();
        let s = Sample::iid(&data);
        let p: Params = truth.into();
        let g = CenterGuard::default_for_dim(2);
        let mix = crate::msvg::posterior_lambda_moments(&p, &s, g).unwrap();
        for (i, y) in s.responses().iter().enumerate() {
            let e1 = conditional_lambda_moment(&p, y, None, 1.0, MomentKind::Plain, g).unwrap();
            let em1 = conditional_lambda_moment(&p, y, None, -1.0, MomentKind::Plain, g).unwrap();
            let el = conditional_lambda_moment(&p, y, None, 0.0, MomentKind::TimesLog, g).unwrap();
            assert!((e1 - mix.e_lambda[i]).abs() <= 1e-14 * e1);
            assert!((em1 - mix.e_inv_lambda[i]).abs() <= 1e-14 * em1);
            assert!((el - mix.e_log_lambda[i]).abs() <= 1e-9 * el.abs().max(1.0));
        }
    }
}
