//! Special functions used throughout the estimator.
//!
//! Everything Bessel-related is evaluated on the log scale. The E-step divides
//! Bessel values whose magnitudes individually under- or overflow (large
//! arguments for outlying observations, tiny arguments inside the delta
//! region), so callers work with `log_bessel_k` and `bessel_k_ratio` and never
//! with raw `K` values.
//!
//! `K_nu(z)` is computed for the fractional part `mu = nu - round(nu)` with
//! Temme's series when `z <= 2` and Steed's continued fraction otherwise, then
//! carried to the requested order by forward recurrence on the ratio
//! `K_{mu+k+1} / K_{mu+k}`, which is stable for `K`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const TEMME_MAX_ITER: usize = 500;
const STEED_MAX_ITER: usize = 10_000;

/// Step used for central differences in the order of `K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderDiffStep(f64);

impl OrderDiffStep {
    pub fn new(h: f64) -> Result<Self> {
        if h.is_finite() && h > 0.0 {
            Ok(Self(h))
        } else {
            Err(Error::Domain(format!("order-difference step must be > 0, got {h}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for OrderDiffStep {
    fn default() -> Self {
        Self(1e-5)
    }
}

/// Derivative degree for [`bessel_k_order_derivative`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderDegree {
    First,
    Second,
}

// Chebyshev expansions of Temme's gamma1 / gamma2 on |mu| <= 1/2,
// evaluated at 4|mu| - 1.
const GAMMA1_CHEB: [f64; 14] = [
    -1.145164083662683,
    0.006360853113470843,
    0.0018624519300720684,
    0.0001528330858734535,
    1.7017464011802038e-05,
    -6.459750292334725e-07,
    -5.181984843251938e-08,
    4.518909289485818e-10,
    3.243322737102087e-11,
    6.830943402494752e-13,
    2.8353502755172103e-14,
    -7.98839057693236e-16,
    -3.372667730077195e-17,
    -3.658633480921052e-20,
];

const GAMMA2_CHEB: [f64; 15] = [
    1.8826455249496719,
    -0.07749065839616752,
    -0.01825671484732493,
    0.0006338030209074896,
    7.62290543508729e-05,
    -9.550164756172044e-07,
    -8.892726810788635e-08,
    -1.9521334772319614e-09,
    -9.400305273588516e-11,
    4.687513384953239e-12,
    2.265853574692576e-13,
    -1.1725509698488015e-15,
    -7.044133820024522e-17,
    -2.4377878310107696e-18,
    -7.52252432182539e-20,
];

fn chebyshev(coeffs: &[f64], x: f64) -> f64 {
    let y2 = 2.0 * x;
    let mut d = 0.0;
    let mut dd = 0.0;
    for &c in coeffs[1..].iter().rev() {
        let tmp = d;
        d = y2 * d - dd + c;
        dd = tmp;
    }
    x * d - dd + 0.5 * coeffs[0]
}

/// Returns `(gamma1, gamma2, 1/Gamma(1+mu), 1/Gamma(1-mu))` for |mu| <= 1/2.
fn temme_gamma(mu: f64) -> (f64, f64, f64, f64) {
    let t = 4.0 * mu.abs() - 1.0;
    let g1 = chebyshev(&GAMMA1_CHEB, t);
    let g2 = chebyshev(&GAMMA2_CHEB, t);
    (g1, g2, g2 - mu * g1, g2 + mu * g1)
}

/// `(ln K_mu(x), K_{mu+1}(x) / K_mu(x))` for |mu| <= 1/2 and 0 < x <= 2.
fn temme_series(mu: f64, x: f64) -> (f64, f64) {
    let half_x = 0.5 * x;
    let ln_half_x = half_x.ln();
    let sigma = -mu * ln_half_x;
    let pi_mu = PI * mu;
    let sinrat = if pi_mu.abs() < f64::EPSILON { 1.0 } else { pi_mu / pi_mu.sin() };
    let sinhrat = if sigma.abs() < f64::EPSILON { 1.0 } else { sigma.sinh() / sigma };
    let (g1, g2, inv_gamma_1p, inv_gamma_1m) = temme_gamma(mu);

    let e_sigma = sigma.exp();
    let mut f = sinrat * (sigma.cosh() * g1 - sinhrat * ln_half_x * g2);
    let mut p = 0.5 * e_sigma / inv_gamma_1p;
    let mut q = 0.5 / (e_sigma * inv_gamma_1m);
    let mut c = 1.0;
    let mut sum0 = f;
    let mut sum1 = p;
    let q2 = half_x * half_x;
    for k in 1..=TEMME_MAX_ITER {
        let kf = k as f64;
        f = (kf * f + p + q) / (kf * kf - mu * mu);
        c *= q2 / kf;
        p /= kf - mu;
        q /= kf + mu;
        let del0 = c * f;
        let del1 = c * (p - kf * f);
        sum0 += del0;
        sum1 += del1;
        if del0.abs() < 0.5 * sum0.abs() * f64::EPSILON {
            break;
        }
    }
    (sum0.ln(), sum1 / (half_x * sum0))
}

/// `(ln K_mu(x), K_{mu+1}(x) / K_mu(x))` for |mu| <= 1/2 and x > 2.
fn steed_cf2(mu: f64, x: f64) -> (f64, f64) {
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut delh = d;
    let mut h = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25 - mu * mu;
    let mut a = -a1;
    let mut c = a1;
    let mut q = a1;
    let mut s = 1.0 + q * delh;
    for i in 1..STEED_MAX_ITER {
        let fi = i as f64;
        a -= 2.0 * fi;
        c = -a * c / (fi + 1.0);
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < f64::EPSILON {
            break;
        }
    }
    h *= a1;
    let ln_k = 0.5 * (PI / (2.0 * x)).ln() - x - s.ln();
    (ln_k, (mu + x + 0.5 - h) / x)
}

fn check_arg(order: f64, z: f64) -> Result<()> {
    if !order.is_finite() || !z.is_finite() {
        return Err(Error::Domain(format!("non-finite Bessel input (order {order}, z {z})")));
    }
    if z <= 0.0 {
        return Err(Error::Domain(format!("Bessel K requires z > 0, got {z}")));
    }
    Ok(())
}

/// `(ln K_nu(z), K_{nu+1}(z)/K_nu(z))` for nu >= 0.
pub(crate) fn log_k_and_ratio(nu: f64, z: f64) -> (f64, f64) {
    let n = nu.round();
    let mu = nu - n;
    let (mut ln_k, mut ratio) = if z <= 2.0 { temme_series(mu, z) } else { steed_cf2(mu, z) };
    let two_over_z = 2.0 / z;
    for k in 1..=(n as usize) {
        ln_k += ratio.ln();
        ratio = 1.0 / ratio + (mu + k as f64) * two_over_z;
    }
    (ln_k, ratio)
}

/// `(ln K_{p-1}(z), ln K_p(z), ln K_{p+1}(z))` sharing work where the orders
/// lie on one recurrence ladder.
pub(crate) fn log_k_triplet(p: f64, z: f64) -> (f64, f64, f64) {
    if p >= 1.0 {
        let (lm, r) = log_k_and_ratio(p - 1.0, z);
        let l0 = lm + r.ln();
        let r1 = 1.0 / r + 2.0 * p / z;
        (lm, l0, l0 + r1.ln())
    } else if p >= 0.0 {
        let (l0, r) = log_k_and_ratio(p, z);
        let lm = log_k_and_ratio(1.0 - p, z).0;
        (lm, l0, l0 + r.ln())
    } else {
        // K_p = K_{-p}, K_{p-1} = K_{1-p}
        let (l0, r) = log_k_and_ratio(-p, z);
        let lp = log_k_and_ratio((p + 1.0).abs(), z).0;
        (l0 + r.ln(), l0, lp)
    }
}

/// Natural log of the modified Bessel function of the second kind, `ln K_order(z)`.
pub fn log_bessel_k(order: f64, z: f64) -> Result<f64> {
    check_arg(order, z)?;
    Ok(log_k_and_ratio(order.abs(), z).0)
}

/// `K_a(z) / K_b(z)` computed from log values.
pub fn bessel_k_ratio(order_a: f64, order_b: f64, z: f64) -> Result<f64> {
    check_arg(order_a, z)?;
    check_arg(order_b, z)?;
    if order_a.abs() == order_b.abs() {
        return Ok(1.0);
    }
    let a = log_k_and_ratio(order_a.abs(), z).0;
    let b = log_k_and_ratio(order_b.abs(), z).0;
    Ok((a - b).exp())
}

/// Order-derivatives of `K` relative to `K` itself: returns
/// `(K^(1,0)_nu(z) / K_nu(z), K^(2,0)_nu(z) / K_nu(z))` by central differences.
///
/// This is the form the E-step and the information matrix consume; the ratio
/// stays finite where `K` itself does not.
pub fn bessel_k_order_derivative_ratios(order: f64, z: f64, step: OrderDiffStep) -> Result<(f64, f64)> {
    check_arg(order, z)?;
    let h = step.get();
    let centre = log_k_and_ratio(order.abs(), z).0;
    let up = log_k_and_ratio((order + h).abs(), z).0 - centre;
    let down = log_k_and_ratio((order - h).abs(), z).0 - centre;
    let first = (up.exp_m1() - down.exp_m1()) / (2.0 * h);
    let second = (up.exp_m1() + down.exp_m1()) / (h * h);
    Ok((first, second))
}

/// Central-difference derivative of `K_nu(z)` in the order `nu`.
///
/// Degree one is `(K_{nu+h} - K_{nu-h}) / 2h`, degree two is
/// `(K_{nu+h} - 2 K_nu + K_{nu-h}) / h^2`; both are assembled from log values
/// with `K_nu` factored out.
pub fn bessel_k_order_derivative(order: f64, z: f64, step: OrderDiffStep, degree: OrderDegree) -> Result<f64> {
    let (first, second) = bessel_k_order_derivative_ratios(order, z, step)?;
    let ln_k = log_bessel_k(order, z)?;
    let rel = match degree {
        OrderDegree::First => first,
        OrderDegree::Second => second,
    };
    if rel == 0.0 {
        return Ok(0.0);
    }
    Ok(rel.signum() * (rel.abs().ln() + ln_k).exp())
}

fn check_positive(x: f64, what: &str) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} requires x > 0, got {x}")))
    }
}

/// Digamma function `psi(x) = d/dx ln Gamma(x)` for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    check_positive(x, "digamma")?;
    Ok(digamma_unchecked(x))
}

pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // -sum B_{2k} / (2k x^{2k})
    let tail = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    acc + x.ln() - 0.5 * inv - tail
}

/// Trigamma function `psi'(x)` for x > 0.
pub fn trigamma(x: f64) -> Result<f64> {
    check_positive(x, "trigamma")?;
    Ok(trigamma_unchecked(x))
}

pub(crate) fn trigamma_unchecked(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let tail = inv2
        * inv
        * (1.0 / 6.0
            - inv2
                * (1.0 / 30.0
                    - inv2
                        * (1.0 / 42.0
                            - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0 - inv2 * (691.0 / 2730.0 - inv2 * 7.0 / 6.0))))));
    acc + inv + 0.5 * inv2 + tail
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Gamma(x)` for x > 0.
pub fn ln_gamma(x: f64) -> Result<f64> {
    check_positive(x, "ln_gamma")?;
    Ok(ln_gamma_unchecked(x))
}

pub(crate) fn ln_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        return (PI / (PI * x).sin()).ln() - ln_gamma_unchecked(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    LN_SQRT_2PI + (x + 0.5) * t.ln() - t + a.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    fn k_half(z: f64) -> f64 {
        (PI / (2.0 * z)).sqrt() * (-z).exp()
    }

    #[test]
    fn half_integer_closed_forms() {
        for &z in &[1e-3, 0.1, 1.0, 1.9, 2.0, 2.1, 7.5, 40.0] {
            let lk = log_bessel_k(0.5, z).unwrap();
            assert!((lk - k_half(z).ln()).abs() <= 1e-14 * lk.abs().max(1.0), "z={z}");
            let r = bessel_k_ratio(1.5, 0.5, z).unwrap();
            assert!((r - (1.0 + 1.0 / z)).abs() <= 1e-14 * r, "z={z} r={r}");
        }
        let v = log_bessel_k(0.5, 1.0).unwrap();
        assert!((v - (-0.774_208_647)).abs() < 1e-9);
    }

    #[test]
    fn symmetric_in_order() {
        for &(nu, z) in &[(0.5, 1.0), (0.3, 2.7), (3.7, 0.01), (12.2, 45.0)] {
            assert_eq!(log_bessel_k(nu, z).unwrap(), log_bessel_k(-nu, z).unwrap());
        }
    }

    #[test]
    fn recurrence_in_ratio_form() {
        for &(nu, z) in &[(0.2, 0.5), (1.3, 3.0), (4.6, 1.1), (0.0, 10.0), (7.25, 0.05)] {
            let up = bessel_k_ratio(nu + 1.0, nu, z).unwrap();
            let down = bessel_k_ratio(nu - 1.0, nu, z).unwrap();
            let rhs = down + 2.0 * nu / z;
            assert!((up - rhs).abs() <= 1e-10 * up, "nu={nu} z={z}");
        }
    }

    #[test]
    fn extreme_arguments_stay_finite() {
        for &z in &[1e-300, 1e-30, 5000.0, 1e8] {
            for &nu in &[0.0, 0.4, 1.0, 20.0, 300.0] {
                let v = log_bessel_k(nu, z).unwrap();
                assert!(v.is_finite(), "nu={nu} z={z}");
            }
        }
        let r = bessel_k_ratio(1.2, 0.2, 5000.0).unwrap();
        assert!(r.is_finite() && r > 1.0);
    }

    #[test]
    fn domain_errors() {
        assert!(log_bessel_k(0.5, 0.0).is_err());
        assert!(log_bessel_k(0.5, -1.0).is_err());
        assert!(log_bessel_k(f64::NAN, 1.0).is_err());
        assert!(bessel_k_ratio(1.0, 0.0, -2.0).is_err());
        assert!(digamma(0.0).is_err());
        assert!(trigamma(-1.0).is_err());
        assert!(OrderDiffStep::new(0.0).is_err());
    }

    #[test]
    fn order_derivative_vanishes_at_zero() {
        for &z in &[0.01, 1.0, 30.0] {
            let d = bessel_k_order_derivative(0.0, z, OrderDiffStep::default(), OrderDegree::First).unwrap();
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn digamma_identities() {
        assert!((digamma(1.0).unwrap() + EULER_GAMMA).abs() < 1e-14);
        for &x in &[1e-4, 0.3, 1.4616, 2.5, 9.99, 10.0, 250.0] {
            let lhs = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            assert!((lhs - 1.0 / x).abs() <= 1e-12 * (1.0 / x).max(1.0), "x={x}");
            assert!(trigamma(x).unwrap() > 0.0);
        }
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).unwrap().abs() < 1e-14);
        assert!(ln_gamma(2.0).unwrap().abs() < 1e-14);
        assert!((ln_gamma(0.5).unwrap() - PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0).unwrap() - 362_880f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(1e-3).unwrap() - 6.907_178_885_383_853).abs() < 1e-12);
    }
}
