//! Quadrature oracles built without the library's special functions
//! ([`total_mass`] integrates the library density itself).
#![allow(dead_code)]

use msvg_core::msvg::{log_density, CenterGuard, MsvgParams};
use nalgebra::{DMatrix, DVector};

/// `ln(h * sum_k exp(g(start + k*h)))` walking away from `start` in both
/// directions until `g` falls `drop` below the running maximum. `g` must be
/// unimodal.
pub fn log_trapezoid_line(g: impl Fn(f64) -> f64, start: f64, h: f64, drop: f64) -> f64 {
    let mut vals = vec![g(start)];
    let mut top = vals[0];
    for dir in [1.0, -1.0] {
        let mut k = 1.0;
        loop {
            let v = g(start + dir * k * h);
            vals.push(v);
            top = top.max(v);
            if v < top - drop {
                break;
            }
            k += 1.0;
        }
    }
    log_sum_exp(&vals) + h.ln()
}

pub fn log_sum_exp(vals: &[f64]) -> f64 {
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// `ln K_nu(z)` from `int_0^inf exp(-z cosh t) cosh(nu t) dt`.
///
/// The integrand is even in `t`, so the trapezoid rule over the whole line is
/// spectrally accurate.
pub fn ln_bessel_k_quad(nu: f64, z: f64) -> f64 {
    let h = 0.01;
    let g = |t: f64| -2.0 * z * (0.5 * t).sinh().powi(2) + ln_cosh(nu * t);
    let mut vals = vec![g(0.0) - std::f64::consts::LN_2];
    let mut top = vals[0];
    let mut k = 1.0;
    loop {
        let t = k * h;
        let v = g(t);
        vals.push(v);
        top = top.max(v);
        if v < top - 90.0 && z * t.sinh() > nu * (nu * t).tanh() {
            break;
        }
        k += 1.0;
    }
    -z + log_sum_exp(&vals) + h.ln()
}

/// Posterior moments of `lambda` with unnormalised density
/// `lambda^(p-1) exp(-(chi/lambda + psi2*lambda)/2)`, integrated in `ln lambda`.
#[derive(Debug, Clone, Copy)]
pub struct GigQuad {
    pub e_lambda: f64,
    pub e_inv_lambda: f64,
    pub e_log_lambda: f64,
    pub e_log_sq: f64,
    pub e_lambda_log: f64,
}

pub fn gig_quad(p: f64, chi: f64, psi2: f64) -> GigQuad {
    let mode = ((p + (p * p + chi * psi2).sqrt()) / psi2).ln();
    let g = |u: f64| p * u - 0.5 * (chi * (-u).exp() + psi2 * u.exp());
    let h = 0.005;
    let mut nodes = vec![mode];
    let top = g(mode);
    for dir in [1.0, -1.0] {
        let mut k = 1.0;
        loop {
            let u = mode + dir * k * h;
            nodes.push(u);
            if g(u) < top - 120.0 {
                break;
            }
            k += 1.0;
        }
    }
    let w: Vec<f64> = nodes.iter().map(|&u| (g(u) - top).exp()).collect();
    let z: f64 = w.iter().sum();
    let avg = |f: &dyn Fn(f64) -> f64| nodes.iter().zip(&w).map(|(&u, &wi)| f(u) * wi).sum::<f64>() / z;
    GigQuad {
        e_lambda: avg(&|u| u.exp()),
        e_inv_lambda: avg(&|u| (-u).exp()),
        e_log_lambda: avg(&|u| u),
        e_log_sq: avg(&|u| u * u),
        e_lambda_log: avg(&|u| u.exp() * u),
    }
}

/// GIG posterior parameters `(p, chi, psi2)` of the mixing variable given `y`.
pub fn posterior_gig(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    gamma: &DVector<f64>,
    nu: f64,
    y: &DVector<f64>,
) -> (f64, f64, f64) {
    let inv = sigma.clone().try_inverse().unwrap();
    let e = y - mu;
    let d = y.len() as f64;
    let chi = (e.transpose() * &inv * &e)[(0, 0)];
    let psi2 = 2.0 * nu + (gamma.transpose() * &inv * gamma)[(0, 0)];
    (nu - 0.5 * d, chi, psi2)
}

/// Log-density from the normal mean-variance mixture integral over `ln lambda`.
pub fn ln_mixture_density(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    gamma: &DVector<f64>,
    nu: f64,
    y: &DVector<f64>,
) -> f64 {
    let d = y.len() as f64;
    let inv = sigma.clone().try_inverse().unwrap();
    let det = sigma.determinant();
    let e = y - mu;
    let a = (e.transpose() * &inv * &e)[(0, 0)];
    let b = (e.transpose() * &inv * gamma)[(0, 0)];
    let c = (gamma.transpose() * &inv * gamma)[(0, 0)];
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let konst = -0.5 * d * ln2pi - 0.5 * det.ln() + nu * nu.ln() - libm::lgamma(nu);
    let g = move |u: f64| {
        let l = u.exp();
        konst + (nu - 0.5 * d) * u - 0.5 * a / l + b - 0.5 * c * l - nu * l
    };
    let mode = {
        let (p, psi2) = (nu - 0.5 * d, 2.0 * nu + c);
        ((p + (p * p + a * psi2).sqrt()) / psi2).ln()
    };
    log_trapezoid_line(g, mode, 0.005, 120.0)
}

/// Central-difference Jacobian of `f` at `x` with per-coordinate steps.
pub fn jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, steps: &[f64]) -> DMatrix<f64> {
    let m = f(x).len();
    let mut out = DMatrix::zeros(m, x.len());
    for j in 0..x.len() {
        let mut up = x.clone();
        up[j] += steps[j];
        let mut dn = x.clone();
        dn[j] -= steps[j];
        let col = (f(&up) - f(&dn)) / (2.0 * steps[j]);
        out.set_column(j, &col);
    }
    out
}

/// Central-difference gradient of a scalar function.
pub fn gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, steps: &[f64]) -> DVector<f64> {
    let g = jacobian(|v| DVector::from_element(1, f(v)), x, steps);
    g.row(0).transpose()
}

/// Central-difference Hessian of a scalar function (four-point cross terms).
pub fn hessian(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, steps: &[f64]) -> DMatrix<f64> {
    let k = x.len();
    let f0 = f(x);
    let at = |i: usize, si: f64, j: usize, sj: f64| {
        let mut v = x.clone();
        v[i] += si;
        v[j] += sj;
        f(&v)
    };
    let mut h = DMatrix::zeros(k, k);
    for i in 0..k {
        let hi = steps[i];
        h[(i, i)] = (at(i, hi, i, 0.0) - 2.0 * f0 + at(i, -hi, i, 0.0)) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let v = (at(i, hi, j, hj) - at(i, hi, j, -hj) - at(i, -hi, j, hj) + at(i, -hi, j, -hj)) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// `(K_nu(z), dK/dnu, d2K/dnu2)` from the integral representation, with the
/// order derivatives taken under the integral sign. For moderate arguments.
pub fn bessel_k_order_derivs_quad(nu: f64, z: f64) -> (f64, f64, f64) {
    let h: f64 = 0.002;
    let (mut k0, mut k1, mut k2) = (0.5 * (-z).exp(), 0.0, 0.0);
    let mut t: f64 = h;
    loop {
        let base = (-z * t.cosh()).exp();
        k0 += base * (nu * t).cosh();
        k1 += base * t * (nu * t).sinh();
        k2 += base * t * t * (nu * t).cosh();
        if t > 1.0 && base * t * t * (nu * t).cosh() < 1e-300 {
            break;
        }
        t += h;
    }
    (k0 * h, k1 * h, k2 * h)
}

/// Integral of the density in whitened polar coordinates with `u = ln r`.
pub fn total_mass(p: &MsvgParams) -> f64 {
    let guard = CenterGuard::new(1e-300).unwrap();
    let d = p.dim();
    let l = p.sigma.clone().cholesky().unwrap().l();
    let det_l = l.determinant();
    // below r = e^-25 the offset from mu is lost to rounding; the mass there is ~r^(2 nu)
    let (h, u_lo, u_hi) = (0.02, -25.0, 250f64.ln());
    let nodes = ((u_hi - u_lo) / h) as usize;
    let dirs: Vec<DVector<f64>> = match d {
        1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        _ => {
            let m = 256;
            (0..m)
                .map(|k| {
                    let t = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
                    DVector::from_vec(vec![t.cos(), t.sin()])
                })
                .collect()
        }
    };
    let dtheta = if d == 1 { 1.0 } else { 2.0 * std::f64::consts::PI / dirs.len() as f64 };
    let mut total = 0.0;
    for dir in &dirs {
        let w = &l * dir;
        for k in 0..=nodes {
            let u = u_lo + k as f64 * h;
            let r = u.exp();
            let y = &p.mu + &w * r;
            let f = log_density(p, &y, guard).unwrap().exp();
            total += f * r.powi(d as i32) * h;
        }
    }
    total * dtheta * det_l
}
