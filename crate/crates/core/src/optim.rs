//! Bounded one-dimensional maximisation (golden section with parabolic steps).

const GOLDEN: f64 = 0.381_966_011_250_105_1;

/// Maximises `f` on `[lo, hi]` to absolute tolerance `xtol` in `x`.
///
/// The endpoints are evaluated as well, so a monotone objective returns the
/// better bound. Non-finite values are treated as `-inf`.
pub(crate) fn brent_maximize<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, xtol: f64) -> (f64, f64) {
    let mut g = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };
    let (mut a, mut b) = (lo, hi);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = g(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let eps = f64::EPSILON.sqrt();
    for _ in 0..500 {
        let m = 0.5 * (a + b);
        let tol1 = eps * x.abs() + xtol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_old = e;
            e = d;
            if p.abs() < (0.5 * q * e_old).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 { x + d } else if d > 0.0 { x + tol1 } else { x - tol1 };
        let fu = g(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    let mut best = (x, fx);
    for end in [lo, hi] {
        let fe = g(end);
        if fe < best.1 {
            best = (end, fe);
        }
    }
    (best.0, -best.1)
}

/// Root of `f` on `[a, b]` given `f(a) > 0 > f(b)` or the reverse, by false
/// position with the Illinois modification. Stops when the bracket shrinks to
/// a few ulps or `f` hits zero.
pub(crate) fn bracketed_root<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 || fa.signum() == fb.signum() {
        return b;
    }
    let mut side = 0;
    let mut x = 0.5 * (a + b);
    for _ in 0..200 {
        x = (a * fb - b * fa) / (fb - fa);
        if !(x > a.min(b) && x < a.max(b)) {
            x = 0.5 * (a + b);
        }
        let fx = f(x);
        if fx == 0.0 || (b - a).abs() <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        if fx.signum() == fb.signum() {
            b = x;
            fb = fx;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = x;
            fa = fx;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_of_smooth_function() {
        let r = bracketed_root(|x| 2.0 - x * x, 0.0, 3.0);
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
        let r = bracketed_root(|x: f64| (-x).exp() - x, 1.0, 0.0);
        assert!((r - 0.567_143_290_409_783_8).abs() < 1e-15);
    }

    #[test]
    fn finds_interior_maximum() {
        let (x, fx) = brent_maximize(|x| -(x - 1.3).powi(2) + 2.0, -5.0, 10.0, 1e-9);
        assert!((x - 1.3).abs() < 1e-8);
        assert!((fx - 2.0).abs() < 1e-14);
    }

    #[test]
    fn monotone_returns_bound() {
        let (x, _) = brent_maximize(|x| x, 0.0, 3.0, 1e-6);
        assert_eq!(x, 3.0);
        let (x, _) = brent_maximize(|x| -x.exp(), 1e-4, 200.0, 1e-6);
        assert_eq!(x, 1e-4);
    }

    #[test]
    fn non_smooth_peak() {
        let (x, _) = brent_maximize(|x: f64| -(x - 0.7).abs().sqrt(), 0.0, 4.0, 1e-7);
        assert!((x - 0.7).abs() < 1e-6);
    }
}
