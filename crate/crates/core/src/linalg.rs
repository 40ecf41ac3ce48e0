use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factor of a (symmetrized) SPD matrix together with its log-determinant.
#[derive(Debug, Clone)]
pub(crate) struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    pub(crate) log_det: f64,
}

impl SpdFactor {
    pub(crate) fn new(m: &DMatrix<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scale matrix has non-finite entries".into()));
        }
        let sym = symmetrize(m);
        let chol = Cholesky::new(sym).ok_or_else(|| {
            let eig = SymmetricEigen::new(symmetrize(m)).eigenvalues;
            Error::NotPositiveDefinite(format!("eigenvalues {:?}", eig.as_slice()))
        })?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self { chol, log_det })
    }

    /// `L^{-1} v` for the lower Cholesky factor `L`.
    pub(crate) fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut out);
        out
    }

    pub(crate) fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub(crate) fn inverse(&self) -> DMatrix<f64> {
        symmetrize(&self.chol.inverse())
    }
}

/// Symmetrizes and lifts eigenvalues to at least `floor_rel * trace / d`.
pub(crate) fn floor_eigenvalues(m: &DMatrix<f64>, floor_rel: f64) -> DMatrix<f64> {
    let sym = symmetrize(m);
    let d = sym.nrows() as f64;
    let floor = floor_rel * sym.trace().abs() / d;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return sym;
    }
    let lifted = eig.eigenvalues.map(|v| v.max(floor));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&lifted) * eig.eigenvectors.transpose();
    symmetrize(&rebuilt)
}

pub(crate) fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// 2-norm condition number from singular values.
pub(crate) fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Half-vectorisation: lower triangle stacked column by column.
pub(crate) fn vech(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for j in 0..d {
        for i in j..d {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub(crate) fn unvech(v: &[f64], d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for j in 0..d {
        for i in j..d {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    m
}

/// `(i, j)` pairs in vech order.
pub(crate) fn vech_pairs(d: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for j in 0..d {
        for i in j..d {
            out.push((i, j));
        }
    }
    out
}
