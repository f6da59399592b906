//! Complex linear-algebra contracts used by the relay model.
//!
//! Everything here is a thin layer over `nalgebra`: singular values are
//! returned in descending order, Hermitian inputs are checked before an
//! eigensolver is applied, and log-determinants of Hermitian positive
//! definite matrices go through a Cholesky factor.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{invalid, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Relative reconstruction tolerance promised by [`svd_descending`].
pub const SVD_TOL: f64 = 1e-10;
/// Tolerance used to decide whether a matrix is Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Eigen-residual tolerance promised by [`herm_top_eig`].
pub const EIG_TOL: f64 = 1e-9;

/// Thin SVD `A = U diag(sigma) V^H` with `sigma` descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMatrix,
    pub sigma: Vec<f64>,
    pub v: CMatrix,
}

impl Svd {
    pub fn reconstruct(&self) -> CMatrix {
        let s = CMatrix::from_diagonal(&DVector::from_iterator(
            self.sigma.len(),
            self.sigma.iter().map(|&s| Complex64::new(s, 0.0)),
        ));
        &self.u * s * self.v.adjoint()
    }
}

pub fn is_finite(a: &CMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn trace_re(a: &CMatrix) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

pub fn real_diag(values: &[f64]) -> CMatrix {
    CMatrix::from_diagonal(&DVector::from_iterator(
        values.len(),
        values.iter().map(|&v| Complex64::new(v, 0.0)),
    ))
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// Thin SVD with singular values sorted in descending order.
///
/// Equal singular values keep the order the backend produced them in, so the
/// result is deterministic for a fixed input.
pub fn svd_descending(a: &CMatrix) -> Result<Svd> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return invalid("svd of a matrix with a zero dimension");
    }
    if !is_finite(a) {
        return invalid("svd of a matrix with non-finite entries");
    }
    let svd = a.clone().svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return invalid("svd backend did not return singular vectors"),
    };
    let v = v_t.adjoint();
    let raw: Vec<f64> = svd.singular_values.iter().copied().collect();

    let mut order: Vec<usize> = (0..raw.len()).collect();
    // Stable sort: exact ties keep backend order.
    order.sort_by(|&i, &j| raw[j].total_cmp(&raw[i]));

    let k = raw.len();
    let mut u_sorted = CMatrix::zeros(u.nrows(), k);
    let mut v_sorted = CMatrix::zeros(v.nrows(), k);
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.set_column(dst, &u.column(src));
        v_sorted.set_column(dst, &v.column(src));
    }
    let sigma = order.iter().map(|&i| raw[i].max(0.0)).collect();
    Ok(Svd {
        u: u_sorted,
        sigma,
        v: v_sorted,
    })
}

pub fn is_hermitian(a: &CMatrix, tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = frobenius(a).max(1.0);
    frobenius(&(a - a.adjoint())) <= tol * scale
}

fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).scale(0.5)
}

/// Eigenvalues (ascending) and eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(a: &CMatrix, tol: f64) -> Result<(Vec<f64>, CMatrix)> {
    if !a.is_square() || a.nrows() == 0 {
        return invalid("hermitian eigendecomposition needs a non-empty square matrix");
    }
    if !is_hermitian(a, tol) {
        return invalid("matrix is not hermitian");
    }
    let eig = hermitian_part(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(a.nrows(), a.ncols());
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Largest eigenvalue and a unit eigenvector of a Hermitian PSD matrix.
pub fn herm_top_eig(a: &CMatrix) -> Result<(f64, CVector)> {
    let (values, vectors) = hermitian_eigen(a, HERMITIAN_TOL)?;
    let last = values.len() - 1;
    let v = vectors.column(last).into_owned();
    let norm = v.norm();
    Ok((values[last], v.unscale(norm)))
}

/// True iff the smallest eigenvalue of the Hermitian matrix `a` is at least `-tol`.
pub fn is_psd(a: &CMatrix, tol: f64) -> Result<bool> {
    if !a.is_square() {
        return invalid("psd test on a non-square matrix");
    }
    let (values, _) = hermitian_eigen(a, tol.max(HERMITIAN_TOL))?;
    Ok(values[0] >= -tol)
}

/// Principal square root of a Hermitian PSD matrix; tiny negative
/// eigenvalues from roundoff are clamped to zero.
pub fn psd_sqrt(a: &CMatrix) -> Result<CMatrix> {
    let (values, vectors) = hermitian_eigen(a, HERMITIAN_TOL)?;
    let roots: Vec<f64> = values.iter().map(|&v| v.max(0.0).sqrt()).collect();
    Ok(&vectors * real_diag(&roots) * vectors.adjoint())
}

/// `log2 det(A)` for Hermitian positive definite `A`, via Cholesky.
pub fn log2_det_hpd(a: &CMatrix) -> Result<f64> {
    if !a.is_square() {
        return invalid("determinant of a non-square matrix");
    }
    let chol = match hermitian_part(a).cholesky() {
        Some(c) => c,
        None => return invalid("matrix is not positive definite"),
    };
    let l = chol.l();
    // The complex backend takes square roots of negative pivots instead of
    // failing, so pivots must be checked to be real and positive.
    let mut total = 0.0;
    for z in l.diagonal().iter() {
        if !(z.re > 0.0 && z.im.abs() <= 1e-12 * z.re) {
            return invalid("matrix is not positive definite");
        }
        total += z.re.log2();
    }
    Ok(2.0 * total)
}
