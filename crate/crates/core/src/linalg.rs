//! Symmetric-matrix utilities: eigendecomposition, PSD projection, rank
//! truncation and Cholesky-based Gaussian log densities.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomp<T: Scalar> {
    pub eigenvalues: DVector<T>,
    /// Columns are the eigenvectors, in the same order as `eigenvalues`.
    pub eigenvectors: DMatrix<T>,
}

impl<T: Scalar> EigenDecomp<T> {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `sum_k f(lambda_k) q_k q_k^T` over the first `keep` pairs.
    pub fn reconstruct_with(&self, keep: usize, f: impl Fn(T) -> T) -> DMatrix<T> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for k in 0..keep.min(n) {
            let w = f(self.eigenvalues[k]);
            if w == T::zero() {
                continue;
            }
            let q = self.eigenvectors.column(k);
            out.ger(w, &q, &q, T::one());
        }
        symmetrize(&mut out);
        out
    }

    pub fn reconstruct(&self) -> DMatrix<T> {
        self.reconstruct_with(self.dim(), |l| l)
    }
}

pub fn max_asymmetry<T: Scalar>(m: &DMatrix<T>) -> T {
    let n = m.nrows();
    let mut worst = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (m[(i, j)] - m[(j, i)]).abs();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

pub fn ensure_symmetric<T: Scalar>(m: &DMatrix<T>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
    }
    let asym = max_asymmetry(m);
    if asym.as_f64() > T::SYMMETRY_TOL || !asym.is_finite() {
        return Err(Error::NotSymmetric { max_asymmetry: asym.as_f64() });
    }
    Ok(())
}

/// Replace `m` with `(m + m^T) / 2` in place.
pub fn symmetrize<T: Scalar>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn eigendecompose<T: Scalar>(m: &DMatrix<T>) -> Result<EigenDecomp<T>> {
    ensure_symmetric(m)?;
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the solver's order within ties.
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(EigenDecomp { eigenvalues, eigenvectors })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> Result<T> {
    let eig = eigendecompose(m)?;
    Ok(eig.eigenvalues.iter().copied().fold(T::lit(f64::INFINITY), |a, b| if b < a { b } else { a }))
}

/// Best PSD approximation of rank at most `rank`: keep the `rank` leading
/// eigenpairs with eigenvalues clamped at zero.
pub fn truncate_rank<T: Scalar>(m: &DMatrix<T>, rank: usize) -> Result<DMatrix<T>> {
    let dim = m.nrows();
    if rank == 0 || rank > dim {
        return Err(Error::RankOutOfRange { rank, dim });
    }
    let eig = eigendecompose(m)?;
    Ok(eig.reconstruct_with(rank, |l| if l > T::zero() { l } else { T::zero() }))
}

/// Nearest PSD matrix in Frobenius norm: clamp negative eigenvalues to zero.
pub fn psd_project<T: Scalar>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let eig = eigendecompose(m)?;
    if eig.eigenvalues.iter().all(|&l| l >= T::zero()) {
        let mut out = m.clone();
        symmetrize(&mut out);
        return Ok(out);
    }
    Ok(eig.reconstruct_with(eig.dim(), |l| if l > T::zero() { l } else { T::zero() }))
}

/// Number of eigenvalues above `threshold`.
pub fn numerical_rank<T: Scalar>(m: &DMatrix<T>, threshold: T) -> Result<usize> {
    Ok(eigendecompose(m)?.eigenvalues.iter().filter(|&&l| l > threshold).count())
}

/// Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky<T: Scalar>(m: &DMatrix<T>, context: impl FnOnce() -> String) -> Result<Cholesky<T, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::SingularCovariance { context: context() })
}

/// `log N(x; 0, S)` given the Cholesky factor of `S`.
pub fn log_mvn_zero_mean<T: Scalar>(x: &DVector<T>, chol: &Cholesky<T, Dyn>) -> T {
    let l = chol.l_dirty();
    let n = x.len();
    let mut half_logdet = T::zero();
    for i in 0..n {
        half_logdet += l[(i, i)].ln();
    }
    let z = l.view((0, 0), (n, n)).solve_lower_triangular(x).expect("nonsingular factor");
    let two_pi = T::lit(2.0 * std::f64::consts::PI);
    -(T::lit(0.5) * T::from_usize(n).unwrap() * two_pi.ln()) - half_logdet - T::lit(0.5) * z.norm_squared()
}

/// Diagonal of `m^{-1}` for a positive-definite `m`.
pub fn inverse_diagonal<T: Scalar>(chol: &Cholesky<T, Dyn>) -> DVector<T> {
    chol.inverse().diagonal()
}
