//! Closed-form posterior sign probabilities for single-component priors with
//! `V = I`. These bypass the general Cholesky path and serve as analytic
//! cross-checks of it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::eigendecompose;
use crate::scalar::{norm_cdf, Scalar};

fn check_unit<T: Scalar>(u: &DVector<T>) -> Result<()> {
    let norm = u.norm();
    if (norm - T::one()).abs().as_f64() > T::SYMMETRY_TOL {
        return Err(Error::NotUnitVector { norm: norm.as_f64() });
    }
    Ok(())
}

/// lfsr under the prior `N(0, lambda u u^T)` with `V = I`:
/// `1 - Phi(sqrt(lambda / (lambda + 1)) |u^T x|)`, the same for every condition.
pub fn lfsr_rank1_closed_form<T: Scalar>(x: &DVector<T>, u: &DVector<T>, lambda: T) -> Result<T> {
    check_unit(u)?;
    if !(lambda > T::zero()) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if x.len() != u.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), found: x.len() });
    }
    let shrink = (lambda / (lambda + T::one())).sqrt();
    Ok(T::one() - norm_cdf(shrink * u.dot(x).abs()))
}

/// `p(mu_r <= 0 | x)` under the prior `N(0, u u^T + sigma2 I)` with `V = I`.
///
/// With `a = sigma2 (2 + sigma2)` the posterior of `mu_r` has mean
/// `(a x_r + u_r u^T x) / ((2 + sigma2)(1 + sigma2))` and variance
/// `(a + u_r^2) / ((2 + sigma2)(1 + sigma2))`. At `sigma2 = 0` this is the
/// rank-one result `Phi(-sqrt(1/2) sign(u_r) u^T x)`.
pub fn negprob_fullrank_closed_form<T: Scalar>(x: &DVector<T>, u: &DVector<T>, sigma2: T, r: usize) -> Result<T> {
    check_unit(u)?;
    if !(sigma2 >= T::zero()) {
        return Err(Error::InvalidArgument(format!("sigma2 must be nonnegative, got {sigma2}")));
    }
    if x.len() != u.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), found: x.len() });
    }
    if r >= x.len() {
        return Err(Error::InvalidArgument(format!("condition {r} out of range")));
    }
    let two = T::lit(2.0);
    let a = sigma2 * (two + sigma2);
    let num = a * x[r] + u[r] * u.dot(x);
    let den2 = (two + sigma2) * (T::one() + sigma2) * (a + u[r] * u[r]);
    if den2 == T::zero() {
        // point mass at zero
        return Ok(T::lit(0.5));
    }
    Ok(norm_cdf(-num / den2.sqrt()))
}

/// `p(mu_r <= 0 | x)` for the prior `N(0, U)`, `V = I`, written through the
/// eigendecomposition `U = sum_k lambda_k q_k q_k^T`:
/// `Phi(-sum_k l_k q_kr (q_k^T x) / sqrt(sum_k l_k q_kr^2))` with
/// `l_k = lambda_k / (1 + lambda_k)`.
pub fn negprob_eigen_decomposed<T: Scalar>(x: &DVector<T>, u: &DMatrix<T>, r: usize) -> Result<T> {
    if x.len() != u.nrows() {
        return Err(Error::DimensionMismatch { expected: u.nrows(), found: x.len() });
    }
    if r >= x.len() {
        return Err(Error::InvalidArgument(format!("condition {r} out of range")));
    }
    let eig = eigendecompose(u)?;
    let mut num = T::zero();
    let mut den2 = T::zero();
    let mut scale = T::zero();
    for k in 0..eig.dim() {
        let lambda = eig.eigenvalues[k];
        if lambda.as_f64() < -T::PSD_TOL {
            return Err(Error::NotPsd { component: 0, min_eigenvalue: lambda.as_f64() });
        }
        if lambda <= T::zero() {
            continue;
        }
        let shrunk = lambda / (T::one() + lambda);
        let q = eig.eigenvectors.column(k);
        num += shrunk * q[r] * q.dot(x);
        den2 += shrunk * q[r] * q[r];
        if shrunk > scale {
            scale = shrunk;
        }
    }
    if den2 <= scale * T::default_epsilon() {
        return Err(Error::DegenerateCondition { condition: r });
    }
    Ok(norm_cdf(-num / den2.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn skewed_u() -> DVector<f64> {
        let u = DVector::from_vec(vec![1.0, 1.0, 0.01, 0.01, 0.01]);
        &u / u.norm()
    }

    #[test]
    fn rank1_orthogonal_x_gives_half() {
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let x = DVector::from_vec(vec![0.0, 4.0]);
        assert_eq!(lfsr_rank1_closed_form(&x, &u, 1.0).unwrap(), 0.5);
    }

    #[test]
    fn rank1_standard_value() {
        // lambda = 1, |u^T x| = 2: 1 - Phi(sqrt(2)), Phi from an independent erfc table value.
        let u = DVector::from_vec(vec![0.6, 0.8]);
        let x = DVector::from_vec(vec![1.2_f64, 1.6]);
        let expected = 0.5 * 0.15729920705028516; // erfc(1) / 2
        assert!((lfsr_rank1_closed_form(&x, &u, 1.0).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn rank1_rejects_non_unit() {
        let u = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(lfsr_rank1_closed_form(&u.clone(), &u, 1.0), Err(Error::NotUnitVector { .. })));
    }

    #[test]
    fn fullrank_at_zero_sigma_matches_rank1_formula() {
        let u = skewed_u();
        let x = DVector::from_vec(vec![0.3, -1.7, 0.2, 2.2, -0.4]);
        for r in 0..5 {
            let expected = norm_cdf(-(0.5f64).sqrt() * u[r].signum() * u.dot(&x));
            assert!((negprob_fullrank_closed_form(&x, &u, 0.0, r).unwrap() - expected).abs() < 1e-15);
        }
        let zero = DVector::zeros(5);
        assert_eq!(negprob_fullrank_closed_form(&zero, &u, 0.4, 2).unwrap(), 0.5);
    }

    #[test]
    fn eigen_form_hand_case() {
        let u = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let x = DVector::from_vec(vec![1.0, -1.0]);
        let expected = norm_cdf(-(0.5f64).sqrt());
        assert!((negprob_eigen_decomposed(&x, &u, 0).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn eigen_form_rank1_reduces() {
        let u = skewed_u();
        let x = DVector::from_vec(vec![0.3, -1.7, 0.2, 2.2, -0.4]);
        let uu = &u * u.transpose();
        for r in 0..5 {
            let expected = norm_cdf(-(0.5f64).sqrt() * u[r].signum() * u.dot(&x));
            assert!((negprob_eigen_decomposed(&x, &uu, r).unwrap() - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn eigen_form_degenerate_condition() {
        let u = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let x = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(negprob_eigen_decomposed(&x, &u, 1), Err(Error::DegenerateCondition { condition: 1 }));
    }
}
