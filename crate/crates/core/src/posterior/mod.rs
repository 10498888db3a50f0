//! Exact mixture posterior for `x_i ~ N(mu_i, V_i)`, `mu_i ~ sum_k pi_k N(0, U_k + D_k)`.
//!
//! Every Gaussian quantity is computed from a Cholesky factor of
//! `T_ik = U_k + D_k + V_i`; no explicit inverse is formed.

mod closed_form;
mod sign;

pub use closed_form::{lfsr_rank1_closed_form, negprob_eigen_decomposed, negprob_fullrank_closed_form};
pub use sign::{fsp, fsr_hat, reject_at_level, s_values, DecisionSet};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, log_mvn_zero_mean, symmetrize};
use crate::model::{Dataset, MixturePrior, NoiseCov, Observation};
use crate::scalar::{log_sum_exp, norm_cdf, Scalar};

/// Posterior of one observation's effect vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary<T: Scalar> {
    /// Posterior component probabilities `pi~_ik`.
    pub comp_weights: Vec<T>,
    pub comp_means: Vec<DVector<T>>,
    pub comp_covs: Vec<DMatrix<T>>,
    pub mean: DVector<T>,
    /// `p(mu_r <= 0 | x)` per condition.
    pub neg_prob: DVector<T>,
    pub lfsr: DVector<T>,
}

/// Per-component quantities that depend on `(U_k + D_k, V)` but not on `x`.
pub(crate) struct ComponentTerms<T: Scalar> {
    pub(crate) chol: Cholesky<T, Dyn>,
    /// `S (S + V)^{-1}`
    pub(crate) gain: DMatrix<T>,
    /// `S - S (S + V)^{-1} S`
    pub(crate) post_cov: DMatrix<T>,
}

pub(crate) fn component_terms<T: Scalar>(s: &DMatrix<T>, v: &DMatrix<T>, context: impl FnOnce() -> String) -> Result<ComponentTerms<T>> {
    let t = s + v;
    let chol = cholesky(&t, context)?;
    // (S T^{-1})^T = T^{-1} S since both are symmetric.
    let gain = chol.solve(s).transpose();
    let mut post_cov = s - &gain * s;
    symmetrize(&mut post_cov);
    Ok(ComponentTerms { chol, gain, post_cov })
}

fn check_dims<T: Scalar>(data_dim: usize, prior: &MixturePrior<T>) -> Result<()> {
    if data_dim != prior.dim() {
        return Err(Error::DimensionMismatch { expected: prior.dim(), found: data_dim });
    }
    Ok(())
}

/// Evaluates `f(i, k, terms)` for every sample/component pair, factoring each
/// component once when the noise is shared.
fn for_each_pair<T: Scalar>(
    data: &Dataset<T>,
    prior: &MixturePrior<T>,
    mut f: impl FnMut(usize, usize, &ComponentTerms<T>),
) -> Result<()> {
    check_dims(data.dim(), prior)?;
    let covs: Vec<DMatrix<T>> = prior.components().iter().map(|c| c.covariance()).collect();
    match data.noise() {
        NoiseCov::Shared(v) => {
            let terms = covs
                .iter()
                .enumerate()
                .map(|(k, s)| component_terms(s, v, || format!("U_{k} + D_{k} + V")))
                .collect::<Result<Vec<_>>>()?;
            for i in 0..data.len() {
                for (k, t) in terms.iter().enumerate() {
                    f(i, k, t);
                }
            }
        }
        NoiseCov::PerSample(vs) => {
            for (i, v) in vs.iter().enumerate() {
                for (k, s) in covs.iter().enumerate() {
                    let t = component_terms(s, v, || format!("U_{k} + D_{k} + V_{i}"))?;
                    f(i, k, &t);
                }
            }
        }
    }
    Ok(())
}

/// `log pi_k + log N(x_i; 0, U_k + D_k + V_i)` as an `N x K` matrix.
pub fn component_log_densities<T: Scalar>(data: &Dataset<T>, prior: &MixturePrior<T>) -> Result<DMatrix<T>> {
    let log_w: Vec<T> = prior.weights().iter().map(|w| w.ln()).collect();
    let mut out = DMatrix::zeros(data.len(), prior.k());
    for_each_pair(data, prior, |i, k, t| {
        out[(i, k)] = log_w[k] + log_mvn_zero_mean(data.x(i), &t.chol);
    })?;
    Ok(out)
}

/// Posterior component probabilities `gamma_ik` (rows sum to one) and the
/// total marginal log-likelihood.
pub fn responsibilities<T: Scalar>(data: &Dataset<T>, prior: &MixturePrior<T>) -> Result<(DMatrix<T>, T)> {
    let mut gamma = component_log_densities(data, prior)?;
    let mut total = T::zero();
    for i in 0..gamma.nrows() {
        let row: Vec<T> = gamma.row(i).iter().copied().collect();
        let lse = log_sum_exp(&row);
        total += lse;
        for k in 0..gamma.ncols() {
            gamma[(i, k)] = (row[k] - lse).exp();
        }
    }
    Ok((gamma, total))
}

/// `sum_i log sum_k pi_k N(x_i; 0, U_k + D_k + V_i)`.
pub fn marginal_log_likelihood<T: Scalar>(data: &Dataset<T>, prior: &MixturePrior<T>) -> Result<T> {
    Ok(responsibilities(data, prior)?.1)
}

fn negative_mass<T: Scalar>(mean: T, var: T) -> T {
    if var > T::zero() {
        norm_cdf(-mean / var.sqrt())
    } else if mean < T::zero() {
        T::one()
    } else if mean > T::zero() {
        T::zero()
    } else {
        T::lit(0.5)
    }
}

fn summarize<T: Scalar>(log_dens: &[T], comp_means: Vec<DVector<T>>, comp_covs: Vec<DMatrix<T>>) -> PosteriorSummary<T> {
    let lse = log_sum_exp(log_dens);
    let comp_weights: Vec<T> = log_dens.iter().map(|&l| (l - lse).exp()).collect();
    let r = comp_means[0].len();
    let mut mean = DVector::zeros(r);
    let mut neg_prob = DVector::zeros(r);
    for ((w, m), c) in comp_weights.iter().zip(&comp_means).zip(&comp_covs) {
        mean.axpy(*w, m, T::one());
        for j in 0..r {
            neg_prob[j] += *w * negative_mass(m[j], c[(j, j)]);
        }
    }
    let half = T::lit(0.5);
    let lfsr = neg_prob.map(|p| {
        let p = if p > T::one() { T::one() } else { p };
        let q = T::one() - p;
        let l = if p < q { p } else { q };
        if l > half { half } else { l }
    });
    PosteriorSummary { comp_weights, comp_means, comp_covs, mean, neg_prob, lfsr }
}

/// Posterior summary for a single observation.
pub fn posterior_summary<T: Scalar>(obs: &Observation<T>, prior: &MixturePrior<T>) -> Result<PosteriorSummary<T>> {
    check_dims(obs.dim(), prior)?;
    let mut log_dens = Vec::with_capacity(prior.k());
    let mut means = Vec::with_capacity(prior.k());
    let mut covs = Vec::with_capacity(prior.k());
    for (k, c) in prior.components().iter().enumerate() {
        let t = component_terms(&c.covariance(), &obs.v, || format!("U_{k} + D_{k} + V"))?;
        log_dens.push(c.weight.ln() + log_mvn_zero_mean(&obs.x, &t.chol));
        means.push(&t.gain * &obs.x);
        covs.push(t.post_cov);
    }
    Ok(summarize(&log_dens, means, covs))
}

/// Posterior summaries for every observation in `data`.
pub fn posterior_summaries<T: Scalar>(data: &Dataset<T>, prior: &MixturePrior<T>) -> Result<Vec<PosteriorSummary<T>>> {
    let k = prior.k();
    let log_w: Vec<T> = prior.weights().iter().map(|w| w.ln()).collect();
    let mut log_dens = vec![Vec::with_capacity(k); data.len()];
    let mut means = vec![Vec::with_capacity(k); data.len()];
    let mut covs = vec![Vec::with_capacity(k); data.len()];
    for_each_pair(data, prior, |i, kk, t| {
        let x = data.x(i);
        log_dens[i].push(log_w[kk] + log_mvn_zero_mean(x, &t.chol));
        means[i].push(&t.gain * x);
        covs[i].push(t.post_cov.clone());
    })?;
    Ok(log_dens
        .into_iter()
        .zip(means)
        .zip(covs)
        .map(|((l, m), c)| summarize(&l, m, c))
        .collect())
}

/// Stacks per-observation posterior means and lfsr into `N x R` matrices.
pub fn effect_tables<T: Scalar>(summaries: &[PosteriorSummary<T>]) -> (DMatrix<T>, DMatrix<T>) {
    let n = summaries.len();
    let r = summaries.first().map(|s| s.mean.len()).unwrap_or(0);
    let means = DMatrix::from_fn(n, r, |i, j| summaries[i].mean[j]);
    let lfsr = DMatrix::from_fn(n, r, |i, j| summaries[i].lfsr[j]);
    (means, lfsr)
}
