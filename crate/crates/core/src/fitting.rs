//! Maximum-likelihood fitting of mixture prior covariances by EM
//! (extreme deconvolution), optionally with per-component rank limits.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{eigendecompose, psd_project, symmetrize};
use crate::model::{Dataset, MixturePrior, NoiseCov, PriorComponent};
use crate::posterior::{component_terms, responsibilities};
use crate::scalar::Scalar;

/// Components whose effective size falls below this fraction of `N` abort the fit.
pub const DEGENERATE_FRACTION: f64 = 1e-6;
/// Largest log-likelihood decrease tolerated between EM iterations.
pub const MONOTONE_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum EmInit<T: Scalar> {
    /// `U_k = A A^T + 0.1 I` with standard normal `A`, rescaled to trace `R`.
    RandomFullRankPsd,
    UserSupplied(MixturePrior<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig<T: Scalar> {
    pub max_iters: usize,
    /// Stop once `|l_t - l_{t-1}| <= tol * |l_{t-1}|`. Zero runs all `max_iters` iterations.
    pub tol: f64,
    /// Target rank per component; `None` leaves covariances unconstrained.
    pub rank_constraints: Option<Vec<usize>>,
    pub seed: u64,
    pub init: EmInit<T>,
}

impl<T: Scalar> Default for EmConfig<T> {
    fn default() -> Self {
        Self { max_iters: 1000, tol: 1e-7, rank_constraints: None, seed: 1, init: EmInit::RandomFullRankPsd }
    }
}

impl<T: Scalar> EmConfig<T> {
    pub fn with_ranks(mut self, ranks: Vec<usize>) -> Self {
        self.rank_constraints = Some(ranks);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace<T: Scalar> {
    /// Marginal log-likelihood at the start of each iteration; the last entry
    /// belongs to the returned prior.
    pub loglik_per_iter: Vec<T>,
    /// `N x K` posterior component probabilities under the returned prior.
    pub responsibilities: DMatrix<T>,
    /// `n_k = sum_i gamma_ik`.
    pub effective_sizes: Vec<T>,
    pub converged: bool,
}

impl<T: Scalar> EmTrace<T> {
    pub fn iterations(&self) -> usize {
        self.loglik_per_iter.len()
    }

    pub fn final_loglik(&self) -> T {
        *self.loglik_per_iter.last().expect("non-empty trace")
    }

    /// Column `k` of the responsibilities.
    pub fn weights_for(&self, k: usize) -> Vec<T> {
        self.responsibilities.column(k).iter().copied().collect()
    }
}

fn random_full_rank<T: Scalar>(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<T> {
    let a = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    let mut u = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.1;
    let trace = u.trace();
    u *= dim as f64 / trace;
    u.map(T::lit)
}

fn initial_prior<T: Scalar>(dim: usize, k: usize, config: &EmConfig<T>) -> Result<MixturePrior<T>> {
    match &config.init {
        EmInit::UserSupplied(p) => {
            if p.k() != k || p.dim() != dim {
                return Err(Error::InvalidArgument(format!(
                    "initial prior has K={} R={}, expected K={k} R={dim}",
                    p.k(),
                    p.dim()
                )));
            }
            Ok(p.clone())
        }
        EmInit::RandomFullRankPsd => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let w = T::one() / T::from_usize(k).unwrap();
            let comps = (0..k).map(|_| PriorComponent::new(w, random_full_rank(&mut rng, dim))).collect();
            MixturePrior::new(comps)
        }
    }
}

/// Weighted posterior second moment `sum_i gamma_i (b_i b_i^T + B_i)`.
fn component_moment<T: Scalar>(data: &Dataset<T>, u: &DMatrix<T>, gamma: &[T]) -> Result<DMatrix<T>> {
    let r = data.dim();
    match data.noise() {
        NoiseCov::Shared(v) => {
            let t = component_terms(u, v, || "U + V in M-step".into())?;
            let mut scatter = DMatrix::zeros(r, r);
            let mut total = T::zero();
            for (x, &g) in data.xs().iter().zip(gamma) {
                scatter.ger(g, x, x, T::one());
                total += g;
            }
            let mut m = &t.gain * scatter * t.gain.transpose() + &t.post_cov * total;
            symmetrize(&mut m);
            Ok(m)
        }
        NoiseCov::PerSample(vs) => {
            let mut m = DMatrix::zeros(r, r);
            for (i, v) in vs.iter().enumerate() {
                let g = gamma[i];
                if g == T::zero() {
                    continue;
                }
                let t = component_terms(u, v, || format!("U + V_{i} in M-step"))?;
                let b: DVector<T> = &t.gain * data.x(i);
                m.ger(g, &b, &b, T::one());
                m += &t.post_cov * g;
            }
            symmetrize(&mut m);
            Ok(m)
        }
    }
}

fn check_ranks(ranks: &Option<Vec<usize>>, k: usize, dim: usize) -> Result<()> {
    if let Some(rs) = ranks {
        if rs.len() != k {
            return Err(Error::InvalidArgument(format!("{} rank targets for {k} components", rs.len())));
        }
        for &r in rs {
            if r == 0 || r > dim {
                return Err(Error::RankOutOfRange { rank: r, dim });
            }
        }
    }
    Ok(())
}

/// Covariance parametrization of one component during EM.
enum ComponentState<T: Scalar> {
    Full(DMatrix<T>),
    /// `U = L L^T` with `L` of shape `R x r`.
    Factor(DMatrix<T>),
}

impl<T: Scalar> ComponentState<T> {
    fn covariance(&self) -> DMatrix<T> {
        match self {
            Self::Full(u) => u.clone(),
            Self::Factor(l) => {
                let mut u = l * l.transpose();
                symmetrize(&mut u);
                u
            }
        }
    }
}

fn leading_factor<T: Scalar>(u: &DMatrix<T>, rank: usize) -> Result<DMatrix<T>> {
    let eig = eigendecompose(u)?;
    let mut l = DMatrix::zeros(u.nrows(), rank);
    for j in 0..rank {
        let lambda = eig.eigenvalues[j];
        let scale = if lambda > T::zero() { lambda.sqrt() } else { T::zero() };
        l.set_column(j, &(eig.eigenvectors.column(j) * scale));
    }
    Ok(l)
}

/// Inverse noise covariances, computed once per fit.
enum NoisePrecision<T: Scalar> {
    Shared(DMatrix<T>),
    PerSample(Vec<DMatrix<T>>),
}

impl<T: Scalar> NoisePrecision<T> {
    fn new(data: &Dataset<T>) -> Result<Self> {
        let inv = |v: &DMatrix<T>, i: usize| -> Result<DMatrix<T>> {
            let mut p = crate::linalg::cholesky(v, || format!("noise covariance {i}"))?.inverse();
            symmetrize(&mut p);
            Ok(p)
        };
        Ok(match data.noise() {
            NoiseCov::Shared(v) => Self::Shared(inv(v, 0)?),
            NoiseCov::PerSample(vs) => Self::PerSample(vs.iter().enumerate().map(|(i, v)| inv(v, i)).collect::<Result<_>>()?),
        })
    }
}

/// One EM update of the loading matrix `L` for `x_i = L z_i + e_i`,
/// `z_i ~ N(0, I)`, `e_i ~ N(0, V_i)`, with sample weights `gamma`.
fn factor_update<T: Scalar>(data: &Dataset<T>, prec: &NoisePrecision<T>, l: &DMatrix<T>, gamma: &[T]) -> Result<DMatrix<T>> {
    let (dim, rank) = l.shape();
    let eye = DMatrix::<T>::identity(rank, rank);
    let posterior = |p: &DMatrix<T>| -> Result<(DMatrix<T>, DMatrix<T>)> {
        // C = (I + L^T P L)^{-1}, G = C L^T P so that E[z | x] = G x
        let lt_p = l.transpose() * p;
        let mut c = crate::linalg::cholesky(&(&eye + &lt_p * l), || "I + L^T V^-1 L".into())?.inverse();
        symmetrize(&mut c);
        let g = &c * lt_p;
        Ok((c, g))
    };
    match prec {
        NoisePrecision::Shared(p) => {
            let (c, g) = posterior(p)?;
            let mut cross = DMatrix::zeros(dim, rank);
            let mut second = DMatrix::zeros(rank, rank);
            let mut total = T::zero();
            for (x, &w) in data.xs().iter().zip(gamma) {
                let m: DVector<T> = &g * x;
                cross.ger(w, x, &m, T::one());
                second.ger(w, &m, &m, T::one());
                total += w;
            }
            second += c * total;
            let chol = crate::linalg::cholesky(&second, || "factor second moment".into())?;
            // L = cross * second^{-1}
            Ok(chol.solve(&cross.transpose()).transpose())
        }
        NoisePrecision::PerSample(ps) => {
            // sum_i w_i (E_i kron P_i) vec(L) = vec(sum_i w_i P_i x_i m_i^T)
            let n = dim * rank;
            let mut lhs = DMatrix::zeros(n, n);
            let mut rhs = DMatrix::zeros(dim, rank);
            for (i, p) in ps.iter().enumerate() {
                let w = gamma[i];
                if w == T::zero() {
                    continue;
                }
                let (c, g) = posterior(p)?;
                let x = data.x(i);
                let m: DVector<T> = &g * x;
                let mut e = c;
                e.ger(T::one(), &m, &m, T::one());
                let px: DVector<T> = p * x;
                rhs.ger(w, &px, &m, T::one());
                for a in 0..rank {
                    for b in 0..rank {
                        let eab = w * e[(a, b)];
                        if eab == T::zero() {
                            continue;
                        }
                        let mut block = lhs.view_mut((a * dim, b * dim), (dim, dim));
                        block += p * eab;
                    }
                }
            }
            let chol = crate::linalg::cholesky(&lhs, || "factor normal equations".into())?;
            let sol = chol.solve(&DVector::from_column_slice(rhs.as_slice()));
            Ok(DMatrix::from_column_slice(dim, rank, sol.as_slice()))
        }
    }
}

/// Fits `K` zero-mean components (`d = 0`) by EM.
///
/// Components with a rank target below `R` are parametrized as `U = L L^T`
/// and updated with the factor-model EM step, so every iteration is a true
/// EM step and the log-likelihood is nondecreasing.
pub fn em_fit<T: Scalar>(data: &Dataset<T>, k: usize, config: &EmConfig<T>) -> Result<(MixturePrior<T>, EmTrace<T>)> {
    let n = data.len();
    let dim = data.dim();
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!("need 1 <= K <= N, got K={k}, N={n}")));
    }
    if config.max_iters == 0 || !(config.tol >= 0.0) {
        return Err(Error::InvalidArgument("max_iters must be >= 1 and tol >= 0".into()));
    }
    check_ranks(&config.rank_constraints, k, dim)?;
    let target = |kk: usize| config.rank_constraints.as_ref().map(|rs| rs[kk]).unwrap_or(dim);

    let init = initial_prior(dim, k, config)?;
    let mut weights = init.weights();
    let mut states = init
        .components()
        .iter()
        .enumerate()
        .map(|(kk, c)| {
            let r = target(kk);
            if r < dim {
                Ok(ComponentState::Factor(leading_factor(&c.u, r)?))
            } else {
                Ok(ComponentState::Full(c.u.clone()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let prec = if states.iter().any(|s| matches!(s, ComponentState::Factor(_))) {
        Some(NoisePrecision::new(data)?)
    } else {
        None
    };
    let build = |weights: &[T], states: &[ComponentState<T>]| {
        MixturePrior::from_parts_unchecked(
            weights.iter().zip(states).map(|(&w, s)| PriorComponent::new(w, s.covariance())).collect(),
        )
    };

    let mut prior = build(&weights, &states);
    let mut trace: Vec<T> = Vec::new();
    let mut converged = false;
    let n_t = T::from_usize(n).unwrap();
    let gamma = loop {
        let (gamma, ll) = responsibilities(data, &prior)?;
        let iteration = trace.len();
        if let Some(&prev) = trace.last() {
            let drop = (prev - ll).as_f64();
            if drop > MONOTONE_SLACK {
                return Err(Error::NoIncrease { iteration, drop });
            }
            if config.tol > 0.0 && (ll - prev).abs().as_f64() <= config.tol * prev.abs().as_f64() {
                converged = true;
            }
        }
        trace.push(ll);
        if converged || trace.len() >= config.max_iters {
            break gamma;
        }

        for (kk, state) in states.iter_mut().enumerate() {
            let g: Vec<T> = gamma.column(kk).iter().copied().collect();
            let nk = g.iter().fold(T::zero(), |a, &b| a + b);
            if nk.as_f64() < DEGENERATE_FRACTION * n as f64 {
                return Err(Error::DegenerateComponent { component: kk, effective_size: nk.as_f64() });
            }
            weights[kk] = nk / n_t;
            *state = match state {
                ComponentState::Full(u) => {
                    let moment = component_moment(data, u, &g)? / nk;
                    ComponentState::Full(psd_project(&moment)?)
                }
                ComponentState::Factor(l) => {
                    ComponentState::Factor(factor_update(data, prec.as_ref().expect("precision cached"), l, &g)?)
                }
            };
        }
        let total = weights.iter().fold(T::zero(), |a, &b| a + b);
        for w in &mut weights {
            *w /= total;
        }
        prior = build(&weights, &states);
    };

    let effective_sizes = (0..k).map(|kk| gamma.column(kk).iter().fold(T::zero(), |a, &b| a + b)).collect();
    log::debug!("EM finished after {} iterations (converged: {converged})", trace.len());
    Ok((prior, EmTrace { loglik_per_iter: trace, responsibilities: gamma, effective_sizes, converged }))
}

/// [`em_fit`] with per-component rank targets; each fitted `U_k` has rank at most its target.
pub fn em_fit_rank_constrained<T: Scalar>(
    data: &Dataset<T>,
    k: usize,
    config: &EmConfig<T>,
) -> Result<(MixturePrior<T>, EmTrace<T>)> {
    if config.rank_constraints.is_none() {
        return Err(Error::InvalidArgument("rank constraints required".into()));
    }
    em_fit(data, k, config)
}

/// Closed-form MLE of `sigma^2` for `x ~ N(0, u u^T + (1 + sigma^2) I)` from the
/// sample-covariance eigenvalues: `max(mean(lambda_2..lambda_R) - 1, 0)`.
pub fn sigma2_mle_isotropic<T: Scalar>(sample_eigenvalues: &[T]) -> Result<T> {
    let r = sample_eigenvalues.len();
    if r < 2 {
        return Err(Error::DimensionTooSmall { dim: r, min: 2 });
    }
    let mut sorted = sample_eigenvalues.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let tail = sorted[1..].iter().fold(T::zero(), |a, &b| a + b) / T::from_usize(r - 1).unwrap();
    let s = tail - T::one();
    Ok(if s > T::zero() { s } else { T::zero() })
}

/// `(1/N) sum_i x_i x_i^T`.
pub fn sample_second_moment<T: Scalar>(data: &Dataset<T>) -> DMatrix<T> {
    let r = data.dim();
    let mut s = DMatrix::zeros(r, r);
    for x in data.xs() {
        s.ger(T::one(), x, x, T::one());
    }
    s / T::from_usize(data.len().max(1)).unwrap()
}
