//! Full-rank diagonal adjustment of fitted prior covariances.
//!
//! The diagonal of each `U_k` is raised to the upper end of a confidence
//! interval, either from the Fisher information of the covariance parameters
//! or from cheap closed-form variance lower bounds. Increments are stored in
//! the component's `d`, so the off-diagonal structure of `U_k` is untouched.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, eigendecompose, symmetrize};
use crate::model::{Dataset, MixturePrior, NoiseCov, PriorComponent};
use crate::scalar::{norm_quantile, Scalar};

/// Default two-sided level of the Wald interval.
pub const DEFAULT_ALPHA: f64 = 0.05;
/// Default number of lower-bound standard deviations added to the diagonal.
pub const DEFAULT_MULTIPLIER: f64 = 2.0;

/// A covariance parameter: `U[r][j]` with `r <= j`, or the diagonal entry `D[r]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    U(usize, usize),
    D(usize),
}

/// Flat ordering of the parameters: unique entries of `U` row-wise
/// (`u11, u12, ..., u1R, u22, ..., uRR`), then `diag(D)` if included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamIndex {
    dim: usize,
    with_d: bool,
}

impl ParamIndex {
    pub fn new(dim: usize, with_d: bool) -> Self {
        Self { dim, with_d }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn includes_d(&self) -> bool {
        self.with_d
    }

    pub fn n_u(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    pub fn len(&self) -> usize {
        self.n_u() + if self.with_d { self.dim } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }

    /// Position of `U[r][j]` (either order).
    pub fn position_u(&self, r: usize, j: usize) -> usize {
        let (r, j) = if r <= j { (r, j) } else { (j, r) };
        // rows 0..r contribute R, R-1, ..., R-r+1 entries
        r * self.dim - r * (r.saturating_sub(1)) / 2 + (j - r)
    }

    pub fn position_d(&self, r: usize) -> Option<usize> {
        self.with_d.then(|| self.n_u() + r)
    }

    pub fn param(&self, pos: usize) -> Param {
        if pos >= self.n_u() {
            return Param::D(pos - self.n_u());
        }
        let mut rest = pos;
        for r in 0..self.dim {
            let row = self.dim - r;
            if rest < row {
                return Param::U(r, r + rest);
            }
            rest -= row;
        }
        unreachable!("position {pos} out of range")
    }

    pub fn params(&self) -> impl Iterator<Item = Param> + '_ {
        (0..self.len()).map(|p| self.param(p))
    }

    /// Positions of `u11, ..., uRR`.
    pub fn diag_u_positions(&self) -> Vec<usize> {
        (0..self.dim).map(|r| self.position_u(r, r)).collect()
    }
}

/// Fisher information of `(U, D)` partitioned into the `U x U` block `a`, the
/// `U x D` block `b` and the `D x D` block `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrix<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: Option<DMatrix<T>>,
    pub c: Option<DMatrix<T>>,
    pub index: ParamIndex,
    pub weights: Option<Vec<T>>,
}

impl<T: Scalar> InfoMatrix<T> {
    /// The assembled square matrix in [`ParamIndex`] order.
    pub fn full(&self) -> DMatrix<T> {
        let (nu, n) = (self.index.n_u(), self.index.len());
        let mut m = DMatrix::zeros(n, n);
        m.view_mut((0, 0), (nu, nu)).copy_from(&self.a);
        if let (Some(b), Some(c)) = (&self.b, &self.c) {
            m.view_mut((0, nu), b.shape()).copy_from(b);
            m.view_mut((nu, 0), (b.ncols(), b.nrows())).copy_from(&b.transpose());
            m.view_mut((nu, nu), c.shape()).copy_from(c);
        }
        m
    }
}

fn entry_from<T: Scalar>(s: &DMatrix<T>, pj: Param, pk: Param) -> T {
    let half = T::lit(0.5);
    let diag = |p: Param| match p {
        Param::D(r) => Some(r),
        Param::U(r, j) if r == j => Some(r),
        Param::U(..) => None,
    };
    match (pj, pk, diag(pj), diag(pk)) {
        (_, _, Some(r), Some(l)) => half * s[(r, l)] * s[(r, l)],
        (_, Param::U(l, k), Some(r), None) | (Param::U(l, k), _, None, Some(r)) => s[(r, l)] * s[(r, k)],
        (Param::U(r, j), Param::U(l, k), None, None) => s[(l, j)] * s[(r, k)] + s[(r, l)] * s[(j, k)],
        _ => unreachable!("off-diagonal parameters are always U entries"),
    }
}

/// One information entry `1/2 sum_i tr(T_i^-1 dT_j T_i^-1 dT_k)` from the
/// precomputed inverses `T_i^{-1}`.
pub fn info_entry<T: Scalar>(t_inverses: &[DMatrix<T>], index: &ParamIndex, j: usize, k: usize) -> T {
    let (pj, pk) = (index.param(j), index.param(k));
    t_inverses.iter().fold(T::zero(), |acc, s| acc + entry_from(s, pj, pk))
}

fn accumulate<T: Scalar>(terms: &[(T, DMatrix<T>)], index: ParamIndex, weights: Option<Vec<T>>) -> InfoMatrix<T> {
    let n = index.len();
    let params: Vec<Param> = index.params().collect();
    let mut full = DMatrix::zeros(n, n);
    for (w, s) in terms {
        if *w == T::zero() {
            continue;
        }
        for j in 0..n {
            for k in j..n {
                full[(j, k)] += *w * entry_from(s, params[j], params[k]);
            }
        }
    }
    for j in 0..n {
        for k in 0..j {
            full[(j, k)] = full[(k, j)];
        }
    }
    let nu = index.n_u();
    let (b, c) = if index.includes_d() {
        (Some(full.view((0, nu), (nu, n - nu)).into_owned()), Some(full.view((nu, nu), (n - nu, n - nu)).into_owned()))
    } else {
        (None, None)
    };
    InfoMatrix { a: full.view((0, 0), (nu, nu)).into_owned(), b, c, index, weights }
}

fn check_weights<T: Scalar>(weights: Option<&[T]>, n: usize) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: w.len() });
        }
        if w.iter().any(|&x| !(x >= T::zero() && x <= T::one() + T::lit(T::WEIGHT_TOL))) {
            return Err(Error::WeightsInvalid { reason: "sample weights must lie in [0, 1]".into() });
        }
    }
    Ok(())
}

fn base_covariance<T: Scalar>(u: &DMatrix<T>, d: Option<&DVector<T>>) -> Result<DMatrix<T>> {
    let mut s = u.clone();
    if let Some(d) = d {
        if d.len() != u.nrows() {
            return Err(Error::DimensionMismatch { expected: u.nrows(), found: d.len() });
        }
        for r in 0..d.len() {
            s[(r, r)] += d[r];
        }
    }
    Ok(s)
}

fn t_inverse<T: Scalar>(s: &DMatrix<T>, v: &DMatrix<T>, sample: usize) -> Result<DMatrix<T>> {
    if v.shape() != s.shape() {
        return Err(Error::DimensionMismatch { expected: s.nrows(), found: v.nrows() });
    }
    let chol = cholesky(&(s + v), || format!("T for sample {sample}")).map_err(|_| Error::SingularT { sample })?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Fisher information of the covariance parameters for `x_i ~ N(0, U + D + V_i)`.
///
/// With `d = None` only the `U` block is built (and `T_i = U + V_i`). Sample
/// `i` contributes with weight `weights[i]` (1 when absent), which gives the
/// expected-complete-data information of one mixture component.
pub fn assemble_info<T: Scalar>(
    u: &DMatrix<T>,
    d: Option<&DVector<T>>,
    data_covs: &[DMatrix<T>],
    weights: Option<&[T]>,
) -> Result<InfoMatrix<T>> {
    check_weights(weights, data_covs.len())?;
    let s = base_covariance(u, d)?;
    let terms = data_covs
        .iter()
        .enumerate()
        .map(|(i, v)| Ok((weights.map_or(T::one(), |w| w[i]), t_inverse(&s, v, i)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(accumulate(&terms, ParamIndex::new(u.nrows(), d.is_some()), weights.map(<[T]>::to_vec)))
}

/// [`assemble_info`] over a dataset's noise covariances; a shared noise matrix
/// is factored once.
pub fn assemble_info_for<T: Scalar>(
    u: &DMatrix<T>,
    d: Option<&DVector<T>>,
    data: &Dataset<T>,
    weights: Option<&[T]>,
) -> Result<InfoMatrix<T>> {
    match data.noise() {
        NoiseCov::PerSample(vs) => assemble_info(u, d, vs, weights),
        NoiseCov::Shared(v) => {
            check_weights(weights, data.len())?;
            let total = weights.map_or(T::from_usize(data.len()).unwrap(), |w| w.iter().fold(T::zero(), |a, &b| a + b));
            let s = t_inverse(&base_covariance(u, d)?, v, 0)?;
            Ok(accumulate(&[(total, s)], ParamIndex::new(u.nrows(), d.is_some()), weights.map(<[T]>::to_vec)))
        }
    }
}

/// Standard errors of `u11, ..., uRR` from the inverse information.
pub fn se_diag_u<T: Scalar>(info: &InfoMatrix<T>) -> Result<DVector<T>> {
    let full = info.full();
    let singular = || Error::SingularInformation {
        context: if info.index.includes_d() {
            "information of (U, D) is singular; diag(U) and D are not separately identifiable".into()
        } else {
            "information of U is singular".into()
        },
    };
    // Cholesky happily factors numerically singular matrices, so check the spectrum first.
    let eig = eigendecompose(&full)?;
    let n = full.nrows();
    let (top, bottom) = (eig.eigenvalues[0], eig.eigenvalues[n - 1]);
    if !(top > T::zero()) || bottom <= top * T::default_epsilon() * T::lit(1e3 * n as f64) {
        return Err(singular());
    }
    let chol = cholesky(&full, || "information".into()).map_err(|_| singular())?;
    let positions = info.index.diag_u_positions();
    Ok(DVector::from_iterator(
        positions.len(),
        positions.iter().map(|&p| {
            let mut e = DVector::zeros(n);
            e[p] = T::one();
            chol.solve(&e)[p].sqrt()
        }),
    ))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// `u + z_{1 - alpha/2} se`.
pub fn wald_upper_bound<T: Scalar>(u_rr_mle: T, se: T, alpha: f64) -> Result<T> {
    check_alpha(alpha)?;
    if se < T::zero() {
        return Err(Error::InvalidArgument("standard error must be nonnegative".into()));
    }
    Ok(u_rr_mle + T::lit(norm_quantile(1.0 - alpha / 2.0)) * se)
}

/// Which variance the lower bound refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceTarget {
    /// A single `sigma^2` with `D = sigma^2 I`; the result has length 1.
    DiagDIsotropic,
    /// Each `sigma_r^2` of a free diagonal `D`.
    DiagD,
    /// Each `u_rr`.
    DiagU,
}

impl FromStr for VarianceTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diag_d_isotropic" | "isotropic" => Ok(Self::DiagDIsotropic),
            "diag_d" => Ok(Self::DiagD),
            "diag_u" => Ok(Self::DiagU),
            other => Err(Error::UnknownTarget(other.to_string())),
        }
    }
}

/// Closed-form lower bounds on the sampling variance of the MLE.
///
/// `DiagU` depends only on the noise: `2 / sum_i w_i ((V_i^-1)_rr)^2`.
/// The `D` targets use `S_i = (U + V_i)^{-1}`: `2 / sum_i w_i (S_i,rr)^2` per
/// condition, or `2 / sum_i w_i tr(S_i S_i)` for the isotropic case.
pub fn variance_lower_bound<T: Scalar>(
    u: &DMatrix<T>,
    data_covs: &[DMatrix<T>],
    weights: Option<&[T]>,
    target: VarianceTarget,
) -> Result<DVector<T>> {
    check_weights(weights, data_covs.len())?;
    let dim = u.nrows();
    let base = match target {
        VarianceTarget::DiagU => DMatrix::zeros(dim, dim),
        _ => u.clone(),
    };
    let width = if target == VarianceTarget::DiagDIsotropic { 1 } else { dim };
    let mut sums = DVector::<T>::zeros(width);
    for (i, v) in data_covs.iter().enumerate() {
        let w = weights.map_or(T::one(), |w| w[i]);
        if w == T::zero() {
            continue;
        }
        let s = t_inverse(&base, v, i)?;
        match target {
            VarianceTarget::DiagDIsotropic => sums[0] += w * s.component_mul(&s).sum(),
            _ => {
                for r in 0..dim {
                    sums[r] += w * s[(r, r)] * s[(r, r)];
                }
            }
        }
    }
    Ok(sums.map(|x| T::lit(2.0) / x))
}

fn diag_u_lower_bound_for<T: Scalar>(data: &Dataset<T>, weights: &[T]) -> Result<DVector<T>> {
    match data.noise() {
        NoiseCov::PerSample(vs) => variance_lower_bound(&DMatrix::zeros(data.dim(), data.dim()), vs, Some(weights), VarianceTarget::DiagU),
        NoiseCov::Shared(v) => {
            let total = weights.iter().fold(T::zero(), |a, &b| a + b);
            let unit = variance_lower_bound(&DMatrix::zeros(data.dim(), data.dim()), std::slice::from_ref(v), None, VarianceTarget::DiagU)?;
            Ok(unit / total)
        }
    }
}

/// `2 / sqrt(n)`: the variance scale at which the log-likelihood drops by two units.
pub fn rule_of_two_bound<T: Scalar>(n_effective: T) -> Result<T> {
    if !(n_effective > T::zero()) {
        return Err(Error::InvalidArgument("effective sample size must be positive".into()));
    }
    Ok(T::lit(2.0) / n_effective.sqrt())
}

/// How to make the prior covariances full rank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdjustMethod<T: Scalar> {
    /// Add `c I` to every component.
    Constant(T),
    /// Raise `diag(U_k)` to the Wald upper bound from the weighted `U`-block information.
    InfoMat { alpha: f64 },
    /// Add `multiplier * sqrt(2 / sum_i gamma_ik ((V_i^-1)_rr)^2)` to `diag(U_k)`.
    LowerBound { multiplier: T },
}

impl<T: Scalar> AdjustMethod<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Constant(_) => "constant",
            Self::InfoMat { .. } => "info-mat",
            Self::LowerBound { .. } => "lower-bound",
        }
    }
}

/// Diagonal increments for every component, one vector per component.
pub fn diagonal_increments<T: Scalar>(
    prior: &MixturePrior<T>,
    responsibilities: &DMatrix<T>,
    data: &Dataset<T>,
    method: AdjustMethod<T>,
) -> Result<Vec<DVector<T>>> {
    let dim = prior.dim();
    if data.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: data.dim() });
    }
    if let AdjustMethod::Constant(c) = method {
        if !(c > T::zero()) {
            return Err(Error::InvalidArgument("constant must be positive".into()));
        }
        return Ok(vec![DVector::from_element(dim, c); prior.k()]);
    }
    if responsibilities.shape() != (data.len(), prior.k()) {
        return Err(Error::DimensionMismatch { expected: data.len(), found: responsibilities.nrows() });
    }
    prior
        .components()
        .iter()
        .enumerate()
        .map(|(k, comp)| {
            let gamma: Vec<T> = responsibilities.column(k).iter().copied().collect();
            match method {
                AdjustMethod::Constant(_) => unreachable!(),
                AdjustMethod::InfoMat { alpha } => {
                    check_alpha(alpha)?;
                    let info = assemble_info_for(&comp.u, None, data, Some(&gamma))?;
                    let se = se_diag_u(&info).map_err(|e| match e {
                        Error::SingularInformation { context } => {
                            Error::SingularInformation { context: format!("component {k}: {context}") }
                        }
                        other => other,
                    })?;
                    let z = T::lit(norm_quantile(1.0 - alpha / 2.0));
                    Ok(se * z)
                }
                AdjustMethod::LowerBound { multiplier } => {
                    if !(multiplier > T::zero()) {
                        return Err(Error::InvalidArgument("multiplier must be positive".into()));
                    }
                    Ok(diag_u_lower_bound_for(data, &gamma)?.map(|v| multiplier * v.sqrt()))
                }
            }
        })
        .collect()
}

/// Adds `c` to every diagonal entry of every component (through `d`).
pub fn constant_shift<T: Scalar>(prior: &MixturePrior<T>, c: T) -> Result<MixturePrior<T>> {
    if !(c > T::zero()) {
        return Err(Error::InvalidArgument("constant must be positive".into()));
    }
    MixturePrior::new(
        prior
            .components()
            .iter()
            .map(|k| PriorComponent { weight: k.weight, u: k.u.clone(), d: k.d.map(|v| v + c) })
            .collect(),
    )
}

/// Applies `method` to every component. Increments are added to `d_k`, so the
/// effective covariance `U_k + diag(d_k)` keeps the off-diagonals of `U_k` and
/// has smallest eigenvalue at least the smallest increment.
pub fn adjust_prior<T: Scalar>(
    prior: &MixturePrior<T>,
    responsibilities: &DMatrix<T>,
    data: &Dataset<T>,
    method: AdjustMethod<T>,
) -> Result<MixturePrior<T>> {
    let increments = diagonal_increments(prior, responsibilities, data, method)?;
    let components = prior
        .components()
        .iter()
        .zip(increments)
        .map(|(c, inc)| PriorComponent { weight: c.weight, u: c.u.clone(), d: &c.d + inc })
        .collect();
    MixturePrior::new(components)
}
