//! Domain types: observations with known noise, mixture-of-normals priors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, ensure_symmetric, min_eigenvalue};
use crate::scalar::Scalar;

/// One observed vector `x_i ~ N(mu_i, V_i)` with its known noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T: Scalar> {
    pub x: DVector<T>,
    pub v: DMatrix<T>,
}

impl<T: Scalar> Observation<T> {
    pub fn new(x: DVector<T>, v: DMatrix<T>) -> Result<Self> {
        check_noise(&v, x.len(), 0)?;
        if x.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidArgument("observation contains non-finite values".into()));
        }
        Ok(Self { x, v })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Noise covariances for a whole dataset. A shared matrix lets the E- and
/// M-steps factor each component once instead of once per sample.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseCov<T: Scalar> {
    Shared(DMatrix<T>),
    PerSample(Vec<DMatrix<T>>),
}

/// A collection of observations of common dimension `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar> {
    xs: Vec<DVector<T>>,
    noise: NoiseCov<T>,
    dim: usize,
}

fn check_noise<T: Scalar>(v: &DMatrix<T>, dim: usize, sample: usize) -> Result<()> {
    if v.nrows() != dim || v.ncols() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: v.nrows() });
    }
    ensure_symmetric(v)?;
    cholesky(v, || format!("noise covariance of sample {sample}"))?;
    Ok(())
}

impl<T: Scalar> Dataset<T> {
    pub fn new(xs: Vec<DVector<T>>, noise: NoiseCov<T>) -> Result<Self> {
        let dim = xs.first().map(|x| x.len()).unwrap_or(match &noise {
            NoiseCov::Shared(v) => v.nrows(),
            NoiseCov::PerSample(vs) => vs.first().map(|v| v.nrows()).unwrap_or(0),
        });
        for x in &xs {
            if x.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: x.len() });
            }
            if x.iter().any(|e| !e.is_finite()) {
                return Err(Error::InvalidArgument("observation contains non-finite values".into()));
            }
        }
        match &noise {
            NoiseCov::Shared(v) => check_noise(v, dim, 0)?,
            NoiseCov::PerSample(vs) => {
                if vs.len() != xs.len() {
                    return Err(Error::DimensionMismatch { expected: xs.len(), found: vs.len() });
                }
                for (i, v) in vs.iter().enumerate() {
                    check_noise(v, dim, i)?;
                }
            }
        }
        Ok(Self { xs, noise, dim })
    }

    /// All observations share `V_i = I`.
    pub fn with_identity_noise(xs: Vec<DVector<T>>) -> Result<Self> {
        let dim = xs.first().map(|x| x.len()).unwrap_or(0);
        Self::new(xs, NoiseCov::Shared(DMatrix::identity(dim, dim)))
    }

    pub fn from_observations(obs: Vec<Observation<T>>) -> Result<Self> {
        let (xs, vs): (Vec<_>, Vec<_>) = obs.into_iter().map(|o| (o.x, o.v)).unzip();
        Self::new(xs, NoiseCov::PerSample(vs))
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn xs(&self) -> &[DVector<T>] {
        &self.xs
    }

    pub fn x(&self, i: usize) -> &DVector<T> {
        &self.xs[i]
    }

    pub fn noise(&self) -> &NoiseCov<T> {
        &self.noise
    }

    pub fn v(&self, i: usize) -> &DMatrix<T> {
        match &self.noise {
            NoiseCov::Shared(v) => v,
            NoiseCov::PerSample(vs) => &vs[i],
        }
    }

    /// The noise covariances as a per-sample list (cloning the shared matrix).
    pub fn noise_list(&self) -> Vec<DMatrix<T>> {
        (0..self.len()).map(|i| self.v(i).clone()).collect()
    }

    pub fn observation(&self, i: usize) -> Observation<T> {
        Observation { x: self.xs[i].clone(), v: self.v(i).clone() }
    }
}

/// One prior component `pi_k N(0, U_k + diag(d_k))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorComponent<T: Scalar> {
    pub weight: T,
    pub u: DMatrix<T>,
    pub d: DVector<T>,
}

impl<T: Scalar> PriorComponent<T> {
    /// Component with no diagonal adjustment.
    pub fn new(weight: T, u: DMatrix<T>) -> Self {
        let r = u.nrows();
        Self { weight, u, d: DVector::zeros(r) }
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    /// `U_k + diag(d_k)`.
    pub fn covariance(&self) -> DMatrix<T> {
        let mut s = self.u.clone();
        for r in 0..self.d.len() {
            s[(r, r)] += self.d[r];
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixturePrior<T: Scalar> {
    components: Vec<PriorComponent<T>>,
    dim: usize,
}

impl<T: Scalar> MixturePrior<T> {
    /// Builds and validates a prior.
    pub fn new(components: Vec<PriorComponent<T>>) -> Result<Self> {
        let dim = components.first().map(|c| c.dim()).unwrap_or(0);
        validate_prior(Self { components, dim })
    }

    /// Single component with weight one.
    pub fn single(u: DMatrix<T>) -> Result<Self> {
        Self::new(vec![PriorComponent::new(T::one(), u)])
    }

    pub(crate) fn from_parts_unchecked(components: Vec<PriorComponent<T>>) -> Self {
        let dim = components.first().map(|c| c.dim()).unwrap_or(0);
        Self { components, dim }
    }

    pub fn components(&self) -> &[PriorComponent<T>] {
        &self.components
    }

    pub fn into_components(self) -> Vec<PriorComponent<T>> {
        self.components
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> Vec<T> {
        self.components.iter().map(|c| c.weight).collect()
    }
}

/// Checks every prior invariant and returns the prior unchanged.
pub fn validate_prior<T: Scalar>(prior: MixturePrior<T>) -> Result<MixturePrior<T>> {
    if prior.components.is_empty() {
        return Err(Error::WeightsInvalid { reason: "prior has no components".into() });
    }
    let dim = prior.dim;
    let mut total = T::zero();
    for (k, c) in prior.components.iter().enumerate() {
        if c.u.nrows() != dim || c.u.ncols() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: c.u.nrows() });
        }
        if c.d.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: c.d.len() });
        }
        if !(c.weight >= T::zero() && c.weight <= T::one()) {
            return Err(Error::WeightsInvalid { reason: format!("weight {} of component {k} outside [0, 1]", c.weight) });
        }
        total += c.weight;
        if c.d.iter().any(|&v| !(v >= T::zero())) {
            return Err(Error::InvalidArgument(format!("component {k} has a negative diagonal adjustment")));
        }
        for m in [&c.u, &c.covariance()] {
            let min = min_eigenvalue(m)?;
            if min.as_f64() < -T::PSD_TOL {
                return Err(Error::NotPsd { component: k, min_eigenvalue: min.as_f64() });
            }
        }
    }
    if (total - T::one()).abs().as_f64() > T::WEIGHT_TOL {
        return Err(Error::WeightsInvalid { reason: format!("weights sum to {total}") });
    }
    Ok(prior)
}
