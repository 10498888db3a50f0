//! Multivariate empirical-Bayes shrinkage of normal means under mixture of
//! normal priors, with local false sign rates and a full-rank diagonal
//! adjustment of fitted prior covariances.
//!
//! The numerical core is generic over the scalar type (`f32` or `f64`); the
//! aliases below fix it to `f64`.

// `!(x > 0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjustment;
pub mod error;
pub mod fitting;
pub mod io;
pub mod linalg;
pub mod model;
pub mod posterior;
pub mod scalar;
pub mod simulation;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Observation64 = model::Observation<f64>;
pub type Dataset64 = model::Dataset<f64>;
pub type PriorComponent64 = model::PriorComponent<f64>;
pub type MixturePrior64 = model::MixturePrior<f64>;
pub type PosteriorSummary64 = posterior::PosteriorSummary<f64>;
pub type EmConfig64 = fitting::EmConfig<f64>;
pub type EmTrace64 = fitting::EmTrace<f64>;
pub type InfoMatrix64 = adjustment::InfoMatrix<f64>;
pub type AdjustMethod64 = adjustment::AdjustMethod<f64>;

pub type Dataset32 = model::Dataset<f32>;
pub type MixturePrior32 = model::MixturePrior<f32>;
