//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! The linear algebra is written against nalgebra's [`RealField`]; conversion
//! to and from `f64` literals goes through num-traits. Tolerances scale with the
//! precision of the concrete type.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use statrs::distribution::{ContinuousCDF, Normal};

pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + LowerExp + Debug + Send + Sync + 'static
{
    /// Max absolute off-symmetry accepted for "symmetric" inputs.
    const SYMMETRY_TOL: f64;
    /// Smallest eigenvalue still treated as PSD (values in `[-PSD_TOL, 0)` clamp to 0).
    const PSD_TOL: f64;
    /// Allowed deviation of mixture weights from summing to one.
    const WEIGHT_TOL: f64;

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Scalar for f64 {
    const SYMMETRY_TOL: f64 = 1e-10;
    const PSD_TOL: f64 = 1e-8;
    const WEIGHT_TOL: f64 = 1e-10;
}

impl Scalar for f32 {
    const SYMMETRY_TOL: f64 = 1e-4;
    const PSD_TOL: f64 = 1e-4;
    const WEIGHT_TOL: f64 = 1e-5;
}

/// Standard normal CDF. Evaluated in `f64` regardless of `T`.
pub fn norm_cdf<T: Scalar>(z: T) -> T {
    T::lit(0.5 * libm::erfc(-z.as_f64() / std::f64::consts::SQRT_2))
}

/// Standard normal quantile function.
pub fn norm_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// `log(sum(exp(v)))` without overflow.
pub fn log_sum_exp<T: Scalar>(values: &[T]) -> T {
    let Some(&first) = values.first() else {
        return T::lit(f64::NEG_INFINITY);
    };
    let max = values
        .iter()
        .copied()
        .fold(first, |a, b| if b > a { b } else { a });
    if !max.is_finite() {
        return max;
    }
    let sum = values.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
    max + sum.ln()
}
