//! Scalar abstractions shared by the detector and the chain analytics.
//!
//! [`Scalar`] is the minimum needed by the exact hitting-time recurrence:
//! field arithmetic and ordering. It is implemented for `f32`, `f64` and
//! [`BigRational`], so the exact solver can run in rational arithmetic.
//! [`Real`] adds the transcendental functions the closed forms need.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

pub trait Scalar: Clone + Debug + PartialOrd + Num + Send + Sync {
    /// Converts a finite `f64`; returns `None` for NaN or infinities.
    fn try_from_f64(x: f64) -> Option<Self>;

    fn from_count(n: u64) -> Self;

    /// Nearest `f64`; may saturate to infinity for huge rationals.
    fn approx_f64(&self) -> f64;
}

macro_rules! impl_float_scalar {
    ($($t:ty),*) => {$(
        impl Scalar for $t {
            fn try_from_f64(x: f64) -> Option<Self> {
                x.is_finite().then_some(x as $t)
            }

            fn from_count(n: u64) -> Self {
                n as $t
            }

            fn approx_f64(&self) -> f64 {
                *self as f64
            }
        }
    )*};
}

impl_float_scalar!(f32, f64);

impl Scalar for BigRational {
    fn try_from_f64(x: f64) -> Option<Self> {
        BigRational::from_float(x)
    }

    fn from_count(n: u64) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }

    fn approx_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or_else(|| {
            if self > &BigRational::from_integer(BigInt::from(0)) {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            }
        })
    }
}

/// Floating-point scalar: `f32` or `f64`.
pub trait Real: Scalar + Float + FromPrimitive + Copy {}

impl<T> Real for T where T: Scalar + Float + FromPrimitive + Copy {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_round_trips_dyadic_values() {
        let r = <BigRational as Scalar>::try_from_f64(0.375).unwrap();
        assert_eq!(Scalar::approx_f64(&r), 0.375);
        assert!(<BigRational as Scalar>::try_from_f64(f64::NAN).is_none());
    }

    #[test]
    fn float_rejects_non_finite() {
        assert!(<f64 as Scalar>::try_from_f64(f64::INFINITY).is_none());
        assert_eq!(<f32 as Scalar>::try_from_f64(0.5), Some(0.5f32));
    }
}
