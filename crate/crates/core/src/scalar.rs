//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point type usable by the estimation code (`f32` or `f64`).
///
/// Elementary functions come from [`RealField`]; conversions from literals and
/// back to `f64` come from num-traits.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant into this type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Lossless-or-rounding conversion to `f64`.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `log(exp(a) + exp(b))` without overflow. Either argument may be `-inf`.
#[inline]
pub fn log_add_exp<T: Scalar>(a: T, b: T) -> T {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if !hi.is_finite() {
        // both -inf, or an +inf/NaN that should propagate
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Log-sum-exp over a slice; `-inf` for an empty slice or all `-inf` entries.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let neg_inf = -T::one() / T::zero();
    let mut m = neg_inf;
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    if !m.is_finite() {
        return m;
    }
    let mut s = T::zero();
    for &x in xs {
        s += (x - m).exp();
    }
    m + s.ln()
}

/// `-inf` in the scalar type.
#[inline]
pub fn neg_infinity<T: Scalar>() -> T {
    -T::one() / T::zero()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_exp_matches_direct_sum() {
        let v: f64 = log_add_exp(0.3_f64.ln(), 0.2_f64.ln());
        assert!((v - 0.5_f64.ln()).abs() < 1e-15);
        let inf = neg_infinity::<f64>();
        assert_eq!(log_add_exp(inf, 1.5), 1.5);
        assert_eq!(log_add_exp(inf, inf), inf);
        // no overflow for large arguments
        assert!((log_add_exp(1000.0_f64, 1000.0) - (1000.0 + 2.0_f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_handles_underflowing_terms() {
        let xs = [-2000.0_f64, -2001.0, -2002.0];
        let direct = -2000.0 + (1.0 + (-1.0_f64).exp() + (-2.0_f64).exp()).ln();
        assert!((log_sum_exp(&xs) - direct).abs() < 1e-12);
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn works_for_f32() {
        let v: f32 = log_sum_exp(&[0.0_f32, 0.0]);
        assert!((v - 2.0_f32.ln()).abs() < 1e-6);
    }
}
