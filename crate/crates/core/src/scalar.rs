//! Scalar abstraction shared by the numeric core.
//!
//! Every numeric routine (forward passes, abstract transformers,
//! back-substitution) is written against [`Scalar`], so the same code runs in
//! `f64` (the default used by the CLI and the test suites) and in `f32`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Absolute outward slack applied when concretizing bounds.
    fn default_abs_slack() -> Self;

    /// Converts an `f64` literal. Panics only on NaN-producing conversions,
    /// which cannot happen for the finite literals used in this crate.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    #[inline]
    fn of_int(v: i64) -> Self {
        Self::from_i64(v).expect("integer fits scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Round half to even.
    fn round_half_even(self) -> Self {
        let r = self.round();
        let half = Self::of(0.5);
        if (self - self.trunc()).abs() == half {
            let two = Self::of(2.0);
            if (r / two).fract() != Self::zero() {
                return r - self.signum();
            }
        }
        r
    }
}

impl Scalar for f64 {
    fn default_abs_slack() -> Self {
        1e-9
    }
}

impl Scalar for f32 {
    fn default_abs_slack() -> Self {
        // 1e-9 is below f32 resolution for the magnitudes involved.
        1e-4
    }
}
