use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point scalar used by the load-model math: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// Tolerance used when comparing accumulated timers against thresholds.
    #[inline]
    fn timer_tolerance(threshold: Self) -> Self {
        Self::epsilon().sqrt() * (Self::one() + threshold.abs())
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `true` once an accumulated timer has reached `threshold`, allowing for the
/// rounding drift of repeated `+= dt`.
#[inline]
pub(crate) fn reached<T: Real>(timer: T, threshold: T) -> bool {
    timer >= threshold - T::timer_tolerance(threshold)
}
