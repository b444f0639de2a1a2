//! Scalar abstraction for the numeric core.
//!
//! The per-cell filter, the terrain-attribute math and the gain functions are
//! written against [`Real`] so the same code instantiates at `f32` or `f64`.
//! The simulator pipeline always runs in `f64`; the crate root exports
//! concrete aliases for the types it uses.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, NumCast};

/// Floating-point scalar the numeric core is generic over.
pub trait Real:
    Float + FromPrimitive + NumCast + NumAssign + Sum + Copy + Debug + Display + 'static
{
    /// Shorthand for pulling an `f64` literal into the scalar type.
    ///
    /// Intended for formula constants; panics only if the scalar type cannot
    /// represent ordinary finite constants, which no implementor does.
    fn c(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("finite constant must be representable")
    }

    /// Clamps `self` into `[lo, hi]`.
    fn clamp_to(self, lo: Self, hi: Self) -> Self {
        if self < lo {
            lo
        } else if self > hi {
            hi
        } else {
            self
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    fn generic_sum<R: Real>() -> R {
        [R::c(0.25), R::c(0.5), R::c(0.25)].into_iter().sum()
    }

    #[test]
    fn constants_round_trip_in_both_widths() {
        assert_eq!(f64::c(0.25), 0.25);
        assert_eq!(f32::c(0.25), 0.25f32);
        assert_eq!(generic_sum::<f64>(), 1.0);
        assert_eq!(generic_sum::<f32>(), 1.0f32);
    }

    #[test]
    fn clamp_to_behaves_on_boundaries() {
        assert_eq!(2.0f64.clamp_to(0.0, 1.0), 1.0);
        assert_eq!((-0.5f64).clamp_to(0.0, 1.0), 0.0);
        assert_eq!(0.5f64.clamp_to(0.0, 1.0), 0.5);
    }
}
