//! Scalar abstraction for the numeric core.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the numeric core is generic over.
///
/// Implemented for `f32` and `f64`. The invariance and gradient-oracle
/// tolerances quoted throughout the crate assume `f64`.
pub trait Scalar:
    Float
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
    /// Converts an `f64` constant, panicking on the (unreachable for
    /// f32/f64) failure case.
    fn cast(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable in scalar type")
    }

    /// Lossy view of the value as `f64`, for reporting and serialization.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
