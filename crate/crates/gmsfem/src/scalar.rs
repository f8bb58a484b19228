//! Scalar abstraction: every kernel is generic over a real field type.

use nalgebra as na;
use num_traits as nt;

/// Floating-point scalar usable throughout the solver stack.
///
/// Combines the nalgebra real-field operations (factorizations, eigensolves)
/// with the num-traits conversions used for tolerances and RNG output.
pub trait Real:
    na::RealField + nt::FromPrimitive + nt::ToPrimitive + Copy + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: na::RealField + nt::FromPrimitive + nt::ToPrimitive + Copy + Send + Sync + 'static
{
}

/// Converts an `f64` constant (tolerance, literal, RNG sample) into `T`.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant representable in scalar type")
}

/// Lossy view of a scalar as `f64`, for reporting and formatting.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("scalar convertible to f64")
}
