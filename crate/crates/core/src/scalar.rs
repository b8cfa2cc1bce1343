//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, NumAssign};

/// Real floating-point scalar. Implemented for `f32` and `f64`.
pub trait Real:
    Float + FloatConst + NumAssign + Sum + Default + Debug + Display + LowerExp + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + NumAssign
        + Sum
        + Default
        + Debug
        + Display
        + LowerExp
        + Send
        + Sync
        + 'static
{
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from(x).expect("literal representable in scalar type")
}

/// Converts a count into `T`.
#[inline]
pub fn from_usize<T: Real>(n: usize) -> T {
    T::from(n).expect("count representable in scalar type")
}

/// Converts a scalar to `f64` for reporting.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// `|d|^p` with fast paths for the common exponents.
#[inline]
pub fn pow_abs<T: Real>(d: T, p: T) -> T {
    let a = d.abs();
    if p == T::one() {
        a
    } else if p == lit(2.0) {
        a * a
    } else if a == T::zero() {
        T::zero()
    } else {
        a.powf(p)
    }
}

/// Euclidean norm of the active components.
#[inline]
pub fn norm<T: Real>(v: &[T]) -> T {
    match v.len() {
        1 => v[0].abs(),
        _ => v.iter().fold(T::zero(), |acc, &c| acc + c * c).sqrt(),
    }
}

/// Surface measure of the unit sphere `S^{N-1}` for `N` in {1, 2}.
pub fn sphere_measure<T: Real>(dim: usize) -> T {
    match dim {
        1 => lit(2.0),
        _ => T::PI() + T::PI(),
    }
}

/// Volume of the unit ball in `R^N` for `N` in {1, 2}.
pub fn unit_ball_volume<T: Real>(dim: usize) -> T {
    match dim {
        1 => lit(2.0),
        _ => T::PI(),
    }
}
