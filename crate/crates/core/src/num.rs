//! Scalar abstraction for the whole crate.
//!
//! Every numeric kernel is generic over [`Real`] so the same code runs in
//! f32 and f64; the training pipeline instantiates f64 (see the crate-root
//! aliases). The trait is deliberately small: `num_traits::Float` carries
//! the math, the rest is plumbing needed by kernels and reporting.

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

pub trait Real:
    Float
    + NumAssignOps
    + FromPrimitive
    + ToPrimitive
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Convert an f64 literal; panics only on NaN-free literals that the
    /// target type cannot represent, which never happens for f32/f64.
    fn from_f64c(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 literal must convert")
    }

    fn to_f64c(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar must widen to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
