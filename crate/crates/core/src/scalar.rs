//! Scalar abstractions shared by the numeric modules.
//!
//! Probability tables are generic over [`Real`] (`f32` or `f64`); exact
//! bound arithmetic is generic over [`Field`], which also covers
//! `BigRational`.

use std::fmt::Debug;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Floating-point scalar for probability tables.
pub trait Real: Float + FromPrimitive + Debug + Default + Send + Sync + 'static {
    /// Normalisation slack for a table of `len` cells.
    fn norm_tolerance(len: usize) -> Self {
        let eps = Self::epsilon() * Self::from_usize(len.max(1) * 8).unwrap();
        eps.max(Self::from_f64(1e-12).unwrap())
    }

    fn lit(x: f64) -> Self {
        Self::from_f64(x).unwrap()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// A field that exact counts can be embedded into.
pub trait Field: Num + Clone + Debug {
    fn from_biguint(x: &BigUint) -> Self;
    fn to_f64_lossy(&self) -> f64;
}

impl Field for f64 {
    fn from_biguint(x: &BigUint) -> Self {
        x.to_f64().unwrap_or(f64::INFINITY)
    }
    fn to_f64_lossy(&self) -> f64 {
        *self
    }
}

impl Field for f32 {
    fn from_biguint(x: &BigUint) -> Self {
        x.to_f32().unwrap_or(f32::INFINITY)
    }
    fn to_f64_lossy(&self) -> f64 {
        *self as f64
    }
}

impl Field for BigRational {
    fn from_biguint(x: &BigUint) -> Self {
        BigRational::from_integer(x.clone().into())
    }
    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}
