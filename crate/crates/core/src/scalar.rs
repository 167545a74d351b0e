use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, NumCast};

/// Floating-point element type for the numeric core.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Sum
    + 'static
{
    /// Converts a literal; every `Scalar` can represent (or round) an `f64`.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("f64 literal fits scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl<T> Scalar for T where
    T: Float
        + NumAssign
        + FromPrimitive
        + LinalgScalar
        + ScalarOperand
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + Sum
        + 'static
{
}
