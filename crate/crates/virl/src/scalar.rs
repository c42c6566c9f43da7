//! Floating point abstraction used by every numeric type in the crate.
//!
//! All math is written once against [`Scalar`] and instantiated at `f32`
//! or `f64`. Random draws are produced in `f64` and converted, so both
//! instantiations consume identical RNG streams.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Scalar type for densities, network weights and policy parameters.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + ScalarOperand
    + LinalgScalar
    + Sum
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant. Panics only if the value cannot be
    /// represented at all, which no finite constant in this crate triggers.
    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 constant not representable")
    }

    /// Widens to `f64` for serialization and reporting.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }

    fn of_usize(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize not representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converts_between_widths() {
        let x: f32 = Scalar::of_f64(0.25);
        assert_eq!(x, 0.25f32);
        assert_eq!(x.as_f64(), 0.25f64);
        let n: f64 = Scalar::of_usize(7);
        assert_eq!(n, 7.0);
    }
}
