//! Scalar abstraction shared by the mesh, FEM and network code.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type the solvers are generic over (`f32` or `f64`).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Never fails for the two supported types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }

    /// Hyperbolic tangent used as the hidden-layer activation.
    #[inline]
    fn act_tanh(self) -> Self {
        self.tanh()
    }

    /// Short name written into model metadata.
    const NAME: &'static str;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    /// Branch-free rational approximation (max relative error ~4e-7) that
    /// vectorizes; the libm call dominates training time otherwise.
    #[inline]
    fn act_tanh(self) -> Self {
        let x = self.clamp(-7.905_311, 7.905_311);
        let x2 = x * x;
        let p = ((((((-2.760_768_5e-16_f32 * x2 + 2.000_187_9e-13) * x2 - 8.604_672e-11) * x2
            + 5.122_297e-8)
            * x2
            + 1.485_722_4e-5)
            * x2
            + 6.372_619_3e-4)
            * x2
            + 4.893_524_6e-3)
            * x;
        let q =
            ((1.198_258_4e-6_f32 * x2 + 1.185_347_1e-4) * x2 + 2.268_434_6e-3) * x2 + 4.893_525e-3;
        p / q
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
}
