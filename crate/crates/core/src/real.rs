//! Scalar abstraction. Every numeric kernel is generic over [`Real`] so the
//! same code runs in `f32` or `f64`; concrete aliases live at the crate root.
//!
//! Randomness is always drawn in `f64` and converted with [`Real::of`], so the
//! consumed random streams — and therefore dataset bytes, mined orientations
//! and shuffles — are identical for both scalar types.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Floating-point scalar usable by all kernels in this crate.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Conversion from an `f64` constant (rounds once for `f32`).
    fn of(x: f64) -> Self;

    /// Widening conversion used for reporting, metrics and serialization.
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline(always)]
    fn of(x: f64) -> f32 {
        x as f32
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline(always)]
    fn of(x: f64) -> f64 {
        x
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
}
