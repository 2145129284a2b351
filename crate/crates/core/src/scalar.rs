use std::fmt::{Debug, Display};

use num_traits::{Float, NumAssign};

/// Element type of tensors and parameters.
///
/// Storage is done in `Self`; every reduction widens to `f64` first, so an
/// `f32` model still accumulates in 64-bit.
pub trait Scalar: Float + NumAssign + Default + Debug + Display + Send + Sync + 'static {
    /// Size in bytes of one stored element.
    const BYTES: usize;

    fn from_f64(value: f64) -> Self;

    fn widen(self) -> f64;
}

impl Scalar for f32 {
    const BYTES: usize = 4;

    #[inline(always)]
    fn from_f64(value: f64) -> Self {
        value as f32
    }

    #[inline(always)]
    fn widen(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;

    #[inline(always)]
    fn from_f64(value: f64) -> Self {
        value
    }

    #[inline(always)]
    fn widen(self) -> f64 {
        self
    }
}
