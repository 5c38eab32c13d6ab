//! Scalar abstraction shared by every numeric routine in the crate.

use ndarray::NdFloat;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point element type used by tensors, layers and statistics.
///
/// Implemented for `f32` (training, inference) and `f64` (gradient checks,
/// reference computations).
pub trait Scalar: NdFloat + FromPrimitive + ToPrimitive + Default + 'static {
    /// Short tag written into persisted parameter files.
    const DTYPE: &'static str;

    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        assert_eq!(f32::of(0.5).as_f64(), 0.5);
        assert_eq!(<f64 as Scalar>::of(-2.25), -2.25);
    }
}
