//! Scalar abstraction: every numeric component is generic over the element
//! type, with `f64` as the default precision and `f32` selectable for speed.

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point element type of tensors, parameters and losses.
///
/// All randomness is drawn in `f64` and converted, so an `f32` run executes
/// the same structural program as an `f64` run.
pub trait Scalar:
    Float
    + NumAssignOps
    + FromPrimitive
    + ToPrimitive
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Short name used in manifests ("f32"/"f64").
    const NAME: &'static str;

    fn of_f64(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 conversion")
    }

    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("f64 conversion")
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
}
