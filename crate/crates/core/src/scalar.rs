use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display};

/// Scalar element type for arrays, tapes and kernels.
///
/// f32 is the training/inference default, f64 backs gradient checks and
/// the test oracles.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Debug + Display + Send + Sync + 'static
{
    fn from_f(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 -> scalar conversion")
    }
    fn to_f64s(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar -> f64 conversion")
    }
    fn from_usize_(x: usize) -> Self {
        <Self as FromPrimitive>::from_usize(x).expect("usize -> scalar conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
