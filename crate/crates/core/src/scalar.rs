use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the statistics layer is generic over: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Tolerance used when checking that a pmf sums to one.
    fn pmf_tolerance() -> Self {
        let floor = Self::from_f64(1e-12).unwrap();
        let eps = Self::epsilon() * Self::from_u8(16).unwrap();
        if eps > floor {
            eps
        } else {
            floor
        }
    }

    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).unwrap()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
