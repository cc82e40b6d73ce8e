use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

/// Floating point type the network engine runs on. Training uses `f32`;
/// gradient checks run the same code paths in `f64`.
pub trait Real:
    LinalgScalar
    + Float
    + FromPrimitive
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// Lossy conversion from `f64`.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }

    /// Tag written into checkpoint containers.
    const DTYPE: crate::container::DType;
}

impl Real for f32 {
    const DTYPE: crate::container::DType = crate::container::DType::F32;
}

impl Real for f64 {
    const DTYPE: crate::container::DType = crate::container::DType::F64;
}
