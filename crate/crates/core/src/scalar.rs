use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar the numeric core is generic over.
///
/// Implemented for `f32` and `f64`. Hyperparameters and configuration values
/// are carried as `f64` and converted at the boundary with [`Real::of`].
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("every f64 converts to a Real (possibly as inf)")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("every Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
