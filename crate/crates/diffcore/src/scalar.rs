//! Scalar abstraction for the tensor engine.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar the engine is generic over: f32 or f64.
pub trait Real: Float + FromPrimitive + Debug + Display + 'static {
    /// Lossy conversion from f64, for hyperparameters and literals.
    fn from_f64_lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}
