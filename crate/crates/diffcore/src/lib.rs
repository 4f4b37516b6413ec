//! Minimal dense-tensor engine with reverse-mode automatic differentiation,
//! bias-corrected Adam, a warm-up learning-rate schedule, and finite-difference
//! gradient checking.
//!
//! The engine is generic over the scalar type via [`Real`] (f32 or f64);
//! concrete aliases live at the crate root. Graphs are dynamic: every forward
//! pass records a fresh tape, and dropping the loss drops the tape. Gradients
//! accumulate additively across fan-out and across backward calls; callers
//! zero them between optimization steps with [`zero_grads`].

mod adam;
mod autograd;
mod error;
mod gradcheck;
mod ops;
mod schedule;
mod scalar;
mod tensor;

pub use adam::AdamState;
pub use error::{DiffError, Result};
pub use gradcheck::{grad_check, CoordFailure, GradCheckReport};
pub use ops::{apply_primitive, OpKind};
pub use schedule::lr_at;
pub use scalar::Real;
pub use tensor::{zero_grads, Tensor};

/// Single-precision tensor.
pub type Tensor32 = Tensor<f32>;
/// Double-precision tensor, the default for the experiment stack.
pub type Tensor64 = Tensor<f64>;
