//! Desk-scale laboratory for preference-guided prior-noise inversion:
//! a frozen one-step generator and frozen scorers, gradient-based optimization
//! of shared (HI) or prompt-predicted (PAHI) Gaussian noise distributions,
//! win-rate evaluation, and a reproducible experiment runner.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod frozen;
mod fsio;
pub mod image;
pub mod inversion;
pub mod metrics;
pub mod predictor;
pub mod rng;
pub mod runner;

pub use error::{LabError, Result};

/// The lab runs in double precision throughout.
pub type Tensor = diffcore::Tensor<f64>;
pub type AdamState = diffcore::AdamState<f64>;
