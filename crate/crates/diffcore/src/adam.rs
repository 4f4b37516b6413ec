//! Bias-corrected Adam over a fixed parameter list.

use crate::error::{DiffError, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Optimizer state: step counter plus first/second moment buffers matching
/// each parameter tensor.
pub struct AdamState<F: Real> {
    t: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    beta1: F,
    beta2: F,
    epsilon: F,
}

impl<F: Real> AdamState<F> {
    /// Default hyperparameters: beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(params: &[Tensor<F>]) -> Self {
        Self::with_hyper(
            params,
            F::from_f64_lit(0.9),
            F::from_f64_lit(0.999),
            F::from_f64_lit(1e-8),
        )
    }

    pub fn with_hyper(params: &[Tensor<F>], beta1: F, beta2: F, epsilon: F) -> Self {
        AdamState {
            t: 0,
            m: params.iter().map(|p| vec![F::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![F::zero(); p.numel()]).collect(),
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn second_moment(&self, param: usize) -> &[F] {
        &self.v[param]
    }

    /// One in-place update of every parameter from its accumulated gradient.
    /// A parameter whose gradient was never touched is treated as zero-grad.
    pub fn step(&mut self, params: &[Tensor<F>], lr: F) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(DiffError::InvalidArgument {
                context: "adam",
                detail: format!("state holds {} parameters, got {}", self.m.len(), params.len()),
            });
        }
        if !(lr >= F::zero() && lr.is_finite()) {
            return Err(DiffError::InvalidArgument {
                context: "adam",
                detail: format!("learning rate must be finite and non-negative, got {lr}"),
            });
        }
        self.t += 1;
        let t = F::from_f64_lit(self.t as f64);
        let bias1 = F::one() - self.beta1.powf(t);
        let bias2 = F::one() - self.beta2.powf(t);
        for (idx, p) in params.iter().enumerate() {
            let grad = p.grad().unwrap_or_else(|| vec![F::zero(); p.numel()]);
            if grad.len() != p.numel() {
                return Err(DiffError::InvalidArgument {
                    context: "adam",
                    detail: format!("gradient length {} != parameter size {}", grad.len(), p.numel()),
                });
            }
            for (coord, g) in grad.iter().enumerate() {
                if !g.is_finite() {
                    return Err(DiffError::NonFiniteGrad { param: idx, coord });
                }
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let mut data = p.value();
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (F::one() - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (F::one() - self.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            p.set_data(&data)?;
        }
        Ok(())
    }
}
