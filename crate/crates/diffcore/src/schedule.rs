//! Linear warm-up learning-rate schedule.

use crate::error::{DiffError, Result};
use crate::scalar::Real;

/// Learning rate at `step`: linear from `floor_lr` at step 0 to `base_lr`
/// at `warmup_steps`, constant `base_lr` afterward.
pub fn lr_at<F: Real>(step: u64, base_lr: F, warmup_steps: u64, floor_lr: F) -> Result<F> {
    if warmup_steps == 0 {
        return Err(DiffError::InvalidArgument {
            context: "lr schedule",
            detail: "warmup_steps must be at least 1".to_string(),
        });
    }
    if !(floor_lr >= F::zero() && floor_lr <= base_lr && base_lr.is_finite()) {
        return Err(DiffError::InvalidArgument {
            context: "lr schedule",
            detail: format!("need 0 <= floor_lr <= base_lr, got floor {floor_lr}, base {base_lr}"),
        });
    }
    if step >= warmup_steps {
        return Ok(base_lr);
    }
    let frac = F::from_f64_lit(step as f64) / F::from_f64_lit(warmup_steps as f64);
    Ok(floor_lr + (base_lr - floor_lr) * frac)
}
