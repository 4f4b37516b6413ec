//! Central finite-difference verification of analytic gradients.

use crate::error::{DiffError, Result};
use crate::scalar::Real;
use crate::tensor::{zero_grads, Tensor};

/// One coordinate whose analytic/numeric gradients disagree beyond tolerance.
#[derive(Debug, Clone)]
pub struct CoordFailure<F> {
    pub param: usize,
    pub coord: usize,
    pub analytic: F,
    pub numeric: F,
    pub rel_error: F,
}

/// Outcome of a gradient check. Failures are reported, never thrown.
#[derive(Debug, Clone)]
pub struct GradCheckReport<F> {
    pub max_rel_error: F,
    pub coords_checked: usize,
    pub tolerance: F,
    pub failures: Vec<CoordFailure<F>>,
}

impl<F: Real> GradCheckReport<F> {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compare the backward-pass gradient of `program` against central finite
/// differences `(f(x+h) - f(x-h)) / 2h`, coordinate by coordinate.
///
/// The relative error denominator is `max(|analytic|, |numeric|, 1)`, so
/// near-zero gradients are compared absolutely.
pub fn grad_check<F: Real>(
    program: impl Fn(&[Tensor<F>]) -> Result<Tensor<F>>,
    params: &[Tensor<F>],
    step: F,
    tolerance: F,
) -> Result<GradCheckReport<F>> {
    if !(step > F::zero()) {
        return Err(DiffError::InvalidArgument {
            context: "grad_check",
            detail: format!("step must be positive, got {step}"),
        });
    }
    zero_grads(params);
    let loss = program(params)?;
    loss.backward()?;
    let analytic: Vec<Vec<F>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![F::zero(); p.numel()]))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: F::zero(),
        coords_checked: 0,
        tolerance,
        failures: Vec::new(),
    };
    let two = F::from_f64_lit(2.0);
    for (pi, p) in params.iter().enumerate() {
        let original = p.value();
        for ci in 0..original.len() {
            let mut perturbed = original.clone();
            perturbed[ci] = original[ci] + step;
            p.set_data(&perturbed)?;
            let f_plus = program(params)?.item()?;
            perturbed[ci] = original[ci] - step;
            p.set_data(&perturbed)?;
            let f_minus = program(params)?.item()?;
            p.set_data(&original)?;

            let numeric = (f_plus - f_minus) / (two * step);
            let a = analytic[pi][ci];
            let denom = a.abs().max(numeric.abs()).max(F::one());
            let rel = (a - numeric).abs() / denom;
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
            }
            if rel > tolerance {
                report.failures.push(CoordFailure {
                    param: pi,
                    coord: ci,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_program_matches_to_1e6() {
        let x = Tensor::param([4], vec![0.7f64, -1.2, 2.0, 0.1]).unwrap();
        let report = grad_check(
            |ps| ps[0].square()?.sum(),
            &[x],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_error);
        assert!(report.max_rel_error < 1e-6);
    }

    #[test]
    fn tanh_matmul_program_matches_to_1e5() {
        let w = Tensor::param([2, 4], vec![0.3f64, -0.1, 0.7, 0.2, -0.4, 0.5, 0.05, -0.9]).unwrap();
        let x = Tensor::param([4], vec![0.6f64, -0.25, 1.1, -0.8]).unwrap();
        let report = grad_check(
            |ps| ps[0].matmul(&ps[1])?.tanh()?.square()?.sum(),
            &[w, x],
            1e-5,
            1e-5,
        )
        .unwrap();
        assert_eq!(report.coords_checked, 12);
        assert!(report.passed(), "max rel err {}", report.max_rel_error);
    }

    #[test]
    fn constant_program_has_exactly_zero_gradients() {
        let x = Tensor::param([3], vec![1.0f64, 2.0, 3.0]).unwrap();
        let report = grad_check(|_| Ok(Tensor::scalar(5.0f64)), &[x], 1e-5, 1e-12).unwrap();
        assert!(report.passed());
        assert_eq!(report.max_rel_error, 0.0);
    }
}
