//! Forward primitives. Each application records a graph node when any input
//! needs gradients; otherwise it is a plain value computation.

use crate::error::{fmt_shape, DiffError, Result};
use crate::scalar::Real;
use crate::tensor::{Node, Tensor};

/// The primitive set. Shape rules:
/// matmul accepts 2x2, 2x1, 1x2 and 1x1 (dot) rank combinations;
/// add-row broadcasts a length-n row vector over an m-by-n matrix;
/// the remaining binary ops require identical shapes; sum and mean
/// reduce to a `[1]` scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Tanh,
    Exp,
    Log,
    Square,
    Softplus,
    Neg,
    Sum,
    Mean,
    AddRow,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "subtract",
            OpKind::Mul => "hadamard-multiply",
            OpKind::Tanh => "tanh",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Square => "square",
            OpKind::Softplus => "softplus",
            OpKind::Neg => "negate",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::AddRow => "broadcast-add-row",
        }
    }

    fn arity(self) -> usize {
        match self {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::AddRow => 2,
            _ => 1,
        }
    }
}

/// Numerically stable softplus: `ln(1 + e^x)` without overflow for large `|x|`.
pub(crate) fn softplus_scalar<F: Real>(x: F) -> F {
    let zero = F::zero();
    if x > zero {
        x + x.neg().exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid, the derivative of softplus.
pub(crate) fn sigmoid_scalar<F: Real>(x: F) -> F {
    let one = F::one();
    if x >= F::zero() {
        one / (one + x.neg().exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

fn same_shape_rule<F: Real>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<Vec<usize>> {
    if a.shape() != b.shape() {
        return Err(DiffError::ShapeMismatch {
            op,
            lhs: fmt_shape(a.shape()),
            rhs: fmt_shape(b.shape()),
        });
    }
    Ok(a.shape().to_vec())
}

/// Classified matmul operand ranks.
pub(crate) enum MatCase {
    MatMat { m: usize, k: usize, n: usize },
    MatVec { m: usize, k: usize },
    VecMat { k: usize, n: usize },
    Dot { k: usize },
}

pub(crate) fn matmul_case<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<(MatCase, Vec<usize>)> {
    let mismatch = || DiffError::ShapeMismatch {
        op: "matmul",
        lhs: fmt_shape(a.shape()),
        rhs: fmt_shape(b.shape()),
    };
    match (a.shape(), b.shape()) {
        ([m, k], [k2, n]) => {
            if k != k2 {
                return Err(mismatch());
            }
            Ok((
                MatCase::MatMat {
                    m: *m,
                    k: *k,
                    n: *n,
                },
                vec![*m, *n],
            ))
        }
        ([m, k], [k2]) => {
            if k != k2 {
                return Err(mismatch());
            }
            Ok((MatCase::MatVec { m: *m, k: *k }, vec![*m]))
        }
        ([k], [k2, n]) => {
            if k != k2 {
                return Err(mismatch());
            }
            Ok((MatCase::VecMat { k: *k, n: *n }, vec![*n]))
        }
        ([k], [k2]) => {
            if k != k2 {
                return Err(mismatch());
            }
            Ok((MatCase::Dot { k: *k }, vec![1]))
        }
        _ => Err(mismatch()),
    }
}

fn forward<F: Real>(kind: OpKind, inputs: &[&Tensor<F>]) -> Result<(Vec<usize>, Vec<F>)> {
    match kind {
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            let shape = same_shape_rule(kind.name(), a, b)?;
            let (da, db) = (a.borrow_data(), b.borrow_data());
            let data = da
                .iter()
                .zip(db.iter())
                .map(|(&x, &y)| match kind {
                    OpKind::Add => x + y,
                    OpKind::Sub => x - y,
                    _ => x * y,
                })
                .collect();
            Ok((shape, data))
        }
        OpKind::AddRow => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, n) = match (a.shape(), b.shape()) {
                ([m, n], [n2]) if n == n2 => (*m, *n),
                _ => {
                    return Err(DiffError::ShapeMismatch {
                        op: kind.name(),
                        lhs: fmt_shape(a.shape()),
                        rhs: fmt_shape(b.shape()),
                    })
                }
            };
            let (da, db) = (a.borrow_data(), b.borrow_data());
            let mut data = Vec::with_capacity(m * n);
            for i in 0..m {
                for j in 0..n {
                    data.push(da[i * n + j] + db[j]);
                }
            }
            Ok((vec![m, n], data))
        }
        OpKind::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (case, shape) = matmul_case(a, b)?;
            let (da, db) = (a.borrow_data(), b.borrow_data());
            let data = match case {
                MatCase::MatMat { m, k, n } => {
                    let mut out = vec![F::zero(); m * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = da[i * k + p];
                            for j in 0..n {
                                out[i * n + j] = out[i * n + j] + aip * db[p * n + j];
                            }
                        }
                    }
                    out
                }
                MatCase::MatVec { m, k } => {
                    let mut out = vec![F::zero(); m];
                    for i in 0..m {
                        let mut acc = F::zero();
                        for p in 0..k {
                            acc = acc + da[i * k + p] * db[p];
                        }
                        out[i] = acc;
                    }
                    out
                }
                MatCase::VecMat { k, n } => {
                    let mut out = vec![F::zero(); n];
                    for p in 0..k {
                        let ap = da[p];
                        for j in 0..n {
                            out[j] = out[j] + ap * db[p * n + j];
                        }
                    }
                    out
                }
                MatCase::Dot { k } => {
                    let mut acc = F::zero();
                    for p in 0..k {
                        acc = acc + da[p] * db[p];
                    }
                    vec![acc]
                }
            };
            Ok((shape, data))
        }
        OpKind::Tanh | OpKind::Exp | OpKind::Square | OpKind::Softplus | OpKind::Neg => {
            let a = inputs[0];
            let da = a.borrow_data();
            let data = da
                .iter()
                .map(|&x| match kind {
                    OpKind::Tanh => x.tanh(),
                    OpKind::Exp => x.exp(),
                    OpKind::Square => x * x,
                    OpKind::Softplus => softplus_scalar(x),
                    _ => -x,
                })
                .collect();
            Ok((a.shape().to_vec(), data))
        }
        OpKind::Log => {
            let a = inputs[0];
            let da = a.borrow_data();
            let mut data = Vec::with_capacity(da.len());
            for (i, &x) in da.iter().enumerate() {
                if x <= F::zero() {
                    return Err(DiffError::LogDomain {
                        value: format!("{x}"),
                        index: i,
                    });
                }
                data.push(x.ln());
            }
            Ok((a.shape().to_vec(), data))
        }
        OpKind::Sum | OpKind::Mean => {
            let a = inputs[0];
            let da = a.borrow_data();
            let mut acc = F::zero();
            for &x in da.iter() {
                acc = acc + x;
            }
            if kind == OpKind::Mean {
                acc = acc / F::from_f64_lit(da.len() as f64);
            }
            Ok((vec![1], vec![acc]))
        }
    }
}

/// Apply one primitive, recording a graph node when a gradient path exists.
pub fn apply_primitive<F: Real>(kind: OpKind, inputs: &[&Tensor<F>]) -> Result<Tensor<F>> {
    if inputs.len() != kind.arity() {
        return Err(DiffError::Arity {
            op: kind.name(),
            expected: kind.arity(),
            got: inputs.len(),
        });
    }
    let (shape, data) = forward(kind, inputs)?;
    debug_assert!(
        data.iter().all(|x| x.is_finite()),
        "{}: non-finite forward output",
        kind.name()
    );
    let node = if inputs.iter().any(|t| t.needs_grad()) {
        Some(Node {
            kind,
            inputs: inputs.iter().map(|t| (*t).clone()).collect(),
        })
    } else {
        None
    };
    Tensor::from_op(shape, data, node)
}

impl<F: Real> Tensor<F> {
    pub fn matmul(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        apply_primitive(OpKind::MatMul, &[self, rhs])
    }
    pub fn add(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        apply_primitive(OpKind::Add, &[self, rhs])
    }
    pub fn sub(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        apply_primitive(OpKind::Sub, &[self, rhs])
    }
    pub fn mul(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        apply_primitive(OpKind::Mul, &[self, rhs])
    }
    pub fn add_row(&self, row: &Tensor<F>) -> Result<Tensor<F>> {
        apply_primitive(OpKind::AddRow, &[self, row])
    }
    pub fn tanh(&self) -> Result<Tensor<F>> {
        apply_primitive(OpKind::Tanh, &[self])
    }
    pub fn exp(&self) -> Result<Tensor<F>> {
        apply_primitive(OpKind::Exp, &[self])
    }
    pub fn log(&self) -> Result<Tensor<F>> {
        apply_primitive(OpKind::Log, &[self])
    }
    pub fn square(&self) -> Result<Tensor<F>> {
        apply_primitive(OpKind::Square, &[self])
    }
    pub fn softplus(&self) -> Result<Tensor<F>> {
        apply_primitive(OpKind::Softplus, &[self])
    }
    pub fn neg(&self) -> Result<Tensor<F>> {
        apply_primitive(OpKind::Neg, &[self])
    }
    pub fn sum(&self) -> Result<Tensor<F>> {
        apply_primitive(OpKind::Sum, &[self])
    }
    pub fn mean(&self) -> Result<Tensor<F>> {
        apply_primitive(OpKind::Mean, &[self])
    }

    /// Elementwise multiplication by a constant, via the hadamard primitive.
    pub fn scale(&self, c: F) -> Result<Tensor<F>> {
        self.mul(&Tensor::full(self.shape().to_vec(), c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn tanh_of_zero_vector_is_zero() {
        let x = Tensor::<f64>::zeros([4]);
        let y = x.tanh().unwrap();
        assert_eq!(y.value(), vec![0.0f64; 4]);
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let y = Tensor::scalar(0.0f64).softplus().unwrap();
        assert!((y.item().unwrap() - LN2).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_stable_for_huge_arguments() {
        let y = Tensor::scalar(1e6f64).softplus().unwrap().item().unwrap();
        assert_eq!(y, 1e6);
        let z = Tensor::scalar(-1e6f64).softplus().unwrap().item().unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn matmul_all_ones_gives_row_sums() {
        let a = Tensor::full([2, 3], 1.0f64);
        let b = Tensor::full([3, 1], 1.0f64);
        let y = a.matmul(&b).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
        assert_eq!(y.value(), vec![3.0, 3.0]);
    }

    #[test]
    fn matmul_vector_cases() {
        let m = Tensor::from_vec([2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let v = Tensor::from_vec([2], vec![1.0f64, 1.0]).unwrap();
        assert_eq!(m.matmul(&v).unwrap().value(), vec![3.0, 7.0]);
        assert_eq!(v.matmul(&m).unwrap().value(), vec![4.0, 6.0]);
        assert_eq!(v.matmul(&v).unwrap().value(), vec![2.0]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let a = Tensor::<f64>::zeros([2, 3]);
        let b = Tensor::<f64>::zeros([4, 1]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul"), "{msg}");
        assert!(msg.contains("2x3") && msg.contains("4x1"), "{msg}");
    }

    #[test]
    fn log_of_non_positive_is_domain_error() {
        let x = Tensor::from_vec([2], vec![1.0f64, -0.5]).unwrap();
        let err = x.log().unwrap_err();
        assert!(matches!(err, DiffError::LogDomain { index: 1, .. }));
    }

    #[test]
    fn add_row_broadcasts_over_rows() {
        let m = Tensor::from_vec([2, 2], vec![0.0f64, 0.0, 1.0, 1.0]).unwrap();
        let r = Tensor::from_vec([2], vec![10.0f64, 20.0]).unwrap();
        assert_eq!(m.add_row(&r).unwrap().value(), vec![10.0, 20.0, 11.0, 21.0]);
        assert!(r.add_row(&m).is_err());
    }

    #[test]
    fn mean_reduces_to_scalar() {
        let x = Tensor::from_vec([4], vec![1.0f64, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(x.mean().unwrap().value(), vec![3.0]);
        assert_eq!(x.sum().unwrap().shape(), &[1]);
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let x = Tensor::from_vec([3], vec![0.3f64, -1.7, 2.9]).unwrap();
        let run = |x: &Tensor<f64>| {
            x.tanh()
                .unwrap()
                .exp()
                .unwrap()
                .softplus()
                .unwrap()
                .sum()
                .unwrap()
                .item()
                .unwrap()
        };
        assert_eq!(run(&x).to_bits(), run(&x).to_bits());
    }
}
