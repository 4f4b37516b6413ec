//! Reverse-mode differentiation over the recorded graph.

use std::collections::{HashMap, HashSet};

use crate::error::{fmt_shape, DiffError, Result};
use crate::ops::{matmul_case, sigmoid_scalar, MatCase, OpKind};
use crate::scalar::Real;
use crate::tensor::Tensor;

impl<F: Real> Tensor<F> {
    /// Backpropagate from this scalar loss. Every `requires_grad` leaf
    /// reachable through the graph receives (accumulates) its gradient.
    pub fn backward(&self) -> Result<()> {
        if !self.is_scalar() {
            return Err(DiffError::NonScalarLoss {
                shape: fmt_shape(self.shape()),
            });
        }

        let order = topo_order(self);
        let mut adjoint: HashMap<*const (), Vec<F>> = HashMap::new();
        adjoint.insert(self.ptr_id(), vec![F::one()]);

        // Reverse post-order: every consumer is processed before its inputs,
        // so each node's adjoint is complete when visited.
        for t in order.iter().rev() {
            let out_adj = match adjoint.get(&t.ptr_id()) {
                Some(a) => a.clone(),
                None => continue,
            };
            if let Some(node) = &t.inner.node {
                propagate(node.kind, &node.inputs, t, &out_adj, &mut adjoint)?;
            }
            if t.requires_grad() {
                t.accumulate_grad(&out_adj);
            }
        }
        Ok(())
    }
}

/// Iterative post-order DFS; each node appears exactly once.
fn topo_order<F: Real>(root: &Tensor<F>) -> Vec<Tensor<F>> {
    let mut order = Vec::new();
    let mut visited: HashSet<*const ()> = HashSet::new();
    // (tensor, expanded?) work stack
    let mut stack: Vec<(Tensor<F>, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !visited.insert(t.ptr_id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(node) = &t.inner.node {
            for input in &node.inputs {
                if !visited.contains(&input.ptr_id()) && input.needs_grad() {
                    stack.push((input.clone(), false));
                }
            }
        }
    }
    order
}

fn add_into<F: Real>(map: &mut HashMap<*const (), Vec<F>>, key: *const (), len: usize, f: impl FnOnce(&mut [F])) {
    let entry = map.entry(key).or_insert_with(|| vec![F::zero(); len]);
    f(entry);
}

fn propagate<F: Real>(
    kind: OpKind,
    inputs: &[Tensor<F>],
    output: &Tensor<F>,
    dz: &[F],
    adjoint: &mut HashMap<*const (), Vec<F>>,
) -> Result<()> {
    match kind {
        OpKind::Add => {
            for side in 0..2 {
                let t = &inputs[side];
                if t.needs_grad() {
                    add_into(adjoint, t.ptr_id(), t.numel(), |g| {
                        for (gi, &d) in g.iter_mut().zip(dz) {
                            *gi = *gi + d;
                        }
                    });
                }
            }
        }
        OpKind::Sub => {
            let (a, b) = (&inputs[0], &inputs[1]);
            if a.needs_grad() {
                add_into(adjoint, a.ptr_id(), a.numel(), |g| {
                    for (gi, &d) in g.iter_mut().zip(dz) {
                        *gi = *gi + d;
                    }
                });
            }
            if b.needs_grad() {
                add_into(adjoint, b.ptr_id(), b.numel(), |g| {
                    for (gi, &d) in g.iter_mut().zip(dz) {
                        *gi = *gi - d;
                    }
                });
            }
        }
        OpKind::Mul => {
            let (a, b) = (&inputs[0], &inputs[1]);
            if a.needs_grad() {
                let bd = b.borrow_data();
                add_into(adjoint, a.ptr_id(), a.numel(), |g| {
                    for i in 0..g.len() {
                        g[i] = g[i] + dz[i] * bd[i];
                    }
                });
            }
            if b.needs_grad() {
                let ad = a.borrow_data();
                add_into(adjoint, b.ptr_id(), b.numel(), |g| {
                    for i in 0..g.len() {
                        g[i] = g[i] + dz[i] * ad[i];
                    }
                });
            }
        }
        OpKind::AddRow => {
            let (m0, r) = (&inputs[0], &inputs[1]);
            let n = r.numel();
            if m0.needs_grad() {
                add_into(adjoint, m0.ptr_id(), m0.numel(), |g| {
                    for (gi, &d) in g.iter_mut().zip(dz) {
                        *gi = *gi + d;
                    }
                });
            }
            if r.needs_grad() {
                let rows = m0.numel() / n;
                add_into(adjoint, r.ptr_id(), n, |g| {
                    for i in 0..rows {
                        for j in 0..n {
                            g[j] = g[j] + dz[i * n + j];
                        }
                    }
                });
            }
        }
        OpKind::MatMul => {
            let (a, b) = (&inputs[0], &inputs[1]);
            let (case, _) = matmul_case(a, b)?;
            let ad = a.borrow_data();
            let bd = b.borrow_data();
            match case {
                MatCase::MatMat { m, k, n } => {
                    if a.needs_grad() {
                        add_into(adjoint, a.ptr_id(), m * k, |g| {
                            for i in 0..m {
                                for p in 0..k {
                                    let mut acc = F::zero();
                                    for j in 0..n {
                                        acc = acc + dz[i * n + j] * bd[p * n + j];
                                    }
                                    g[i * k + p] = g[i * k + p] + acc;
                                }
                            }
                        });
                    }
                    if b.needs_grad() {
                        add_into(adjoint, b.ptr_id(), k * n, |g| {
                            for p in 0..k {
                                for j in 0..n {
                                    let mut acc = F::zero();
                                    for i in 0..m {
                                        acc = acc + ad[i * k + p] * dz[i * n + j];
                                    }
                                    g[p * n + j] = g[p * n + j] + acc;
                                }
                            }
                        });
                    }
                }
                MatCase::MatVec { m, k } => {
                    if a.needs_grad() {
                        add_into(adjoint, a.ptr_id(), m * k, |g| {
                            for i in 0..m {
                                for p in 0..k {
                                    g[i * k + p] = g[i * k + p] + dz[i] * bd[p];
                                }
                            }
                        });
                    }
                    if b.needs_grad() {
                        add_into(adjoint, b.ptr_id(), k, |g| {
                            for p in 0..k {
                                let mut acc = F::zero();
                                for i in 0..m {
                                    acc = acc + ad[i * k + p] * dz[i];
                                }
                                g[p] = g[p] + acc;
                            }
                        });
                    }
                }
                MatCase::VecMat { k, n } => {
                    if a.needs_grad() {
                        add_into(adjoint, a.ptr_id(), k, |g| {
                            for p in 0..k {
                                let mut acc = F::zero();
                                for j in 0..n {
                                    acc = acc + bd[p * n + j] * dz[j];
                                }
                                g[p] = g[p] + acc;
                            }
                        });
                    }
                    if b.needs_grad() {
                        add_into(adjoint, b.ptr_id(), k * n, |g| {
                            for p in 0..k {
                                for j in 0..n {
                                    g[p * n + j] = g[p * n + j] + ad[p] * dz[j];
                                }
                            }
                        });
                    }
                }
                MatCase::Dot { k } => {
                    let d = dz[0];
                    if a.needs_grad() {
                        add_into(adjoint, a.ptr_id(), k, |g| {
                            for p in 0..k {
                                g[p] = g[p] + d * bd[p];
                            }
                        });
                    }
                    if b.needs_grad() {
                        add_into(adjoint, b.ptr_id(), k, |g| {
                            for p in 0..k {
                                g[p] = g[p] + d * ad[p];
                            }
                        });
                    }
                }
            }
        }
        OpKind::Tanh => {
            let a = &inputs[0];
            if a.needs_grad() {
                let yd = output.borrow_data();
                add_into(adjoint, a.ptr_id(), a.numel(), |g| {
                    for i in 0..g.len() {
                        g[i] = g[i] + dz[i] * (F::one() - yd[i] * yd[i]);
                    }
                });
            }
        }
        OpKind::Exp => {
            let a = &inputs[0];
            if a.needs_grad() {
                let yd = output.borrow_data();
                add_into(adjoint, a.ptr_id(), a.numel(), |g| {
                    for i in 0..g.len() {
                        g[i] = g[i] + dz[i] * yd[i];
                    }
                });
            }
        }
        OpKind::Log => {
            let a = &inputs[0];
            if a.needs_grad() {
                let xd = a.borrow_data();
                add_into(adjoint, a.ptr_id(), a.numel(), |g| {
                    for i in 0..g.len() {
                        g[i] = g[i] + dz[i] / xd[i];
                    }
                });
            }
        }
        OpKind::Square => {
            let a = &inputs[0];
            if a.needs_grad() {
                let xd = a.borrow_data();
                let two = F::from_f64_lit(2.0);
                add_into(adjoint, a.ptr_id(), a.numel(), |g| {
                    for i in 0..g.len() {
                        g[i] = g[i] + dz[i] * two * xd[i];
                    }
                });
            }
        }
        OpKind::Softplus => {
            let a = &inputs[0];
            if a.needs_grad() {
                let xd = a.borrow_data();
                add_into(adjoint, a.ptr_id(), a.numel(), |g| {
                    for i in 0..g.len() {
                        g[i] = g[i] + dz[i] * sigmoid_scalar(xd[i]);
                    }
                });
            }
        }
        OpKind::Neg => {
            let a = &inputs[0];
            if a.needs_grad() {
                add_into(adjoint, a.ptr_id(), a.numel(), |g| {
                    for i in 0..g.len() {
                        g[i] = g[i] - dz[i];
                    }
                });
            }
        }
        OpKind::Sum => {
            let a = &inputs[0];
            if a.needs_grad() {
                let d = dz[0];
                add_into(adjoint, a.ptr_id(), a.numel(), |g| {
                    for gi in g.iter_mut() {
                        *gi = *gi + d;
                    }
                });
            }
        }
        OpKind::Mean => {
            let a = &inputs[0];
            if a.needs_grad() {
                let d = dz[0] / F::from_f64_lit(a.numel() as f64);
                add_into(adjoint, a.ptr_id(), a.numel(), |g| {
                    for gi in g.iter_mut() {
                        *gi = *gi + d;
                    }
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::zero_grads;

    #[test]
    fn sum_of_squares_gradient() {
        let x = Tensor::param([2], vec![1.0f64, 2.0]).unwrap();
        let loss = x.square().unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn constant_loss_leaves_parameter_grads_zero() {
        let p = Tensor::param([3], vec![1.0f64, 2.0, 3.0]).unwrap();
        zero_grads(&[p.clone()]);
        let loss = Tensor::scalar(7.0f64);
        loss.backward().unwrap();
        assert!(p.grad().is_none());
    }

    #[test]
    fn softplus_of_difference_gradients_at_equal_scores() {
        let a = Tensor::param([1], vec![1.5f64]).unwrap();
        let b = Tensor::param([1], vec![1.5f64]).unwrap();
        let loss = a.sub(&b).unwrap().softplus().unwrap();
        loss.backward().unwrap();
        assert!((a.grad().unwrap()[0] - 0.5).abs() < 1e-15);
        assert!((b.grad().unwrap()[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn backward_on_non_scalar_is_an_error() {
        let x = Tensor::param([2], vec![1.0f64, 2.0]).unwrap();
        let y = x.square().unwrap();
        assert!(matches!(y.backward(), Err(DiffError::NonScalarLoss { .. })));
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(x*x) + sum(x) => grad = 2x + 1
        let x = Tensor::param([2], vec![3.0f64, -1.0]).unwrap();
        let loss = x
            .mul(&x)
            .unwrap()
            .sum()
            .unwrap()
            .add(&x.sum().unwrap())
            .unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0, -1.0]);
    }

    #[test]
    fn grads_accumulate_across_backwards_until_zeroed() {
        let x = Tensor::param([1], vec![2.0f64]).unwrap();
        let loss = x.square().unwrap().sum().unwrap();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![8.0]);
        x.zero_grad();
        let loss2 = x.square().unwrap().sum().unwrap();
        loss2.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0]);
    }

    #[test]
    fn matmul_gradients_all_rank_cases() {
        // scalar loss sum(A·B) with A 2x2 param, B 2-vector param
        let a = Tensor::param([2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::param([2], vec![5.0f64, 6.0]).unwrap();
        let loss = a.matmul(&b).unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![5.0, 6.0, 5.0, 6.0]);
        assert_eq!(b.grad().unwrap(), vec![4.0, 6.0]);
    }
}
