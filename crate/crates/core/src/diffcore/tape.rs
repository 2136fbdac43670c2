//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A `Tape` is a per-forward-pass arena of nodes. Model code builds the
//! computation with the `Tape` methods, calls `backward` on a scalar loss,
//! then reads gradients back out of the leaves. Parameters live outside the
//! tape (see `params`) and are re-inserted as leaves on every pass.

use crate::error::{CoreError, Result};

use super::tensor::Tensor;

/// Handle to a node on a `Tape`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    MeanAxis0(Var),
    SumAll(Var),
    MeanAll(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    GatherRows(Var, Vec<usize>),
    RowUpdate {
        base: Var,
        rows: Var,
        indices: Vec<usize>,
    },
}

/// How the right operand of a binary op lines up with the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    /// rhs is [n, 1], broadcast across columns.
    ColVec,
    /// rhs is [1, m], broadcast across rows.
    RowVec,
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn broadcast_kind(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> Result<Broadcast> {
    if lhs.shape() == rhs.shape() {
        return Ok(Broadcast::Same);
    }
    if rhs.numel() == 1 {
        return Ok(Broadcast::Scalar);
    }
    if lhs.shape().len() == 2 && rhs.shape().len() == 2 {
        if rhs.shape() == [lhs.shape()[0], 1] {
            return Ok(Broadcast::ColVec);
        }
        if rhs.shape() == [1, lhs.shape()[1]] {
            return Ok(Broadcast::RowVec);
        }
    }
    Err(CoreError::ShapeMismatch {
        op,
        detail: format!("lhs {:?} vs rhs {:?}", lhs.shape(), rhs.shape()),
    })
}

/// Index of the rhs element paired with flat index `i` of the lhs.
#[inline]
fn rhs_index(kind: Broadcast, i: usize, cols: usize) -> usize {
    match kind {
        Broadcast::Same => i,
        Broadcast::Scalar => 0,
        Broadcast::ColVec => i / cols,
        Broadcast::RowVec => i % cols,
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            needs_grad,
        });
        Var(id)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Leaf that participates in differentiation.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.as_ref().map(|g| {
            Tensor::from_vec(self.nodes[v.0].value.shape().to_vec(), g.clone())
                .expect("grad shape matches value shape")
        })
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    // ---- binary elementwise -------------------------------------------------

    fn binary(&mut self, op: &'static str, a: Var, b: Var) -> Result<(Broadcast, Vec<f64>)> {
        let kind = broadcast_kind(op, self.value(a), self.value(b))?;
        let lhs = self.value(a);
        let rhs = self.value(b);
        let cols = if lhs.shape().len() == 2 { lhs.shape()[1] } else { lhs.numel() };
        let out: Vec<f64> = match op {
            "add" => lhs
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + rhs.data()[rhs_index(kind, i, cols)])
                .collect(),
            "sub" => lhs
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x - rhs.data()[rhs_index(kind, i, cols)])
                .collect(),
            "mul" => lhs
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x * rhs.data()[rhs_index(kind, i, cols)])
                .collect(),
            "div" => lhs
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x / rhs.data()[rhs_index(kind, i, cols)])
                .collect(),
            _ => unreachable!(),
        };
        Ok((kind, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, out) = self.binary("add", a, b)?;
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), Tensor::from_vec(shape, out)?, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, out) = self.binary("sub", a, b)?;
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub(a, b), Tensor::from_vec(shape, out)?, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, out) = self.binary("mul", a, b)?;
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), Tensor::from_vec(shape, out)?, needs))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, out) = self.binary("div", a, b)?;
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Div(a, b), Tensor::from_vec(shape, out)?, needs))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|&x| x + c).collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a);
        self.push(
            Op::AddScalar(a),
            Tensor::from_vec(shape, out).expect("same shape"),
            needs,
        )
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|&x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a);
        self.push(
            Op::MulScalar(a, c),
            Tensor::from_vec(shape, out).expect("same shape"),
            needs,
        )
    }

    // ---- matmul and shape ops -----------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (lhs, rhs) = (self.value(a), self.value(b));
        if lhs.shape().len() != 2 || rhs.shape().len() != 2 {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                detail: format!("need 2-D operands, got {:?} and {:?}", lhs.shape(), rhs.shape()),
            });
        }
        let (m, k) = (lhs.shape()[0], lhs.shape()[1]);
        let (k2, n) = (rhs.shape()[0], rhs.shape()[1]);
        if k != k2 {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                detail: format!("inner dims {k} vs {k2}"),
            });
        }
        let out = matmul_raw(lhs.data(), rhs.data(), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::from_vec(vec![m, n], out)?, needs))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert_eq!(t.shape().len(), 2, "transpose expects 2-D");
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.data()[i * c + j];
            }
        }
        let needs = self.needs(a);
        self.push(
            Op::Transpose(a),
            Tensor::from_vec(vec![c, r], out).expect("transposed shape"),
            needs,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a);
        let numel: usize = shape.iter().product();
        if numel != t.numel() {
            return Err(CoreError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", t.shape(), shape),
            });
        }
        let data = t.data().to_vec();
        let needs = self.needs(a);
        Ok(self.push(Op::Reshape(a), Tensor::from_vec(shape, data)?, needs))
    }

    /// Concatenate 2-D tensors with equal row counts along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        assert!(!parts.is_empty(), "concat_cols needs at least one input");
        let rows = self.value(parts[0]).rows();
        let mut total_cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.rows() != rows {
                return Err(CoreError::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("part {:?} does not match {} rows", t.shape(), rows),
                });
            }
            total_cols += t.cols();
        }
        let mut out = vec![0.0; rows * total_cols];
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            let c = t.cols();
            for r in 0..rows {
                out[r * total_cols + offset..r * total_cols + offset + c]
                    .copy_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
            offset += c;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::from_vec(vec![rows, total_cols], out)?,
            needs,
        ))
    }

    // ---- reductions -----------------------------------------------------------

    /// Column means of a 2-D tensor, shape [1, cols].
    pub fn mean_axis0(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert_eq!(t.shape().len(), 2, "mean_axis0 expects 2-D");
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += t.data()[i * c + j];
            }
        }
        for v in &mut out {
            *v /= r as f64;
        }
        let needs = self.needs(a);
        self.push(
            Op::MeanAxis0(a),
            Tensor::from_vec(vec![1, c], out).expect("mean shape"),
            needs,
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Op::SumAll(a), Tensor::scalar(s), needs)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s: f64 = t.data().iter().sum();
        let n = t.numel() as f64;
        let needs = self.needs(a);
        self.push(Op::MeanAll(a), Tensor::scalar(s / n), needs)
    }

    // ---- nonlinearities -------------------------------------------------------

    pub fn relu(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a);
        self.push(Op::Relu(a), Tensor::from_vec(shape, out).expect("same shape"), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a);
        self.push(Op::Sigmoid(a), Tensor::from_vec(shape, out).expect("same shape"), needs)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|&x| x.exp()).collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a);
        self.push(Op::Exp(a), Tensor::from_vec(shape, out).expect("same shape"), needs)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|&x| x.ln()).collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a);
        self.push(Op::Log(a), Tensor::from_vec(shape, out).expect("same shape"), needs)
    }

    /// Elementwise clamp; gradient is zero outside the open interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| x.clamp(lo, hi))
            .collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a);
        self.push(
            Op::Clamp(a, lo, hi),
            Tensor::from_vec(shape, out).expect("same shape"),
            needs,
        )
    }

    /// Row-wise softmax with max subtraction for stability.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert_eq!(t.shape().len(), 2, "softmax_rows expects 2-D");
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &t.data()[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                out[i * c + j] = e;
                denom += e;
            }
            for j in 0..c {
                out[i * c + j] /= denom;
            }
        }
        let needs = self.needs(a);
        self.push(
            Op::SoftmaxRows(a),
            Tensor::from_vec(vec![r, c], out).expect("same shape"),
            needs,
        )
    }

    // ---- row indexing ----------------------------------------------------------

    /// Select rows of a 2-D tensor; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let t = self.value(a);
        assert_eq!(t.shape().len(), 2, "gather_rows expects 2-D");
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; indices.len() * c];
        for (k, &i) in indices.iter().enumerate() {
            assert!(i < r, "gather index {i} out of {r} rows");
            out[k * c..(k + 1) * c].copy_from_slice(&t.data()[i * c..(i + 1) * c]);
        }
        let needs = self.needs(a);
        self.push(
            Op::GatherRows(a, indices.to_vec()),
            Tensor::from_vec(vec![indices.len(), c], out).expect("gather shape"),
            needs,
        )
    }

    /// Copy of `base` with row `indices[k]` replaced by row `k` of `rows`.
    /// Untouched rows keep their exact bit pattern. Indices must be unique.
    pub fn row_update(&mut self, base: Var, rows: Var, indices: &[usize]) -> Result<Var> {
        let (bt, rt) = (self.value(base), self.value(rows));
        if bt.shape().len() != 2
            || rt.shape().len() != 2
            || bt.cols() != rt.cols()
            || rt.rows() != indices.len()
        {
            return Err(CoreError::ShapeMismatch {
                op: "row_update",
                detail: format!(
                    "base {:?}, rows {:?}, {} indices",
                    bt.shape(),
                    rt.shape(),
                    indices.len()
                ),
            });
        }
        let c = bt.cols();
        let mut out = bt.data().to_vec();
        let mut seen = vec![false; bt.rows()];
        for (k, &i) in indices.iter().enumerate() {
            assert!(i < bt.rows(), "row_update index {i} out of range");
            assert!(!seen[i], "row_update indices must be unique");
            seen[i] = true;
            out[i * c..(i + 1) * c].copy_from_slice(&rt.data()[k * c..(k + 1) * c]);
        }
        let shape = bt.shape().to_vec();
        let needs = self.needs(base) || self.needs(rows);
        Ok(self.push(
            Op::RowUpdate {
                base,
                rows,
                indices: indices.to_vec(),
            },
            Tensor::from_vec(shape, out)?,
            needs,
        ))
    }

    // ---- backward ----------------------------------------------------------------

    /// Populate gradients of every differentiable node reachable from `loss`.
    /// Each call contributes one unit seed; repeated calls without
    /// `zero_grads` therefore accumulate, as an explicit optimizer contract.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(CoreError::NotScalar {
                context: "backward",
                shape: self.value(loss).shape().to_vec(),
            });
        }
        if !self.nodes[loss.0].needs_grad {
            // Loss does not depend on any differentiable leaf; nothing to do.
            return Ok(());
        }
        // Per-call propagation buffers, folded into persistent grads at the end.
        let mut flows: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        flows[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let grad = match flows[id].as_ref() {
                Some(g) => g.clone(),
                None => continue,
            };
            let flows = &mut flows;
            match &self.nodes[id].op {
                Op::Leaf => {}
                &Op::Add(a, b) => {
                    let kind = self.kind_of(a, b);
                    self.accumulate_into(flows, a, &grad);
                    let gb = self.reduce_for_rhs(kind, a, &grad, 1.0);
                    self.accumulate_into(flows, b, &gb);
                }
                &Op::Sub(a, b) => {
                    let kind = self.kind_of(a, b);
                    self.accumulate_into(flows, a, &grad);
                    let gb = self.reduce_for_rhs(kind, a, &grad, -1.0);
                    self.accumulate_into(flows, b, &gb);
                }
                &Op::Mul(a, b) => {
                    let kind = self.kind_of(a, b);
                    let cols = self.lhs_cols(a);
                    let (av, bv) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                    let ga: Vec<f64> = grad
                        .iter()
                        .enumerate()
                        .map(|(i, &g)| g * bv[rhs_index(kind, i, cols)])
                        .collect();
                    let gb_full: Vec<f64> = grad
                        .iter()
                        .enumerate()
                        .map(|(i, &g)| g * av[i])
                        .collect();
                    let gb = self.reduce_for_rhs(kind, a, &gb_full, 1.0);
                    self.accumulate_into(flows, a, &ga);
                    self.accumulate_into(flows, b, &gb);
                }
                &Op::Div(a, b) => {
                    let kind = self.kind_of(a, b);
                    let cols = self.lhs_cols(a);
                    let (av, bv) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                    let ga: Vec<f64> = grad
                        .iter()
                        .enumerate()
                        .map(|(i, &g)| g / bv[rhs_index(kind, i, cols)])
                        .collect();
                    let gb_full: Vec<f64> = grad
                        .iter()
                        .enumerate()
                        .map(|(i, &g)| {
                            let b_i = bv[rhs_index(kind, i, cols)];
                            -g * av[i] / (b_i * b_i)
                        })
                        .collect();
                    let gb = self.reduce_for_rhs(kind, a, &gb_full, 1.0);
                    self.accumulate_into(flows, a, &ga);
                    self.accumulate_into(flows, b, &gb);
                }
                &Op::AddScalar(a) => {
                    self.accumulate_into(flows, a, &grad);
                }
                &Op::MulScalar(a, c) => {
                    let ga: Vec<f64> = grad.iter().map(|&g| g * c).collect();
                    self.accumulate_into(flows, a, &ga);
                }
                &Op::MatMul(a, b) => {
                    let (m, k) = {
                        let s = self.nodes[a.0].value.shape();
                        (s[0], s[1])
                    };
                    let n = self.nodes[b.0].value.shape()[1];
                    // dA = G @ B^T, dB = A^T @ G
                    let bt = transpose_raw(self.nodes[b.0].value.data(), k, n);
                    let ga = matmul_raw(&grad, &bt, m, n, k);
                    let at = transpose_raw(self.nodes[a.0].value.data(), m, k);
                    let gb = matmul_raw(&at, &grad, k, m, n);
                    self.accumulate_into(flows, a, &ga);
                    self.accumulate_into(flows, b, &gb);
                }
                &Op::Transpose(a) => {
                    let s = self.nodes[id].value.shape();
                    let ga = transpose_raw(&grad, s[0], s[1]);
                    self.accumulate_into(flows, a, &ga);
                }
                &Op::Reshape(a) => {
                    self.accumulate_into(flows, a, &grad);
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let rows = self.nodes[id].value.shape()[0];
                    let total = self.nodes[id].value.shape()[1];
                    let mut offset = 0;
                    for p in parts {
                        let c = self.nodes[p.0].value.cols();
                        let mut gp = vec![0.0; rows * c];
                        for r in 0..rows {
                            gp[r * c..(r + 1) * c]
                                .copy_from_slice(&grad[r * total + offset..r * total + offset + c]);
                        }
                        self.accumulate_into(flows, p, &gp);
                        offset += c;
                    }
                }
                &Op::MeanAxis0(a) => {
                    let (r, c) = {
                        let s = self.nodes[a.0].value.shape();
                        (s[0], s[1])
                    };
                    let mut ga = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] = grad[j] / r as f64;
                        }
                    }
                    self.accumulate_into(flows, a, &ga);
                }
                &Op::SumAll(a) => {
                    let ga = vec![grad[0]; self.nodes[a.0].value.numel()];
                    self.accumulate_into(flows, a, &ga);
                }
                &Op::MeanAll(a) => {
                    let n = self.nodes[a.0].value.numel();
                    let ga = vec![grad[0] / n as f64; n];
                    self.accumulate_into(flows, a, &ga);
                }
                &Op::Relu(a) => {
                    let ga: Vec<f64> = grad
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                        .collect();
                    self.accumulate_into(flows, a, &ga);
                }
                &Op::Sigmoid(a) => {
                    let ga: Vec<f64> = grad
                        .iter()
                        .zip(self.nodes[id].value.data())
                        .map(|(&g, &s)| g * s * (1.0 - s))
                        .collect();
                    self.accumulate_into(flows, a, &ga);
                }
                &Op::Exp(a) => {
                    let ga: Vec<f64> = grad
                        .iter()
                        .zip(self.nodes[id].value.data())
                        .map(|(&g, &e)| g * e)
                        .collect();
                    self.accumulate_into(flows, a, &ga);
                }
                &Op::Log(a) => {
                    let ga: Vec<f64> = grad
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(&g, &x)| g / x)
                        .collect();
                    self.accumulate_into(flows, a, &ga);
                }
                &Op::Clamp(a, lo, hi) => {
                    let ga: Vec<f64> = grad
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(&g, &x)| if x > lo && x < hi { g } else { 0.0 })
                        .collect();
                    self.accumulate_into(flows, a, &ga);
                }
                &Op::SoftmaxRows(a) => {
                    let (r, c) = {
                        let s = self.nodes[id].value.shape();
                        (s[0], s[1])
                    };
                    let y = self.nodes[id].value.data();
                    let mut ga = vec![0.0; r * c];
                    for i in 0..r {
                        let mut dot = 0.0;
                        for j in 0..c {
                            dot += grad[i * c + j] * y[i * c + j];
                        }
                        for j in 0..c {
                            ga[i * c + j] = y[i * c + j] * (grad[i * c + j] - dot);
                        }
                    }
                    self.accumulate_into(flows, a, &ga);
                }
                Op::GatherRows(a, indices) => {
                    let a = *a;
                    let indices = indices.clone();
                    let (r, c) = {
                        let s = self.nodes[a.0].value.shape();
                        (s[0], s[1])
                    };
                    let mut ga = vec![0.0; r * c];
                    for (k, &i) in indices.iter().enumerate() {
                        for j in 0..c {
                            ga[i * c + j] += grad[k * c + j];
                        }
                    }
                    self.accumulate_into(flows, a, &ga);
                }
                Op::RowUpdate {
                    base,
                    rows,
                    indices,
                } => {
                    let (base, rows) = (*base, *rows);
                    let indices = indices.clone();
                    let c = self.nodes[base.0].value.cols();
                    let mut gbase = grad.clone();
                    let mut grows = vec![0.0; indices.len() * c];
                    for (k, &i) in indices.iter().enumerate() {
                        grows[k * c..(k + 1) * c].copy_from_slice(&grad[i * c..(i + 1) * c]);
                        gbase[i * c..(i + 1) * c].fill(0.0);
                    }
                    self.accumulate_into(flows, base, &gbase);
                    self.accumulate_into(flows, rows, &grows);
                }
            }
        }
        for (node, flow) in self.nodes.iter_mut().zip(flows) {
            if let Some(f) = flow {
                let slot = node
                    .grad
                    .get_or_insert_with(|| vec![0.0; node.value.numel()]);
                for (s, x) in slot.iter_mut().zip(f) {
                    *s += x;
                }
            }
        }
        Ok(())
    }

    fn kind_of(&self, a: Var, b: Var) -> Broadcast {
        broadcast_kind("backward", &self.nodes[a.0].value, &self.nodes[b.0].value)
            .expect("validated during forward")
    }

    fn lhs_cols(&self, a: Var) -> usize {
        let t = &self.nodes[a.0].value;
        if t.shape().len() == 2 {
            t.shape()[1]
        } else {
            t.numel()
        }
    }

    /// Fold a full-size gradient down to the rhs operand's shape.
    fn reduce_for_rhs(&self, kind: Broadcast, lhs: Var, grad: &[f64], sign: f64) -> Vec<f64> {
        let cols = self.lhs_cols(lhs);
        match kind {
            Broadcast::Same => grad.iter().map(|&g| sign * g).collect(),
            Broadcast::Scalar => vec![sign * grad.iter().sum::<f64>()],
            Broadcast::ColVec => {
                let rows = grad.len() / cols;
                (0..rows)
                    .map(|i| sign * grad[i * cols..(i + 1) * cols].iter().sum::<f64>())
                    .collect()
            }
            Broadcast::RowVec => {
                let rows = grad.len() / cols;
                (0..cols)
                    .map(|j| sign * (0..rows).map(|i| grad[i * cols + j]).sum::<f64>())
                    .collect()
            }
        }
    }

    fn accumulate_into(&self, flows: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot =
            flows[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
        debug_assert_eq!(slot.len(), g.len());
        for (s, &x) in slot.iter_mut().zip(g) {
            *s += x;
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}
