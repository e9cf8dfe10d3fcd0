//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records primitive ops in forward order; [`Tape::backward`]
//! replays them in reverse, accumulating vector-Jacobian products. Tapes are
//! rebuilt per minibatch — there is no static graph. Node ids are append-only
//! and every op's inputs have smaller ids than its output, so a single
//! reverse sweep visits each node exactly once.
//!
//! Everything is `f64`. In debug builds every forward op checks its output
//! for non-finite values.

use crate::error::{Error, Result};
use crate::tensor::{self, sigmoid, sigmoid_ce, Tensor};

pub type NodeId = usize;

/// Elementwise primitives exposed through [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Exp,
    Log,
    Relu,
    Sigmoid,
    Square,
}

/// Reductions exposed through [`Tape::reduce`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Exp {
        a: NodeId,
    },
    Log {
        a: NodeId,
    },
    Relu {
        a: NodeId,
    },
    Sigmoid {
        a: NodeId,
    },
    Square {
        a: NodeId,
    },
    Scale {
        a: NodeId,
        c: f64,
    },
    AddScalar {
        a: NodeId,
    },
    Clamp {
        a: NodeId,
        lo: f64,
        hi: f64,
    },
    /// `a[m×n] + row[n]`, broadcast over rows (bias add).
    AddRow {
        a: NodeId,
        row: NodeId,
    },
    SliceCols {
        a: NodeId,
        start: usize,
        end: usize,
    },
    ConcatCols {
        a: NodeId,
        b: NodeId,
    },
    Reduce {
        kind: ReduceKind,
        a: NodeId,
        axis: Option<usize>,
    },
    /// Stable fused sigmoid cross entropy against constant targets;
    /// d/dlogit = sigmoid(logit) - target.
    SigmoidCeLogits {
        logits: NodeId,
        targets: Tensor,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients keyed by node id, as produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. the given node, `None` if no gradient
    /// flowed to it.
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Record an input (parameter or constant) node.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        debug_assert!(
            value.all_finite(),
            "non-finite forward value out of {:?}",
            op_name(&op)
        );
        let id = self.nodes.len();
        self.nodes.push(Node { op, value });
        id
    }

    fn binary_shape_check(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    // ── Primitive ops ────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let data = tensor::matmul(va.data(), vb.data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(Op::MatMul { a, b }, value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shape_check("add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add { a, b }, data))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shape_check("sub", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub { a, b }, data))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shape_check("mul", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul { a, b }, data))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(f64::exp);
        Ok(self.push(Op::Exp { a }, value))
    }

    /// Natural log. Inputs must be strictly positive; there is no implicit
    /// clamping here — the fused losses handle saturation instead.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(bad) = self.value(a).data().iter().find(|v| **v <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        let value = self.value(a).map(f64::ln);
        Ok(self.push(Op::Log { a }, value))
    }

    /// ReLU with the subgradient convention relu'(0) = 0.
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|v| v.max(0.0));
        Ok(self.push(Op::Relu { a }, value))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(sigmoid);
        Ok(self.push(Op::Sigmoid { a }, value))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|v| v * v);
        Ok(self.push(Op::Square { a }, value))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let value = self.value(a).map(|v| c * v);
        Ok(self.push(Op::Scale { a, c }, value))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let value = self.value(a).map(|v| v + c);
        Ok(self.push(Op::AddScalar { a }, value))
    }

    /// Clamp to `[lo, hi]`; gradient passes through on the closed interval
    /// and is zero outside.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if lo > hi {
            return Err(Error::InvalidArgument(format!("clamp: lo {lo} > hi {hi}")));
        }
        let value = self.value(a).map(|v| v.clamp(lo, hi));
        Ok(self.push(Op::Clamp { a, lo, hi }, value))
    }

    /// Broadcast a rank-1 bias row over every row of a matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (va, vr) = (self.value(a), self.value(row));
        if va.rank() != 2 || vr.rank() != 1 || va.shape()[1] != vr.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: va.shape().to_vec(),
                right: vr.shape().to_vec(),
            });
        }
        let (m, n) = (va.shape()[0], va.shape()[1]);
        let mut data = va.data().to_vec();
        for i in 0..m {
            for (d, r) in data[i * n..(i + 1) * n].iter_mut().zip(vr.data()) {
                *d += r;
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(Op::AddRow { a, row }, value))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let va = self.value(a);
        if va.rank() != 2 || start > end || end > va.shape()[1] {
            return Err(Error::InvalidArgument(format!(
                "slice_cols {start}..{end} on shape {:?}",
                va.shape()
            )));
        }
        let (m, n) = (va.shape()[0], va.shape()[1]);
        let mut data = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            data.extend_from_slice(&va.data()[i * n + start..i * n + end]);
        }
        let value = Tensor::new(vec![m, end - start], data)?;
        Ok(self.push(Op::SliceCols { a, start, end }, value))
    }

    /// Horizontal concatenation of two matrices with equal row counts.
    /// Zero-width operands are allowed.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[0] != vb.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let (m, na, nb) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut data = Vec::with_capacity(m * (na + nb));
        for i in 0..m {
            data.extend_from_slice(&va.data()[i * na..(i + 1) * na]);
            data.extend_from_slice(&vb.data()[i * nb..(i + 1) * nb]);
        }
        let value = Tensor::new(vec![m, na + nb], data)?;
        Ok(self.push(Op::ConcatCols { a, b }, value))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.reduce(ReduceKind::Sum, a, None)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.reduce(ReduceKind::Mean, a, None)
    }

    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.reduce(ReduceKind::Sum, a, Some(axis))
    }

    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.reduce(ReduceKind::Mean, a, Some(axis))
    }

    /// Sum or mean, over everything (`axis: None`) or along one axis of a
    /// matrix. Gradients broadcast back on the reverse pass.
    pub fn reduce(&mut self, kind: ReduceKind, a: NodeId, axis: Option<usize>) -> Result<NodeId> {
        let va = self.value(a);
        let value = match axis {
            None => {
                let s: f64 = va.data().iter().sum();
                let v = match kind {
                    ReduceKind::Sum => s,
                    ReduceKind::Mean => s / va.numel() as f64,
                };
                Tensor::scalar(v)
            }
            Some(axis) => {
                if axis >= va.rank() {
                    return Err(Error::AxisOutOfRange {
                        op: "reduce",
                        axis,
                        rank: va.rank(),
                    });
                }
                if va.rank() == 1 {
                    // Axis 0 of a vector is the full reduction.
                    let s: f64 = va.data().iter().sum();
                    let v = match kind {
                        ReduceKind::Sum => s,
                        ReduceKind::Mean => s / va.numel() as f64,
                    };
                    Tensor::scalar(v)
                } else {
                    let (m, n) = (va.shape()[0], va.shape()[1]);
                    match axis {
                        0 => {
                            let mut out = vec![0.0; n];
                            for i in 0..m {
                                for (o, v) in out.iter_mut().zip(va.row(i)) {
                                    *o += v;
                                }
                            }
                            if kind == ReduceKind::Mean {
                                out.iter_mut().for_each(|v| *v /= m as f64);
                            }
                            Tensor::vector(out)
                        }
                        _ => {
                            let mut out = vec![0.0; m];
                            for (i, o) in out.iter_mut().enumerate() {
                                *o = va.row(i).iter().sum();
                            }
                            if kind == ReduceKind::Mean {
                                out.iter_mut().for_each(|v| *v /= n as f64);
                            }
                            Tensor::vector(out)
                        }
                    }
                }
            }
        };
        Ok(self.push(Op::Reduce { kind, a, axis }, value))
    }

    /// Elementwise dispatch; binary kinds expect two inputs, unary one.
    pub fn elementwise(&mut self, kind: ElementwiseKind, inputs: &[NodeId]) -> Result<NodeId> {
        use ElementwiseKind::*;
        let arity = match kind {
            Add | Sub | Mul => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::InvalidArgument(format!(
                "elementwise {kind:?} expects {arity} inputs, got {}",
                inputs.len()
            )));
        }
        match kind {
            Add => self.add(inputs[0], inputs[1]),
            Sub => self.sub(inputs[0], inputs[1]),
            Mul => self.mul(inputs[0], inputs[1]),
            Exp => self.exp(inputs[0]),
            Log => self.log(inputs[0]),
            Relu => self.relu(inputs[0]),
            Sigmoid => self.sigmoid(inputs[0]),
            Square => self.square(inputs[0]),
        }
    }

    /// Per-element stable sigmoid cross entropy of logits against constant
    /// targets (targets are not differentiated through).
    pub fn sigmoid_ce_logits(&mut self, logits: NodeId, targets: &Tensor) -> Result<NodeId> {
        let vl = self.value(logits);
        if vl.shape() != targets.shape() {
            return Err(Error::ShapeMismatch {
                op: "sigmoid_ce_logits",
                left: vl.shape().to_vec(),
                right: targets.shape().to_vec(),
            });
        }
        let data: Vec<f64> = vl
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&l, &t)| sigmoid_ce(l, t))
            .collect();
        let value = Tensor::new(vl.shape().to_vec(), data)?;
        Ok(self.push(
            Op::SigmoidCeLogits {
                logits,
                targets: targets.clone(),
            },
            value,
        ))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns the gradient of the loss
    /// with respect to every node a gradient reached.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidArgument("backward on empty tape".into()));
        }
        let vloss = self.value(loss);
        if !vloss.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: vloss.shape().to_vec(),
            });
        }

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss] = Some(vec![1.0]);

        for id in (0..=loss).rev() {
            let g = match adj[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_op(id, &g, &mut adj);
            adj[id] = Some(g);
        }

        let grads = adj
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.map(|data| {
                    Tensor::new(self.nodes[id].value.shape().to_vec(), data)
                        .expect("adjoint shape matches node value")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backward_op(&self, id: NodeId, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                // dA = g · Bᵀ, dB = Aᵀ · g
                let da = tensor::matmul_a_bt(g, vb.data(), m, n, k);
                let db = tensor::matmul_at_b(va.data(), g, m, k, n);
                accumulate(adj, *a, &da);
                accumulate(adj, *b, &db);
            }
            Op::Add { a, b } => {
                accumulate(adj, *a, g);
                accumulate(adj, *b, g);
            }
            Op::Sub { a, b } => {
                accumulate(adj, *a, g);
                accumulate_scaled(adj, *b, g, -1.0, self.value(*b).numel());
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da: Vec<f64> = g.iter().zip(vb.data()).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = g.iter().zip(va.data()).map(|(g, x)| g * x).collect();
                accumulate(adj, *a, &da);
                accumulate(adj, *b, &db);
            }
            Op::Exp { a } => {
                let out = node.value.data();
                let da: Vec<f64> = g.iter().zip(out).map(|(g, y)| g * y).collect();
                accumulate(adj, *a, &da);
            }
            Op::Log { a } => {
                let va = self.value(*a);
                let da: Vec<f64> = g.iter().zip(va.data()).map(|(g, x)| g / x).collect();
                accumulate(adj, *a, &da);
            }
            Op::Relu { a } => {
                let va = self.value(*a);
                let da: Vec<f64> = g
                    .iter()
                    .zip(va.data())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(adj, *a, &da);
            }
            Op::Sigmoid { a } => {
                let out = node.value.data();
                let da: Vec<f64> = g.iter().zip(out).map(|(g, s)| g * s * (1.0 - s)).collect();
                accumulate(adj, *a, &da);
            }
            Op::Square { a } => {
                let va = self.value(*a);
                let da: Vec<f64> = g.iter().zip(va.data()).map(|(g, x)| 2.0 * x * g).collect();
                accumulate(adj, *a, &da);
            }
            Op::Scale { a, c } => {
                accumulate_scaled(adj, *a, g, *c, self.value(*a).numel());
            }
            Op::AddScalar { a } => {
                accumulate(adj, *a, g);
            }
            Op::Clamp { a, lo, hi } => {
                let va = self.value(*a);
                let da: Vec<f64> = g
                    .iter()
                    .zip(va.data())
                    .map(|(g, x)| if *x >= *lo && *x <= *hi { *g } else { 0.0 })
                    .collect();
                accumulate(adj, *a, &da);
            }
            Op::AddRow { a, row } => {
                accumulate(adj, *a, g);
                let n = self.value(*row).numel();
                let m = self.value(*a).shape()[0];
                let mut drow = vec![0.0; n];
                for i in 0..m {
                    for (d, gv) in drow.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                        *d += gv;
                    }
                }
                accumulate(adj, *row, &drow);
            }
            Op::SliceCols { a, start, end } => {
                let va = self.value(*a);
                let (m, n) = (va.shape()[0], va.shape()[1]);
                let w = end - start;
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    da[i * n + start..i * n + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                accumulate(adj, *a, &da);
            }
            Op::ConcatCols { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, na, nb) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                let mut da = vec![0.0; m * na];
                let mut db = vec![0.0; m * nb];
                let w = na + nb;
                for i in 0..m {
                    da[i * na..(i + 1) * na].copy_from_slice(&g[i * w..i * w + na]);
                    db[i * nb..(i + 1) * nb].copy_from_slice(&g[i * w + na..(i + 1) * w]);
                }
                accumulate(adj, *a, &da);
                accumulate(adj, *b, &db);
            }
            Op::Reduce { kind, a, axis } => {
                let va = self.value(*a);
                let numel = va.numel();
                let da = match axis {
                    None => {
                        let scale = match kind {
                            ReduceKind::Sum => 1.0,
                            ReduceKind::Mean => 1.0 / numel as f64,
                        };
                        vec![g[0] * scale; numel]
                    }
                    Some(axis) => {
                        if va.rank() == 1 {
                            let scale = match kind {
                                ReduceKind::Sum => 1.0,
                                ReduceKind::Mean => 1.0 / numel as f64,
                            };
                            vec![g[0] * scale; numel]
                        } else {
                            let (m, n) = (va.shape()[0], va.shape()[1]);
                            let mut da = vec![0.0; m * n];
                            match axis {
                                0 => {
                                    let scale = match kind {
                                        ReduceKind::Sum => 1.0,
                                        ReduceKind::Mean => 1.0 / m as f64,
                                    };
                                    for i in 0..m {
                                        for j in 0..n {
                                            da[i * n + j] = g[j] * scale;
                                        }
                                    }
                                }
                                _ => {
                                    let scale = match kind {
                                        ReduceKind::Sum => 1.0,
                                        ReduceKind::Mean => 1.0 / n as f64,
                                    };
                                    for i in 0..m {
                                        for j in 0..n {
                                            da[i * n + j] = g[i] * scale;
                                        }
                                    }
                                }
                            }
                            da
                        }
                    }
                };
                accumulate(adj, *a, &da);
            }
            Op::SigmoidCeLogits { logits, targets } => {
                let vl = self.value(*logits);
                let da: Vec<f64> = g
                    .iter()
                    .zip(vl.data())
                    .zip(targets.data())
                    .map(|((g, &l), &t)| g * (sigmoid(l) - t))
                    .collect();
                accumulate(adj, *logits, &da);
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], id: NodeId, g: &[f64]) {
    match &mut adj[id] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(g) {
                *e += v;
            }
        }
        None => adj[id] = Some(g.to_vec()),
    }
}

fn accumulate_scaled(adj: &mut [Option<Vec<f64>>], id: NodeId, g: &[f64], c: f64, numel: usize) {
    debug_assert_eq!(g.len(), numel);
    match &mut adj[id] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(g) {
                *e += c * v;
            }
        }
        None => adj[id] = Some(g.iter().map(|v| c * v).collect()),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data: Vec<f64> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes pre-checked")
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul { .. } => "matmul",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::Exp { .. } => "exp",
        Op::Log { .. } => "log",
        Op::Relu { .. } => "relu",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Square { .. } => "square",
        Op::Scale { .. } => "scale",
        Op::AddScalar { .. } => "add_scalar",
        Op::Clamp { .. } => "clamp",
        Op::AddRow { .. } => "add_row",
        Op::SliceCols { .. } => "slice_cols",
        Op::ConcatCols { .. } => "concat_cols",
        Op::Reduce { .. } => "reduce",
        Op::SigmoidCeLogits { .. } => "sigmoid_ce_logits",
    }
}

// ── Gradient checking ────────────────────────────────────────────────

/// Compare reverse-mode gradients against central finite differences
/// `(f(x+h) - f(x-h)) / 2h`, componentwise, and return the worst relative
/// discrepancy (denominator `max(|a|, |b|, 1e-8)`).
///
/// The function is rebuilt on a fresh tape per evaluation, so `f` must be a
/// pure function of its input node. Points within `h` of a non-differentiable
/// kink (relu at 0, clamp at a bound) are the caller's responsibility to
/// avoid; at a kink the reported error is meaningless.
pub fn grad_check<F>(mut f: F, at: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, NodeId) -> Result<NodeId>,
{
    assert!(h > 0.0, "grad_check step must be positive");

    let mut tape = Tape::new();
    let x = tape.leaf(at.clone());
    let loss = f(&mut tape, x)?;
    let grads = tape.backward(loss)?;
    let analytic = match grads.wrt(x) {
        Some(t) => t.data().to_vec(),
        None => vec![0.0; at.numel()],
    };

    let mut eval = |point: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(point.clone());
        let loss = f(&mut tape, x)?;
        Ok(tape.value(loss).item())
    };

    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = at.clone();
        plus.data_mut()[i] += h;
        let mut minus = at.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
