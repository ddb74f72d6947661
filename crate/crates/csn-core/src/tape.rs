//! Define-by-run reverse-mode autodiff on a Wengert tape.
//!
//! Every operation computes its value eagerly and records itself on the
//! tape; [`Tape::backward`] replays the records in reverse, accumulating
//! vector-Jacobian products. A fresh tape is built per forward pass, so the
//! graph may freely depend on which attribute head is active.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::math;
use crate::tensor::Tensor;
use crate::Result;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis selector for reductions over rank-2 tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Reduce down the rows (output has one entry per column).
    Rows,
    /// Reduce across the columns (output has one entry per row).
    Cols,
}

/// A recorded operation, referencing its input nodes.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    /// C = A @ B for A: p x q, B: q x r.
    Matmul { a: NodeId, b: NodeId },
    /// X^T for rank-2 X.
    Transpose { x: NodeId },
    /// Valid-padding cross-correlation; input c_in x H x W, kernels c_out x c_in x k x k.
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        stride: usize,
    },
    /// x (c x H x W) plus a per-channel bias (c).
    BiasAddChannels { x: NodeId, bias: NodeId },
    Relu { x: NodeId },
    Add { a: NodeId, b: NodeId },
    /// Sum of any number of same-shape nodes.
    AddN { xs: Vec<NodeId> },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, factor: f64 },
    Neg { x: NodeId },
    Log { x: NodeId },
    /// Row-wise softmax of a rank-2 tensor, max-subtracted for stability.
    SoftmaxRows { x: NodeId },
    /// map (n x d) with each row scaled by weights (n x 1).
    BroadcastMulRows { map: NodeId, weights: NodeId },
    /// Mean over one axis of a rank-2 tensor; output is a column vector.
    MeanOverAxis { x: NodeId, axis: Axis },
    /// Full reduction to a scalar.
    Sum { x: NodeId },
    Reshape { x: NodeId },
    /// Column-wise concatenation of rank-2 tensors with equal row counts.
    ConcatCols { xs: Vec<NodeId> },
    /// -log softmax(logits)[target] for a column vector of logits.
    CrossEntropyLogits { logits: NodeId, target: usize },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only record of one forward pass.
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

    /// Value computed at `id`.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// The operation that produced `id`.
    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    /// Iterate over `(op, value)` pairs in recording order.
    pub fn iter(&self) -> impl Iterator<Item = (&Op, &Tensor)> {
        self.nodes.iter().map(|n| (&n.op, &n.value))
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        debug_assert!(
            value.all_finite(),
            "non-finite value out of {:?}",
            op_name(&op)
        );
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    /// Record an input or parameter tensor.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.is_matrix() || !vb.is_matrix() || va.cols() != vb.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let out = matmul_raw(va, vb);
        Ok(self.push(Op::Matmul { a, b }, out))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if !v.is_matrix() {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                lhs: v.shape().to_vec(),
                rhs: vec![],
            });
        }
        let out = transpose_raw(v);
        Ok(self.push(Op::Transpose { x }, out))
    }

    pub fn conv2d(&mut self, input: NodeId, kernels: NodeId, stride: usize) -> Result<NodeId> {
        let (vi, vk) = (self.value(input), self.value(kernels));
        let ishape = vi.shape().to_vec();
        let kshape = vk.shape().to_vec();
        if ishape.len() != 3 || kshape.len() != 4 || kshape[1] != ishape[0] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: ishape,
                rhs: kshape,
            });
        }
        let (h, w) = (ishape[1], ishape[2]);
        let k = kshape[2];
        if kshape[3] != k || k > h || k > w || stride == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: ishape,
                rhs: kshape,
            });
        }
        let out = conv2d_raw(vi, vk, stride);
        Ok(self.push(
            Op::Conv2d {
                input,
                kernels,
                stride,
            },
            out,
        ))
    }

    pub fn bias_add_channels(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vx.shape().len() != 3 || vb.shape() != [vx.shape()[0]] {
            return Err(Error::ShapeMismatch {
                op: "bias_add_channels",
                lhs: vx.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (c, hw) = (vx.shape()[0], vx.shape()[1] * vx.shape()[2]);
        let mut data = vx.data().to_vec();
        for ch in 0..c {
            let b = vb.data()[ch];
            for v in &mut data[ch * hw..(ch + 1) * hw] {
                *v += b;
            }
        }
        let out = Tensor::from_vec(vx.shape().to_vec(), data)?;
        Ok(self.push(Op::BiasAddChannels { x, bias }, out))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::from_vec(self.value(x).shape().to_vec(), data).expect("same shape");
        self.push(Op::Relu { x }, out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_vec(va.shape().to_vec(), data)?;
        Ok(self.push(Op::Add { a, b }, out))
    }

    pub fn add_n(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = *xs.first().ok_or_else(|| {
            Error::Contract("add_n: empty node list".into())
        })?;
        let shape = self.value(first).shape().to_vec();
        let mut data = self.value(first).data().to_vec();
        for &x in &xs[1..] {
            let v = self.value(x);
            if v.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "add_n",
                    lhs: shape,
                    rhs: v.shape().to_vec(),
                });
            }
            for (acc, y) in data.iter_mut().zip(v.data()) {
                *acc += y;
            }
        }
        let out = Tensor::from_vec(shape, data)?;
        Ok(self.push(Op::AddN { xs: xs.to_vec() }, out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(va.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul { a, b }, out))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let v = self.value(x);
        let data = v.data().iter().map(|&e| e * factor).collect();
        let out = Tensor::from_vec(v.shape().to_vec(), data).expect("same shape");
        self.push(Op::Scale { x, factor }, out)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let data = v.data().iter().map(|&e| -e).collect();
        let out = Tensor::from_vec(v.shape().to_vec(), data).expect("same shape");
        self.push(Op::Neg { x }, out)
    }

    /// Natural log, elementwise. Inputs must be strictly positive.
    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if v.data().iter().any(|&e| e <= 0.0) {
            return Err(Error::Contract("log: non-positive input".into()));
        }
        let data = v.data().iter().map(|&e| math::ln(e)).collect();
        let out = Tensor::from_vec(v.shape().to_vec(), data)?;
        Ok(self.push(Op::Log { x }, out))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if !v.is_matrix() {
            return Err(Error::ShapeMismatch {
                op: "softmax_rows",
                lhs: v.shape().to_vec(),
                rhs: vec![],
            });
        }
        let out = softmax_rows_raw(v);
        Ok(self.push(Op::SoftmaxRows { x }, out))
    }

    pub fn broadcast_mul_rows(&mut self, map: NodeId, weights: NodeId) -> Result<NodeId> {
        let (vm, vw) = (self.value(map), self.value(weights));
        if !vm.is_matrix() || vw.shape() != [vm.rows(), 1] {
            return Err(Error::ShapeMismatch {
                op: "broadcast_mul_rows",
                lhs: vm.shape().to_vec(),
                rhs: vw.shape().to_vec(),
            });
        }
        let (n, d) = (vm.rows(), vm.cols());
        let mut data = Vec::with_capacity(n * d);
        for r in 0..n {
            let w = vw.data()[r];
            for c in 0..d {
                data.push(vm.at2(r, c) * w);
            }
        }
        let out = Tensor::from_vec(vec![n, d], data)?;
        Ok(self.push(Op::BroadcastMulRows { map, weights }, out))
    }

    /// Mean over one axis of a rank-2 tensor, returned as a column vector.
    pub fn mean_over_axis(&mut self, x: NodeId, axis: Axis) -> Result<NodeId> {
        let v = self.value(x);
        if !v.is_matrix() {
            return Err(Error::ShapeMismatch {
                op: "mean_over_axis",
                lhs: v.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (n, m) = (v.rows(), v.cols());
        let out = match axis {
            Axis::Rows => {
                let mut col = vec![0.0; m];
                for r in 0..n {
                    for c in 0..m {
                        col[c] += v.at2(r, c);
                    }
                }
                for e in &mut col {
                    *e /= n as f64;
                }
                Tensor::from_vec(vec![m, 1], col)?
            }
            Axis::Cols => {
                let mut col = vec![0.0; n];
                for r in 0..n {
                    let mut acc = 0.0;
                    for c in 0..m {
                        acc += v.at2(r, c);
                    }
                    col[r] = acc / m as f64;
                }
                Tensor::from_vec(vec![n, 1], col)?
            }
        };
        Ok(self.push(Op::MeanOverAxis { x, axis }, out))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.value(x).data().iter().sum();
        self.push(Op::Sum { x }, Tensor::scalar(total))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let out = self.value(x).reshaped(shape)?;
        Ok(self.push(Op::Reshape { x }, out))
    }

    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = *xs.first().ok_or_else(|| {
            Error::Contract("concat_cols: empty node list".into())
        })?;
        let n = self.value(first).rows();
        let mut total_cols = 0;
        for &x in xs {
            let v = self.value(x);
            if !v.is_matrix() || v.rows() != n {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            total_cols += v.cols();
        }
        let mut data = Vec::with_capacity(n * total_cols);
        for r in 0..n {
            for &x in xs {
                let v = self.value(x);
                for c in 0..v.cols() {
                    data.push(v.at2(r, c));
                }
            }
        }
        let out = Tensor::from_vec(vec![n, total_cols], data)?;
        Ok(self.push(Op::ConcatCols { xs: xs.to_vec() }, out))
    }

    /// Cross-entropy of a column of logits against a class index, computed
    /// via log-sum-exp so no probability is ever materialized and logged.
    pub fn cross_entropy_logits(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let v = self.value(logits);
        if !v.is_matrix() || v.cols() != 1 {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy_logits",
                lhs: v.shape().to_vec(),
                rhs: vec![],
            });
        }
        if target >= v.rows() {
            return Err(Error::Contract(format!(
                "cross_entropy_logits: target {} out of range for {} classes",
                target,
                v.rows()
            )));
        }
        let max = v.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + math::ln(v.data().iter().map(|&l| math::exp(l - max)).sum::<f64>());
        let loss = lse - v.data()[target];
        Ok(self.push(Op::CrossEntropyLogits { logits, target }, Tensor::scalar(loss)))
    }

    /// Reverse pass from a scalar loss node. Gradients of nodes used more
    /// than once are summed.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::from_vec(
            self.value(loss).shape().to_vec(),
            vec![1.0],
        )?);

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_one(&self.nodes[idx].op, &self.nodes[idx].value, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_one(
        &self,
        op: &Op,
        out_value: &Tensor,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                // dA = G B^T, dB = A^T G
                let bt = transpose_raw(vb);
                accumulate(grads, *a, matmul_raw(g, &bt));
                let at = transpose_raw(va);
                accumulate(grads, *b, matmul_raw(&at, g));
            }
            Op::Transpose { x } => {
                accumulate(grads, *x, transpose_raw(g));
            }
            Op::Conv2d {
                input,
                kernels,
                stride,
            } => {
                let (vi, vk) = (self.value(*input), self.value(*kernels));
                let (dinput, dkernels) = conv2d_backward_raw(vi, vk, g, *stride);
                accumulate(grads, *input, dinput);
                accumulate(grads, *kernels, dkernels);
            }
            Op::BiasAddChannels { x, bias } => {
                accumulate(grads, *x, g.clone());
                let (c, hw) = (g.shape()[0], g.shape()[1] * g.shape()[2]);
                let mut db = vec![0.0; c];
                for ch in 0..c {
                    db[ch] = g.data()[ch * hw..(ch + 1) * hw].iter().sum();
                }
                accumulate(grads, *bias, Tensor::from_vec(vec![c], db)?);
            }
            Op::Relu { x } => {
                let vx = self.value(*x);
                let data = vx
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xi, &gi)| if xi > 0.0 { gi } else { 0.0 })
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(vx.shape().to_vec(), data)?);
            }
            Op::Add { a, b } => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddN { xs } => {
                for &x in xs {
                    accumulate(grads, x, g.clone());
                }
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                let db = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                accumulate(grads, *a, Tensor::from_vec(va.shape().to_vec(), da)?);
                accumulate(grads, *b, Tensor::from_vec(vb.shape().to_vec(), db)?);
            }
            Op::Scale { x, factor } => {
                let data = g.data().iter().map(|&e| e * factor).collect();
                accumulate(grads, *x, Tensor::from_vec(g.shape().to_vec(), data)?);
            }
            Op::Neg { x } => {
                let data = g.data().iter().map(|&e| -e).collect();
                accumulate(grads, *x, Tensor::from_vec(g.shape().to_vec(), data)?);
            }
            Op::Log { x } => {
                let vx = self.value(*x);
                let data = g.data().iter().zip(vx.data()).map(|(gi, xi)| gi / xi).collect();
                accumulate(grads, *x, Tensor::from_vec(vx.shape().to_vec(), data)?);
            }
            Op::SoftmaxRows { x } => {
                // dX[r] = s[r] * (G[r] - <G[r], s[r]>)
                let s = out_value;
                let (n, m) = (s.rows(), s.cols());
                let mut data = vec![0.0; n * m];
                for r in 0..n {
                    let mut dot = 0.0;
                    for c in 0..m {
                        dot += g.at2(r, c) * s.at2(r, c);
                    }
                    for c in 0..m {
                        data[r * m + c] = s.at2(r, c) * (g.at2(r, c) - dot);
                    }
                }
                accumulate(grads, *x, Tensor::from_vec(vec![n, m], data)?);
            }
            Op::BroadcastMulRows { map, weights } => {
                let (vm, vw) = (self.value(*map), self.value(*weights));
                let (n, d) = (vm.rows(), vm.cols());
                let mut dmap = vec![0.0; n * d];
                let mut dw = vec![0.0; n];
                for r in 0..n {
                    let w = vw.data()[r];
                    let mut acc = 0.0;
                    for c in 0..d {
                        let gi = g.at2(r, c);
                        dmap[r * d + c] = gi * w;
                        acc += gi * vm.at2(r, c);
                    }
                    dw[r] = acc;
                }
                accumulate(grads, *map, Tensor::from_vec(vec![n, d], dmap)?);
                accumulate(grads, *weights, Tensor::from_vec(vec![n, 1], dw)?);
            }
            Op::MeanOverAxis { x, axis } => {
                let vx = self.value(*x);
                let (n, m) = (vx.rows(), vx.cols());
                let mut data = vec![0.0; n * m];
                match axis {
                    Axis::Rows => {
                        for r in 0..n {
                            for c in 0..m {
                                data[r * m + c] = g.data()[c] / n as f64;
                            }
                        }
                    }
                    Axis::Cols => {
                        for r in 0..n {
                            for c in 0..m {
                                data[r * m + c] = g.data()[r] / m as f64;
                            }
                        }
                    }
                }
                accumulate(grads, *x, Tensor::from_vec(vec![n, m], data)?);
            }
            Op::Sum { x } => {
                let vx = self.value(*x);
                let gv = g.data()[0];
                accumulate(grads, *x, Tensor::filled(vx.shape().to_vec(), gv));
            }
            Op::Reshape { x } => {
                let vx = self.value(*x);
                accumulate(grads, *x, g.reshaped(vx.shape().to_vec())?);
            }
            Op::ConcatCols { xs } => {
                let n = g.rows();
                let mut offset = 0;
                for &x in xs {
                    let v = self.value(x);
                    let m = v.cols();
                    let mut part = Vec::with_capacity(n * m);
                    for r in 0..n {
                        for c in 0..m {
                            part.push(g.at2(r, offset + c));
                        }
                    }
                    accumulate(grads, x, Tensor::from_vec(vec![n, m], part)?);
                    offset += m;
                }
            }
            Op::CrossEntropyLogits { logits, target } => {
                let vl = self.value(*logits);
                let s = softmax_rows_raw(&transpose_raw(vl)); // 1 x k
                let gv = g.data()[0];
                let data = s
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| gv * (p - if i == *target { 1.0 } else { 0.0 }))
                    .collect();
                accumulate(grads, *logits, Tensor::from_vec(vl.shape().to_vec(), data)?);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (acc, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *acc += v;
            }
        }
        slot => *slot = Some(g),
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. the node, if any gradient flowed to it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.index()).and_then(|g| g.as_ref())
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Matmul { .. } => "matmul",
        Op::Transpose { .. } => "transpose",
        Op::Conv2d { .. } => "conv2d",
        Op::BiasAddChannels { .. } => "bias_add_channels",
        Op::Relu { .. } => "relu",
        Op::Add { .. } => "add",
        Op::AddN { .. } => "add_n",
        Op::Mul { .. } => "mul",
        Op::Scale { .. } => "scale",
        Op::Neg { .. } => "neg",
        Op::Log { .. } => "log",
        Op::SoftmaxRows { .. } => "softmax_rows",
        Op::BroadcastMulRows { .. } => "broadcast_mul_rows",
        Op::MeanOverAxis { .. } => "mean_over_axis",
        Op::Sum { .. } => "sum",
        Op::Reshape { .. } => "reshape",
        Op::ConcatCols { .. } => "concat_cols",
        Op::CrossEntropyLogits { .. } => "cross_entropy_logits",
    }
}

// ── Raw kernels shared by forward and backward ───────────────────────

fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (p, q, r) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; p * r];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..p {
        for kk in 0..q {
            let aik = ad[i * q + kk];
            if aik == 0.0 {
                continue;
            }
            let brow = &bd[kk * r..(kk + 1) * r];
            let orow = &mut out[i * r..(i + 1) * r];
            for j in 0..r {
                orow[j] += aik * brow[j];
            }
        }
    }
    Tensor::from_vec(vec![p, r], out).expect("matmul shape")
}

fn transpose_raw(x: &Tensor) -> Tensor {
    let (n, m) = (x.rows(), x.cols());
    let mut out = vec![0.0; n * m];
    for r in 0..n {
        for c in 0..m {
            out[c * n + r] = x.at2(r, c);
        }
    }
    Tensor::from_vec(vec![m, n], out).expect("transpose shape")
}

fn softmax_rows_raw(x: &Tensor) -> Tensor {
    let (n, m) = (x.rows(), x.cols());
    let mut out = vec![0.0; n * m];
    for r in 0..n {
        let row = &x.data()[r * m..(r + 1) * m];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..m {
            let e = math::exp(row[c] - max);
            out[r * m + c] = e;
            sum += e;
        }
        for c in 0..m {
            out[r * m + c] /= sum;
        }
    }
    Tensor::from_vec(vec![n, m], out).expect("softmax shape")
}

fn conv_out_extent(input: usize, k: usize, stride: usize) -> usize {
    (input - k) / stride + 1
}

fn conv2d_raw(input: &Tensor, kernels: &Tensor, stride: usize) -> Tensor {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, k) = (kernels.shape()[0], kernels.shape()[2]);
    let (ho, wo) = (conv_out_extent(h, k, stride), conv_out_extent(w, k, stride));
    let id = input.data();
    let kd = kernels.data();
    let mut out = vec![0.0; c_out * ho * wo];
    for o in 0..c_out {
        for ci in 0..c_in {
            let kbase = (o * c_in + ci) * k * k;
            let ibase = ci * h * w;
            for y in 0..ho {
                for x in 0..wo {
                    let mut acc = 0.0;
                    for dy in 0..k {
                        let irow = ibase + (y * stride + dy) * w + x * stride;
                        let krow = kbase + dy * k;
                        for dx in 0..k {
                            acc += id[irow + dx] * kd[krow + dx];
                        }
                    }
                    out[(o * ho + y) * wo + x] += acc;
                }
            }
        }
    }
    Tensor::from_vec(vec![c_out, ho, wo], out).expect("conv shape")
}

fn conv2d_backward_raw(
    input: &Tensor,
    kernels: &Tensor,
    g: &Tensor,
    stride: usize,
) -> (Tensor, Tensor) {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, k) = (kernels.shape()[0], kernels.shape()[2]);
    let (ho, wo) = (g.shape()[1], g.shape()[2]);
    let id = input.data();
    let kd = kernels.data();
    let gd = g.data();
    let mut dinput = vec![0.0; c_in * h * w];
    let mut dkernels = vec![0.0; c_out * c_in * k * k];
    for o in 0..c_out {
        for ci in 0..c_in {
            let kbase = (o * c_in + ci) * k * k;
            let ibase = ci * h * w;
            for y in 0..ho {
                for x in 0..wo {
                    let gv = gd[(o * ho + y) * wo + x];
                    if gv == 0.0 {
                        continue;
                    }
                    for dy in 0..k {
                        let irow = ibase + (y * stride + dy) * w + x * stride;
                        let krow = kbase + dy * k;
                        for dx in 0..k {
                            dkernels[krow + dx] += gv * id[irow + dx];
                            dinput[irow + dx] += gv * kd[krow + dx];
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::from_vec(vec![c_in, h, w], dinput).expect("conv dinput shape"),
        Tensor::from_vec(vec![c_out, c_in, k, k], dkernels).expect("conv dkernel shape"),
    )
}

// ── Gradient checking against central differences ────────────────────

/// Outcome of checking one parameter tensor.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub ok: bool,
}

/// Central-difference comparison of analytic gradients, one entry per
/// parameter tensor. Failures are reported, not raised.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn all_ok(&self) -> bool {
        self.entries.iter().all(|e| e.ok)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_err)
            .fold(0.0, f64::max)
    }
}

/// Compare `analytic` gradients of `f` at `params` against central
/// differences with step `h`. Relative error uses a `max(|a|,|b|,1e-8)`
/// denominator so both near-zero gradients count as agreeing.
pub fn gradient_check<F>(
    mut f: F,
    params: &[Tensor],
    analytic: &[Tensor],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(Error::Contract(format!(
            "gradient_check: {} params but {} analytic gradients",
            params.len(),
            analytic.len()
        )));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut entries = Vec::with_capacity(params.len());
    for (pi, grad) in analytic.iter().enumerate() {
        if grad.shape() != params[pi].shape() {
            return Err(Error::ShapeMismatch {
                op: "gradient_check",
                lhs: params[pi].shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        let mut max_rel = 0.0;
        let mut worst = 0;
        for i in 0..params[pi].numel() {
            let orig = work[pi].data()[i];
            work[pi].data_mut()[i] = orig + h;
            let fp = f(&work)?;
            work[pi].data_mut()[i] = orig - h;
            let fm = f(&work)?;
            work[pi].data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = grad.data()[i];
            let rel = math::abs(a - numeric) / math::abs(a).max(math::abs(numeric)).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
                worst = i;
            }
        }
        entries.push(GradCheckEntry {
            max_rel_err: max_rel,
            worst_coord: worst,
            ok: max_rel < tol,
        });
    }
    Ok(GradCheckReport { entries, tol })
}
