//! Reverse-mode automatic differentiation on an append-only op tape.
//!
//! A [`Graph`] owns a flat arena of nodes; every op appends one node whose
//! inputs point at earlier indices, so the arena order is already a
//! topological order and [`Graph::backward`] is a single reverse sweep.
//! Graphs are cheap and throwaway: the trainer builds one per example and
//! reads gradients off the parameter nodes afterwards.
//!
//! All reductions run in a fixed left-to-right order, so repeated runs over
//! identical inputs produce bit-identical values and gradients.

use crate::Scalar;

/// Dense row-major matrix. Vectors are 1xN or Nx1; scalars are 1x1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data does not match {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn scalar(v: T) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// The single element of a 1x1 tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on a {}x{} tensor", self.rows, self.cols);
        self.data[0]
    }

    /// self += other * factor.
    pub fn add_scaled(&mut self, other: &Tensor<T>, factor: T) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b * factor;
        }
    }
}

/// C = A * B with an i-k-j loop so the inner traversal is row-contiguous.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.cols, b.rows, "matmul {}x{} * {}x{}", a.rows, a.cols, b.rows, b.cols);
    let mut c = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let c_row = &mut c.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == T::zero() {
                continue;
            }
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (cj, bj) in c_row.iter_mut().zip(b_row) {
                *cj += aik * *bj;
            }
        }
    }
    c
}

/// C = A^T * B.
pub fn matmul_ta<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.rows, b.rows, "matmul_ta {}x{} ^T * {}x{}", a.rows, a.cols, b.rows, b.cols);
    let mut c = Tensor::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let a_row = &a.data[k * a.cols..(k + 1) * a.cols];
        let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
        for (i, &aki) in a_row.iter().enumerate() {
            if aki == T::zero() {
                continue;
            }
            let c_row = &mut c.data[i * b.cols..(i + 1) * b.cols];
            for (cj, bj) in c_row.iter_mut().zip(b_row) {
                *cj += aki * *bj;
            }
        }
    }
    c
}

/// C = A * B^T.
pub fn matmul_tb<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.cols, b.cols, "matmul_tb {}x{} * {}x{} ^T", a.rows, a.cols, b.rows, b.cols);
    let mut c = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = &a.data[i * a.cols..(i + 1) * a.cols];
        for j in 0..b.rows {
            let b_row = &b.data[j * b.cols..(j + 1) * b.cols];
            let mut acc = T::zero();
            for (av, bv) in a_row.iter().zip(b_row) {
                acc += *av * *bv;
            }
            c.data[i * b.rows + j] = acc;
        }
    }
    c
}

const GELU_COEF: f64 = 0.044_715;

fn gelu_value<T: Scalar>(x: T) -> T {
    let half = T::from_f(0.5);
    let c = T::from_f(GELU_COEF);
    let s = T::from_f((2.0 / std::f64::consts::PI).sqrt());
    let u = s * (x + c * x * x * x);
    half * x * (T::one() + u.tanh())
}

fn gelu_derivative<T: Scalar>(x: T) -> T {
    let half = T::from_f(0.5);
    let c = T::from_f(GELU_COEF);
    let s = T::from_f((2.0 / std::f64::consts::PI).sqrt());
    let u = s * (x + c * x * x * x);
    let t = u.tanh();
    let du = s * (T::one() + T::from_f(3.0 * GELU_COEF) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

/// Probabilities inside binary cross-entropy are clamped to
/// [CLIP, 1 - CLIP] before the logs.
pub const BCE_PROB_CLIP: f64 = 1e-7;

#[derive(Debug, Clone)]
enum Op<T> {
    /// Constant input; no gradient.
    Leaf,
    /// Trainable input; gradient collected.
    Param,
    /// a * b
    MatMul,
    /// a * b^T
    MatMulTB,
    /// a + b, same shape
    Add,
    /// matrix + row vector broadcast over rows
    AddRow,
    /// elementwise a * b, same shape
    Mul,
    /// a * constant
    Scale(T),
    Gelu,
    Sigmoid,
    /// row-wise softmax
    SoftmaxRows,
    /// per-row normalization: gamma * (x - mean) / sqrt(var + eps) + beta
    LayerNorm { eps: T },
    /// columns [start, start + width) of the input
    SliceCols { start: usize, width: usize },
    /// horizontal concatenation of all inputs
    ConcatCols,
    /// rows of the input selected by index, in order (repeats allowed)
    GatherRows { indices: Vec<usize> },
    /// same data reinterpreted row-major under a new shape
    Reshape,
    /// width-2 convolution over rows: y_t = [x_t ; x_{t+1}] * w, zero-padded
    /// at the end so the output keeps the input's row count
    Conv1dK2,
    /// sum of all elements -> 1x1
    Sum,
    /// mean negative log-likelihood of `targets` under row-wise softmax of
    /// the logits, skipping rows whose target is `pad_id` -> 1x1
    CrossEntropy { targets: Vec<usize>, pad_id: usize },
    /// mean binary cross-entropy of probabilities (input 0) against constant
    /// targets (input 1), probabilities clamped -> 1x1
    Bce,
}

struct Node<T> {
    op: Op<T>,
    inputs: Vec<NodeId>,
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    needs_grad: bool,
}

/// Index of a node in its graph's arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Append-only op tape. See the module docs.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last [`Graph::backward`] root with respect to this
    /// node. None if the node was not reached or does not need gradients.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<NodeId>, value: Tensor<T>) -> NodeId {
        let needs_grad = matches!(op, Op::Param)
            || inputs.iter().any(|&i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { op, inputs, value, grad: None, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input node.
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Leaf, vec![], value)
    }

    /// Trainable input node; [`Graph::grad`] is populated after backward.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Param, vec![], value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = matmul(self.value(a), self.value(b));
        self.push(Op::MatMul, vec![a, b], value)
    }

    pub fn matmul_tb(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = matmul_tb(self.value(a), self.value(b));
        self.push(Op::MatMulTB, vec![a, b], value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols), "add shape mismatch");
        let mut value = va.clone();
        for (x, y) in value.data.iter_mut().zip(&vb.data) {
            *x += *y;
        }
        self.push(Op::Add, vec![a, b], value)
    }

    /// matrix + row vector, the row broadcast over every matrix row.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.rows, 1, "add_row expects a 1xN row vector");
        assert_eq!(va.cols, vr.cols, "add_row width mismatch");
        let mut value = va.clone();
        for r in 0..value.rows {
            for c in 0..value.cols {
                value.data[r * value.cols + c] += vr.data[c];
            }
        }
        self.push(Op::AddRow, vec![a, row], value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols), "mul shape mismatch");
        let mut value = va.clone();
        for (x, y) in value.data.iter_mut().zip(&vb.data) {
            *x *= *y;
        }
        self.push(Op::Mul, vec![a, b], value)
    }

    pub fn scale(&mut self, a: NodeId, factor: T) -> NodeId {
        let mut value = self.value(a).clone();
        for x in value.data.iter_mut() {
            *x *= factor;
        }
        self.push(Op::Scale(factor), vec![a], value)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        for x in value.data.iter_mut() {
            *x = gelu_value(*x);
        }
        self.push(Op::Gelu, vec![a], value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        for x in value.data.iter_mut() {
            *x = T::one() / (T::one() + (-*x).exp());
        }
        self.push(Op::Sigmoid, vec![a], value)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let mut value = va.clone();
        for r in 0..value.rows {
            let row = &mut value.data[r * value.cols..(r + 1) * value.cols];
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        self.push(Op::SoftmaxRows, vec![a], value)
    }

    /// Per-row layer normalization with learned gain and bias (both 1xC).
    pub fn layer_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId, eps: T) -> NodeId {
        let (va, vg, vb) = (self.value(a), self.value(gamma), self.value(beta));
        assert_eq!(vg.rows, 1, "layer_norm gain must be 1xC");
        assert_eq!(vb.rows, 1, "layer_norm bias must be 1xC");
        assert_eq!(va.cols, vg.cols, "layer_norm gain width mismatch");
        assert_eq!(va.cols, vb.cols, "layer_norm bias width mismatch");
        let mut value = va.clone();
        let stats = layer_norm_stats(va, eps);
        for r in 0..value.rows {
            let (mean, inv_std) = stats[r];
            for c in 0..value.cols {
                let xhat = (va.data[r * va.cols + c] - mean) * inv_std;
                value.data[r * va.cols + c] = vg.data[c] * xhat + vb.data[c];
            }
        }
        self.push(Op::LayerNorm { eps }, vec![a, gamma, beta], value)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, width: usize) -> NodeId {
        let va = self.value(a);
        assert!(start + width <= va.cols, "slice_cols out of range");
        let mut data = Vec::with_capacity(va.rows * width);
        for r in 0..va.rows {
            data.extend_from_slice(&va.data[r * va.cols + start..r * va.cols + start + width]);
        }
        let value = Tensor::from_vec(va.rows, width, data);
        self.push(Op::SliceCols { start, width }, vec![a], value)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols needs at least one input");
        let rows = self.value(parts[0]).rows;
        let total: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let vp = self.value(p);
                assert_eq!(vp.rows, rows, "concat_cols row mismatch");
                data.extend_from_slice(vp.row(r));
            }
        }
        let value = Tensor::from_vec(rows, total, data);
        self.push(Op::ConcatCols, parts.to_vec(), value)
    }

    /// Select rows by index, in order; an index may repeat.
    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> NodeId {
        let va = self.value(a);
        let mut data = Vec::with_capacity(indices.len() * va.cols);
        for &i in indices {
            assert!(i < va.rows, "gather_rows index {i} out of {} rows", va.rows);
            data.extend_from_slice(va.row(i));
        }
        let value = Tensor::from_vec(indices.len(), va.cols, data);
        self.push(Op::GatherRows { indices: indices.to_vec() }, vec![a], value)
    }

    /// Reinterpret the row-major data under a new shape of the same size.
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let va = self.value(a);
        assert_eq!(va.len(), rows * cols, "reshape must keep the element count");
        let value = Tensor::from_vec(rows, cols, va.data.clone());
        self.push(Op::Reshape, vec![a], value)
    }

    /// Width-2 convolution along rows (time): y_t = [x_t ; x_{t+1}] * w,
    /// where w is (2*C_in)xC_out and the final step pads x_{rows} with zeros.
    pub fn conv1d_k2(&mut self, x: NodeId, w: NodeId) -> NodeId {
        let (vx, vw) = (self.value(x), self.value(w));
        assert_eq!(vw.rows, 2 * vx.cols, "conv1d_k2 weight must be (2*C_in)xC_out");
        let (rows, c_in, c_out) = (vx.rows, vx.cols, vw.cols);
        let mut value = Tensor::zeros(rows, c_out);
        for t in 0..rows {
            let out = &mut value.data[t * c_out..(t + 1) * c_out];
            for k in 0..2 * c_in {
                let (tap, channel) = (k / c_in, k % c_in);
                if t + tap >= rows {
                    continue;
                }
                let xv = vx.data[(t + tap) * c_in + channel];
                if xv == T::zero() {
                    continue;
                }
                let w_row = &vw.data[k * c_out..(k + 1) * c_out];
                for (o, wv) in out.iter_mut().zip(w_row) {
                    *o += xv * *wv;
                }
            }
        }
        self.push(Op::Conv1dK2, vec![x, w], value)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let mut acc = T::zero();
        for &x in &self.value(a).data {
            acc += x;
        }
        self.push(Op::Sum, vec![a], Tensor::scalar(acc))
    }

    /// Mean negative log-likelihood of the target ids under a row-wise
    /// softmax of the logits. Rows whose target equals `pad_id` are skipped;
    /// the mean divides by the number of scored rows.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], pad_id: usize) -> NodeId {
        let vl = self.value(logits);
        assert_eq!(vl.rows, targets.len(), "one target per logits row");
        let mut total = T::zero();
        let mut scored = 0usize;
        for (r, &t) in targets.iter().enumerate() {
            if t == pad_id {
                continue;
            }
            assert!(t < vl.cols, "target id {t} outside vocabulary of {}", vl.cols);
            let row = vl.row(r);
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for &x in row {
                sum += (x - max).exp();
            }
            total += sum.ln() + max - row[t];
            scored += 1;
        }
        assert!(scored > 0, "cross_entropy needs at least one non-pad target");
        let value = Tensor::scalar(total / T::from_f(scored as f64));
        self.push(Op::CrossEntropy { targets: targets.to_vec(), pad_id }, vec![logits], value)
    }

    /// Mean binary cross-entropy of probabilities against constant targets
    /// of the same shape. Probabilities are clamped to
    /// [`BCE_PROB_CLIP`, 1 - `BCE_PROB_CLIP`]; clamped elements get zero
    /// gradient.
    pub fn bce(&mut self, probs: NodeId, targets: NodeId) -> NodeId {
        let (vp, vt) = (self.value(probs), self.value(targets));
        assert_eq!((vp.rows, vp.cols), (vt.rows, vt.cols), "bce shape mismatch");
        assert!(!vp.is_empty(), "bce on an empty tensor");
        let (lo, hi) = (T::from_f(BCE_PROB_CLIP), T::from_f(1.0 - BCE_PROB_CLIP));
        let mut total = T::zero();
        for (&p, &y) in vp.data.iter().zip(&vt.data) {
            let p = p.max(lo).min(hi);
            total += -(y * p.ln() + (T::one() - y) * (T::one() - p).ln());
        }
        let value = Tensor::scalar(total / T::from_f(vp.data.len() as f64));
        self.push(Op::Bce, vec![probs, targets], value)
    }

    /// Reverse sweep from a scalar root. Seeds d(root)/d(root) = 1 and
    /// accumulates gradients into every reachable node that needs them.
    pub fn backward(&mut self, root: NodeId) {
        {
            let rv = &self.nodes[root.0].value;
            assert_eq!((rv.rows, rv.cols), (1, 1), "backward root must be scalar");
        }
        for node in self.nodes.iter_mut() {
            node.grad = None;
        }
        self.nodes[root.0].grad = Some(Tensor::scalar(T::one()));
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad || self.nodes[idx].grad.is_none() {
                continue;
            }
            let grad = self.nodes[idx].grad.clone().unwrap();
            let op = self.nodes[idx].op.clone();
            let inputs = self.nodes[idx].inputs.clone();
            self.propagate(idx, &op, &inputs, &grad);
        }
    }

    fn accumulate(&mut self, id: NodeId, delta: Tensor<T>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut self.nodes[id.0].grad {
            Some(g) => g.add_scaled(&delta, T::one()),
            slot => {
                *slot = Some(delta);
            }
        }
    }

    fn propagate(&mut self, idx: usize, op: &Op<T>, inputs: &[NodeId], grad: &Tensor<T>) {
        match op {
            Op::Leaf | Op::Param => {}
            Op::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                let da = matmul_tb(grad, self.value(b));
                let db = matmul_ta(self.value(a), grad);
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::MatMulTB => {
                let (a, b) = (inputs[0], inputs[1]);
                let da = matmul(grad, self.value(b));
                let db = matmul_ta(grad, self.value(a));
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Add => {
                self.accumulate(inputs[0], grad.clone());
                self.accumulate(inputs[1], grad.clone());
            }
            Op::AddRow => {
                self.accumulate(inputs[0], grad.clone());
                let mut drow = Tensor::zeros(1, grad.cols);
                for r in 0..grad.rows {
                    for c in 0..grad.cols {
                        drow.data[c] += grad.data[r * grad.cols + c];
                    }
                }
                self.accumulate(inputs[1], drow);
            }
            Op::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                let mut da = grad.clone();
                for (x, y) in da.data.iter_mut().zip(&self.value(b).data) {
                    *x *= *y;
                }
                let mut db = grad.clone();
                for (x, y) in db.data.iter_mut().zip(&self.value(a).data) {
                    *x *= *y;
                }
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Scale(factor) => {
                let mut da = grad.clone();
                for x in da.data.iter_mut() {
                    *x *= *factor;
                }
                self.accumulate(inputs[0], da);
            }
            Op::Gelu => {
                let mut da = grad.clone();
                for (g, &x) in da.data.iter_mut().zip(&self.value(inputs[0]).data) {
                    *g *= gelu_derivative(x);
                }
                self.accumulate(inputs[0], da);
            }
            Op::Sigmoid => {
                let mut da = grad.clone();
                for (g, &y) in da.data.iter_mut().zip(&self.nodes[idx].value.data) {
                    *g *= y * (T::one() - y);
                }
                self.accumulate(inputs[0], da);
            }
            Op::SoftmaxRows => {
                let y = &self.nodes[idx].value;
                let mut da = Tensor::zeros(grad.rows, grad.cols);
                for r in 0..grad.rows {
                    let yr = y.row(r);
                    let gr = grad.row(r);
                    let mut dot = T::zero();
                    for (yv, gv) in yr.iter().zip(gr) {
                        dot += *yv * *gv;
                    }
                    for c in 0..grad.cols {
                        da.data[r * grad.cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                self.accumulate(inputs[0], da);
            }
            Op::LayerNorm { eps } => {
                let (x_id, gamma_id, beta_id) = (inputs[0], inputs[1], inputs[2]);
                let x = self.value(x_id).clone();
                let gamma = self.value(gamma_id).clone();
                let stats = layer_norm_stats(&x, *eps);
                let cols_t = T::from_f(x.cols as f64);
                let mut dx = Tensor::zeros(x.rows, x.cols);
                let mut dgamma = Tensor::zeros(1, x.cols);
                let mut dbeta = Tensor::zeros(1, x.cols);
                for r in 0..x.rows {
                    let (mean, inv_std) = stats[r];
                    // Accumulate the two row-level reductions first.
                    let mut sum_gy = T::zero();
                    let mut sum_gy_xhat = T::zero();
                    for c in 0..x.cols {
                        let xhat = (x.data[r * x.cols + c] - mean) * inv_std;
                        let gy = grad.data[r * x.cols + c] * gamma.data[c];
                        sum_gy += gy;
                        sum_gy_xhat += gy * xhat;
                        dgamma.data[c] += grad.data[r * x.cols + c] * xhat;
                        dbeta.data[c] += grad.data[r * x.cols + c];
                    }
                    for c in 0..x.cols {
                        let xhat = (x.data[r * x.cols + c] - mean) * inv_std;
                        let gy = grad.data[r * x.cols + c] * gamma.data[c];
                        dx.data[r * x.cols + c] =
                            inv_std * (gy - (sum_gy + xhat * sum_gy_xhat) / cols_t);
                    }
                }
                self.accumulate(x_id, dx);
                self.accumulate(gamma_id, dgamma);
                self.accumulate(beta_id, dbeta);
            }
            Op::SliceCols { start, width } => {
                let va = self.value(inputs[0]);
                let mut da = Tensor::zeros(va.rows, va.cols);
                for r in 0..grad.rows {
                    for c in 0..*width {
                        da.data[r * da.cols + start + c] = grad.data[r * width + c];
                    }
                }
                self.accumulate(inputs[0], da);
            }
            Op::ConcatCols => {
                let mut offset = 0usize;
                for &part in inputs {
                    let vp = self.value(part);
                    let (rows, cols) = (vp.rows, vp.cols);
                    let mut dp = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            dp.data[r * cols + c] = grad.data[r * grad.cols + offset + c];
                        }
                    }
                    offset += cols;
                    self.accumulate(part, dp);
                }
            }
            Op::GatherRows { indices } => {
                let va = self.value(inputs[0]);
                let mut da = Tensor::zeros(va.rows, va.cols);
                for (out_r, &src_r) in indices.iter().enumerate() {
                    for c in 0..va.cols {
                        da.data[src_r * da.cols + c] += grad.data[out_r * grad.cols + c];
                    }
                }
                self.accumulate(inputs[0], da);
            }
            Op::Reshape => {
                let va = self.value(inputs[0]);
                let da = Tensor::from_vec(va.rows, va.cols, grad.data.clone());
                self.accumulate(inputs[0], da);
            }
            Op::Conv1dK2 => {
                let (x_id, w_id) = (inputs[0], inputs[1]);
                let x = self.value(x_id).clone();
                let w = self.value(w_id).clone();
                let (rows, c_in, c_out) = (x.rows, x.cols, w.cols);
                let mut dx = Tensor::zeros(rows, c_in);
                let mut dw = Tensor::zeros(2 * c_in, c_out);
                for t in 0..rows {
                    let g_row = grad.row(t);
                    for k in 0..2 * c_in {
                        let (tap, channel) = (k / c_in, k % c_in);
                        if t + tap >= rows {
                            continue;
                        }
                        let w_row = &w.data[k * c_out..(k + 1) * c_out];
                        let mut acc = T::zero();
                        for (gv, wv) in g_row.iter().zip(w_row) {
                            acc += *gv * *wv;
                        }
                        dx.data[(t + tap) * c_in + channel] += acc;
                        let xv = x.data[(t + tap) * c_in + channel];
                        let dw_row = &mut dw.data[k * c_out..(k + 1) * c_out];
                        for (dwv, gv) in dw_row.iter_mut().zip(g_row) {
                            *dwv += xv * *gv;
                        }
                    }
                }
                self.accumulate(x_id, dx);
                self.accumulate(w_id, dw);
            }
            Op::Sum => {
                let va = self.value(inputs[0]);
                let g = grad.item();
                let da = Tensor::from_vec(va.rows, va.cols, vec![g; va.len()]);
                self.accumulate(inputs[0], da);
            }
            Op::CrossEntropy { targets, pad_id } => {
                let logits = self.value(inputs[0]).clone();
                let scored = targets.iter().filter(|&&t| t != *pad_id).count();
                let scale = grad.item() / T::from_f(scored as f64);
                let mut da = Tensor::zeros(logits.rows, logits.cols);
                for (r, &t) in targets.iter().enumerate() {
                    if t == *pad_id {
                        continue;
                    }
                    let row = logits.row(r);
                    let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
                    let mut sum = T::zero();
                    for &x in row {
                        sum += (x - max).exp();
                    }
                    for c in 0..logits.cols {
                        let p = (row[c] - max).exp() / sum;
                        let indicator = if c == t { T::one() } else { T::zero() };
                        da.data[r * logits.cols + c] = (p - indicator) * scale;
                    }
                }
                self.accumulate(inputs[0], da);
            }
            Op::Bce => {
                let (p_id, t_id) = (inputs[0], inputs[1]);
                let vp = self.value(p_id).clone();
                let vt = self.value(t_id).clone();
                let (lo, hi) = (T::from_f(BCE_PROB_CLIP), T::from_f(1.0 - BCE_PROB_CLIP));
                let scale = grad.item() / T::from_f(vp.len() as f64);
                let mut dp = Tensor::zeros(vp.rows, vp.cols);
                for i in 0..vp.len() {
                    let p = vp.data[i];
                    if p < lo || p > hi {
                        continue; // clamped: locally flat
                    }
                    let y = vt.data[i];
                    dp.data[i] = scale * (p - y) / (p * (T::one() - p));
                }
                self.accumulate(p_id, dp);
            }
        }
    }
}

fn layer_norm_stats<T: Scalar>(x: &Tensor<T>, eps: T) -> Vec<(T, T)> {
    let cols_t = T::from_f(x.cols as f64);
    (0..x.rows)
        .map(|r| {
            let row = x.row(r);
            let mut mean = T::zero();
            for &v in row {
                mean += v;
            }
            mean /= cols_t;
            let mut var = T::zero();
            for &v in row {
                var += (v - mean) * (v - mean);
            }
            var /= cols_t;
            (mean, T::one() / (var + eps).sqrt())
        })
        .collect()
}

/// Central-difference gradient of `f` at `x`: (f(x+h) - f(x-h)) / 2h per
/// coordinate. `f` must be a pure function of the slice it is handed.
pub fn numeric_gradient<T: Scalar>(
    mut f: impl FnMut(&[T]) -> T,
    x: &[T],
    step: T,
) -> Vec<T> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let original = probe[i];
        probe[i] = original + step;
        let plus = f(&probe);
        probe[i] = original - step;
        let minus = f(&probe);
        probe[i] = original;
        grad.push((plus - minus) / (step + step));
    }
    grad
}
