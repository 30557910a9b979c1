//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records one forward pass as a linear tape of operations over an
//! arena of immutable tensors. Calling [`Graph::backward`] replays the tape in
//! reverse, accumulating vector-Jacobian products. Only leaves registered as
//! trainable ever receive a gradient buffer; frozen leaves (backbone weights,
//! input constants) are skipped, which both enforces the frozen contract
//! structurally and avoids wasted work.
//!
//! A graph built in [`Mode::Inference`] records nothing: the ops list stays
//! empty and `backward` is refused. The explain path runs in that mode, so
//! "no gradients at inference" is a checkable property rather than a claim.

use std::sync::Arc;

use super::tensor::{self, BoolMask, Tensor};
use super::NumericsError;

/// Handle to a value in the graph arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Record operations for a later backward pass.
    Train,
    /// Forward only; nothing is taped and backward is an error.
    Inference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeKind {
    TrainableLeaf,
    FrozenLeaf,
    OpOutput,
}

#[derive(Debug, Clone)]
enum Op {
    Matmul { a: ValueId, b: ValueId, out: ValueId },
    MatmulNt { a: ValueId, b: ValueId, out: ValueId },
    Add { a: ValueId, b: ValueId, out: ValueId },
    AddRowBroadcast { a: ValueId, bias: ValueId, out: ValueId },
    Scale { a: ValueId, factor: f64, out: ValueId },
    SoftmaxRows { out: ValueId, input: ValueId },
    Gelu { a: ValueId, out: ValueId },
    LayerNorm { x: ValueId, gamma: ValueId, out: ValueId },
    SliceRows { x: ValueId, start: usize, out: ValueId },
    ConcatRows { parts: Vec<ValueId>, out: ValueId },
    ConcatCols { parts: Vec<ValueId>, out: ValueId },
    MeanRows { x: ValueId, start: usize, rows: usize, out: ValueId },
    PickElement { x: ValueId, index: usize, out: ValueId },
    ColumnMean { x: ValueId, col: usize, out: ValueId },
    CrossEntropy { logits: ValueId, target: usize, out: ValueId },
    SquaredError { pred: ValueId, target: f64, out: ValueId },
}

/// One forward pass: value arena, trainable-leaf markers, recorded ops and
/// (after backward) gradient buffers.
pub struct Graph {
    values: Vec<Arc<Tensor>>,
    kinds: Vec<NodeKind>,
    ops: Vec<Op>,
    grads: Vec<Option<Tensor>>,
    mode: Mode,
}

impl Graph {
    pub fn new(mode: Mode) -> Graph {
        Graph { values: Vec::new(), kinds: Vec::new(), ops: Vec::new(), grads: Vec::new(), mode }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Number of taped operations. Zero for the whole lifetime of an
    /// inference-mode graph.
    pub fn recorded_ops(&self) -> usize {
        self.ops.len()
    }

    /// Number of allocated gradient buffers (zero before backward and always
    /// zero in inference mode).
    pub fn gradient_buffers(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.values[id.0]
    }

    /// Detached copy of a value, handy for recording attention matrices.
    pub fn detach(&self, id: ValueId) -> Tensor {
        (*self.values[id.0]).clone()
    }

    /// Gradient buffer of a node, if one was populated by backward.
    pub fn gradient(&self, id: ValueId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a trainable leaf; zeros if no gradient flowed to it.
    pub fn gradient_or_zeros(&self, id: ValueId) -> Tensor {
        match self.gradient(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.value(id).shape().to_vec()),
        }
    }

    pub fn is_trainable_leaf(&self, id: ValueId) -> bool {
        self.kinds[id.0] == NodeKind::TrainableLeaf
    }

    fn push(&mut self, tensor: Arc<Tensor>, kind: NodeKind) -> ValueId {
        let id = ValueId(self.values.len());
        self.values.push(tensor);
        self.kinds.push(kind);
        id
    }

    /// Register a trainable leaf. The tensor is snapshotted; later mutation of
    /// the caller's copy does not affect this pass.
    pub fn trainable(&mut self, t: &Tensor) -> ValueId {
        self.push(Arc::new(t.clone()), NodeKind::TrainableLeaf)
    }

    /// Register a frozen leaf (backbone weight, constant input). Never
    /// receives a gradient buffer.
    pub fn frozen(&mut self, t: &Tensor) -> ValueId {
        self.push(Arc::new(t.clone()), NodeKind::FrozenLeaf)
    }

    /// Register a frozen leaf without copying the data.
    pub fn frozen_shared(&mut self, t: Arc<Tensor>) -> ValueId {
        self.push(t, NodeKind::FrozenLeaf)
    }

    fn record(&mut self, op: Op) {
        if self.mode == Mode::Train {
            self.ops.push(op);
        }
    }

    fn output(&mut self, t: Tensor) -> ValueId {
        self.push(Arc::new(t), NodeKind::OpOutput)
    }

    // ---- taped operations -------------------------------------------------

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, NumericsError> {
        let t = tensor::matmul(self.value(a), self.value(b))?;
        let out = self.output(t);
        self.record(Op::Matmul { a, b, out });
        Ok(out)
    }

    /// a @ b^T.
    pub fn matmul_nt(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, NumericsError> {
        let t = tensor::matmul_nt(self.value(a), self.value(b))?;
        let out = self.output(t);
        self.record(Op::MatmulNt { a, b, out });
        Ok(out)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, NumericsError> {
        let t = tensor::add(self.value(a), self.value(b))?;
        let out = self.output(t);
        self.record(Op::Add { a, b, out });
        Ok(out)
    }

    pub fn add_row_broadcast(&mut self, a: ValueId, bias: ValueId) -> Result<ValueId, NumericsError> {
        let t = tensor::add_row_broadcast(self.value(a), self.value(bias))?;
        let out = self.output(t);
        self.record(Op::AddRowBroadcast { a, bias, out });
        Ok(out)
    }

    pub fn scale(&mut self, a: ValueId, factor: f64) -> Result<ValueId, NumericsError> {
        let t = tensor::scale(self.value(a), factor)?;
        let out = self.output(t);
        self.record(Op::Scale { a, factor, out });
        Ok(out)
    }

    pub fn softmax_rows(
        &mut self,
        logits: ValueId,
        mask: Option<&BoolMask>,
    ) -> Result<ValueId, NumericsError> {
        let t = tensor::softmax_rows(self.value(logits), mask)?;
        let out = self.output(t);
        // The mask is not needed for the VJP: masked entries have zero
        // probability, which zeroes their gradient term.
        self.record(Op::SoftmaxRows { out, input: logits });
        Ok(out)
    }

    pub fn gelu(&mut self, a: ValueId) -> Result<ValueId, NumericsError> {
        let t = tensor::gelu_tensor(self.value(a))?;
        let out = self.output(t);
        self.record(Op::Gelu { a, out });
        Ok(out)
    }

    pub fn layer_norm(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
    ) -> Result<ValueId, NumericsError> {
        let t = tensor::layer_norm(self.value(x), self.value(gamma), self.value(beta))?;
        let out = self.output(t);
        // Backbone gamma/beta are frozen; only d/dx is ever consumed, so the
        // tape keeps just the input reference.
        self.record(Op::LayerNorm { x, gamma, out });
        Ok(out)
    }

    /// Rows start..start+rows as a new matrix.
    pub fn slice_rows(
        &mut self,
        x: ValueId,
        start: usize,
        rows: usize,
    ) -> Result<ValueId, NumericsError> {
        let src = self.value(x);
        if start + rows > src.rows() {
            return Err(NumericsError::ShapeMismatch(format!(
                "slice_rows: {}..{} of {} rows",
                start,
                start + rows,
                src.rows()
            )));
        }
        let d = src.cols();
        let data = src.data()[start * d..(start + rows) * d].to_vec();
        let t = Tensor::from_vec(vec![rows, d], data)?;
        let out = self.output(t);
        self.record(Op::SliceRows { x, start, out });
        Ok(out)
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[ValueId]) -> Result<ValueId, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::ShapeMismatch("concat_rows: empty".into()));
        }
        let d = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != d {
                return Err(NumericsError::ShapeMismatch(format!(
                    "concat_rows: {} cols vs {}",
                    t.cols(),
                    d
                )));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let t = Tensor::from_vec(vec![rows, d], data)?;
        let out = self.output(t);
        self.record(Op::ConcatRows { parts: parts.to_vec(), out });
        Ok(out)
    }

    /// Stack matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[ValueId]) -> Result<ValueId, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::ShapeMismatch("concat_cols: empty".into()));
        }
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(NumericsError::ShapeMismatch("concat_cols: ragged rows".into()));
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let t = self.value(p);
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(t.row_slice(r));
            }
            offset += w;
        }
        let t = Tensor::from_vec(vec![rows, total], data)?;
        let out = self.output(t);
        self.record(Op::ConcatCols { parts: parts.to_vec(), out });
        Ok(out)
    }

    /// Column-wise mean over rows start..start+rows, producing a 1 x d row.
    pub fn mean_rows(
        &mut self,
        x: ValueId,
        start: usize,
        rows: usize,
    ) -> Result<ValueId, NumericsError> {
        let src = self.value(x);
        if rows == 0 || start + rows > src.rows() {
            return Err(NumericsError::ShapeMismatch(format!(
                "mean_rows: {}..{} of {} rows",
                start,
                start + rows,
                src.rows()
            )));
        }
        let d = src.cols();
        let mut data = vec![0.0; d];
        for r in start..start + rows {
            for (acc, v) in data.iter_mut().zip(src.row_slice(r)) {
                *acc += v;
            }
        }
        for v in &mut data {
            *v /= rows as f64;
        }
        let t = Tensor::from_vec(vec![1, d], data)?;
        let out = self.output(t);
        self.record(Op::MeanRows { x, start, rows, out });
        Ok(out)
    }

    /// One element by flat index, as a 1x1 scalar node.
    pub fn pick(&mut self, x: ValueId, index: usize) -> Result<ValueId, NumericsError> {
        let src = self.value(x);
        if index >= src.numel() {
            return Err(NumericsError::ShapeMismatch(format!(
                "pick: index {index} of {} elements",
                src.numel()
            )));
        }
        let t = Tensor::scalar(src.data()[index]);
        let out = self.output(t);
        self.record(Op::PickElement { x, index, out });
        Ok(out)
    }

    /// Mean over rows of a single column, as a 1x1 scalar node.
    pub fn column_mean(&mut self, x: ValueId, col: usize) -> Result<ValueId, NumericsError> {
        let src = self.value(x);
        if col >= src.cols() {
            return Err(NumericsError::ShapeMismatch(format!(
                "column_mean: column {col} of {}",
                src.cols()
            )));
        }
        let m = src.rows();
        let mean = (0..m).map(|r| src.at(r, col)).sum::<f64>() / m as f64;
        let t = Tensor::scalar(mean);
        let out = self.output(t);
        self.record(Op::ColumnMean { x, col, out });
        Ok(out)
    }

    /// Numerically stable softmax cross-entropy of a (K x 1) logit column
    /// against a class index.
    pub fn cross_entropy(&mut self, logits: ValueId, target: usize) -> Result<ValueId, NumericsError> {
        let src = self.value(logits);
        let k = src.numel();
        if target >= k {
            return Err(NumericsError::ShapeMismatch(format!(
                "cross_entropy: target {target} of {k} classes"
            )));
        }
        let max = src.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = src.data().iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
        let t = Tensor::scalar(log_sum - src.data()[target]);
        let out = self.output(t);
        self.record(Op::CrossEntropy { logits, target, out });
        Ok(out)
    }

    /// (pred - target)^2 for a scalar prediction node.
    pub fn squared_error(&mut self, pred: ValueId, target: f64) -> Result<ValueId, NumericsError> {
        let p = self.value(pred);
        if !p.is_scalar() {
            return Err(NumericsError::ShapeMismatch(format!(
                "squared_error: prediction shape {:?}",
                p.shape()
            )));
        }
        let diff = p.scalar_value() - target;
        let t = Tensor::scalar(diff * diff);
        let out = self.output(t);
        self.record(Op::SquaredError { pred, target, out });
        Ok(out)
    }

    /// Scaled dot-product attention over taped values. Returns (output,
    /// attention); the attention node stays live so losses can differentiate
    /// through it.
    pub fn attention(
        &mut self,
        q: ValueId,
        k: ValueId,
        v: ValueId,
        mask: Option<&BoolMask>,
    ) -> Result<(ValueId, ValueId), NumericsError> {
        let d = self.value(q).cols();
        let scores = self.matmul_nt(q, k)?;
        let scaled = self.scale(scores, 1.0 / (d as f64).sqrt())?;
        let a = self.softmax_rows(scaled, mask)?;
        let out = self.matmul(a, v)?;
        Ok((out, a))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a scalar loss node. Populates gradient buffers for
    /// trainable leaves (and interior nodes the chain rule passes through).
    pub fn backward(&mut self, loss: ValueId) -> Result<(), NumericsError> {
        if self.mode == Mode::Inference {
            return Err(NumericsError::DifferentiationDisabled);
        }
        if !self.value(loss).is_scalar() {
            return Err(NumericsError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        self.grads = vec![None; self.values.len()];
        self.grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..self.ops.len()).rev() {
            let op = self.ops[i].clone();
            self.backward_op(&op);
        }
        Ok(())
    }

    /// Whether a VJP into `id` is worth computing: op outputs always (the
    /// chain continues through them), leaves only when trainable.
    fn wants_grad(&self, id: ValueId) -> bool {
        self.kinds[id.0] != NodeKind::FrozenLeaf
    }

    fn accumulate(&mut self, id: ValueId, delta: Tensor) {
        if !self.wants_grad(id) {
            return;
        }
        match &mut self.grads[id.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn upstream(&self, out: ValueId) -> Option<Tensor> {
        self.grads[out.0].clone()
    }

    fn backward_op(&mut self, op: &Op) {
        match *op {
            Op::Matmul { a, b, out } => {
                if let Some(d_out) = self.upstream(out) {
                    if self.wants_grad(a) {
                        let d_a = tensor::matmul_nt(&d_out, self.value(b)).expect("vjp matmul d_a");
                        self.accumulate(a, d_a);
                    }
                    if self.wants_grad(b) {
                        let d_b = tensor::matmul_tn(self.value(a), &d_out).expect("vjp matmul d_b");
                        self.accumulate(b, d_b);
                    }
                }
            }
            Op::MatmulNt { a, b, out } => {
                if let Some(d_out) = self.upstream(out) {
                    if self.wants_grad(a) {
                        let d_a = tensor::matmul(&d_out, self.value(b)).expect("vjp matmul_nt d_a");
                        self.accumulate(a, d_a);
                    }
                    if self.wants_grad(b) {
                        let d_b = tensor::matmul_tn(&d_out, self.value(a)).expect("vjp matmul_nt d_b");
                        self.accumulate(b, d_b);
                    }
                }
            }
            Op::Add { a, b, out } => {
                if let Some(d_out) = self.upstream(out) {
                    self.accumulate(a, d_out.clone());
                    self.accumulate(b, d_out);
                }
            }
            Op::AddRowBroadcast { a, bias, out } => {
                if let Some(d_out) = self.upstream(out) {
                    if self.wants_grad(bias) {
                        let d = d_out.cols();
                        let mut sums = vec![0.0; d];
                        for r in 0..d_out.rows() {
                            for (s, v) in sums.iter_mut().zip(d_out.row_slice(r)) {
                                *s += v;
                            }
                        }
                        let shape = self.value(bias).shape().to_vec();
                        self.accumulate(bias, Tensor::from_vec(shape, sums).expect("vjp bias"));
                    }
                    self.accumulate(a, d_out);
                }
            }
            Op::Scale { a, factor, out } => {
                if let Some(d_out) = self.upstream(out) {
                    let d_a = tensor::scale(&d_out, factor).expect("vjp scale");
                    self.accumulate(a, d_a);
                }
            }
            Op::SoftmaxRows { out, input } => {
                if let Some(d_out) = self.upstream(out) {
                    // Row-wise: d_z = p .* (d_p - <d_p, p>). Masked entries
                    // have p == 0, so their gradient is exactly zero.
                    let p = self.value(out).clone();
                    let (rows, cols) = (p.rows(), p.cols());
                    let mut d_in = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let prow = p.row_slice(r);
                        let drow = d_out.row_slice(r);
                        let dot: f64 = prow.iter().zip(drow).map(|(x, y)| x * y).sum();
                        for c in 0..cols {
                            d_in[r * cols + c] = prow[c] * (drow[c] - dot);
                        }
                    }
                    self.accumulate(
                        input,
                        Tensor::from_vec(vec![rows, cols], d_in).expect("vjp softmax"),
                    );
                }
            }
            Op::Gelu { a, out } => {
                if let Some(d_out) = self.upstream(out) {
                    let x = self.value(a);
                    let data: Vec<f64> = x
                        .data()
                        .iter()
                        .zip(d_out.data())
                        .map(|(&xi, &di)| di * tensor::gelu_prime(xi))
                        .collect();
                    let shape = x.shape().to_vec();
                    self.accumulate(a, Tensor::from_vec(shape, data).expect("vjp gelu"));
                }
            }
            Op::LayerNorm { x, gamma, out } => {
                if let Some(d_out) = self.upstream(out) {
                    let xin = self.value(x).clone();
                    let g = self.value(gamma).clone();
                    let (rows, d) = (xin.rows(), xin.cols());
                    let mut d_in = vec![0.0; rows * d];
                    for r in 0..rows {
                        let row = xin.row_slice(r);
                        let (mean, rstd) = tensor::row_moments(row);
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * rstd).collect();
                        let dy: Vec<f64> = d_out
                            .row_slice(r)
                            .iter()
                            .zip(g.data())
                            .map(|(dv, gv)| dv * gv)
                            .collect();
                        let mean_dy = dy.iter().sum::<f64>() / d as f64;
                        let mean_dyx = dy.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for c in 0..d {
                            d_in[r * d + c] = rstd * (dy[c] - mean_dy - xhat[c] * mean_dyx);
                        }
                    }
                    self.accumulate(
                        x,
                        Tensor::from_vec(vec![rows, d], d_in).expect("vjp layer_norm"),
                    );
                }
            }
            Op::SliceRows { x, start, out } => {
                if let Some(d_out) = self.upstream(out) {
                    if self.wants_grad(x) {
                        let src = self.value(x);
                        let mut d_in = Tensor::zeros(src.shape().to_vec());
                        let d = src.cols();
                        d_in.data_mut()[start * d..start * d + d_out.numel()]
                            .copy_from_slice(d_out.data());
                        self.accumulate(x, d_in);
                    }
                }
            }
            Op::ConcatRows { ref parts, out } => {
                if let Some(d_out) = self.upstream(out) {
                    let d = d_out.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let slice = d_out.data()[offset * d..(offset + rows) * d].to_vec();
                        offset += rows;
                        if self.wants_grad(p) {
                            self.accumulate(
                                p,
                                Tensor::from_vec(vec![rows, d], slice).expect("vjp concat_rows"),
                            );
                        }
                    }
                }
            }
            Op::ConcatCols { ref parts, out } => {
                if let Some(d_out) = self.upstream(out) {
                    let rows = d_out.rows();
                    let total = d_out.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.wants_grad(p) {
                            let mut data = vec![0.0; rows * w];
                            for r in 0..rows {
                                data[r * w..(r + 1) * w].copy_from_slice(
                                    &d_out.data()[r * total + offset..r * total + offset + w],
                                );
                            }
                            self.accumulate(
                                p,
                                Tensor::from_vec(vec![rows, w], data).expect("vjp concat_cols"),
                            );
                        }
                        offset += w;
                    }
                }
            }
            Op::MeanRows { x, start, rows, out } => {
                if let Some(d_out) = self.upstream(out) {
                    if self.wants_grad(x) {
                        let src = self.value(x);
                        let d = src.cols();
                        let mut d_in = Tensor::zeros(src.shape().to_vec());
                        let w = 1.0 / rows as f64;
                        for r in start..start + rows {
                            for c in 0..d {
                                d_in.data_mut()[r * d + c] = d_out.data()[c] * w;
                            }
                        }
                        self.accumulate(x, d_in);
                    }
                }
            }
            Op::PickElement { x, index, out } => {
                if let Some(d_out) = self.upstream(out) {
                    if self.wants_grad(x) {
                        let mut d_in = Tensor::zeros(self.value(x).shape().to_vec());
                        d_in.data_mut()[index] = d_out.scalar_value();
                        self.accumulate(x, d_in);
                    }
                }
            }
            Op::ColumnMean { x, col, out } => {
                if let Some(d_out) = self.upstream(out) {
                    if self.wants_grad(x) {
                        let src = self.value(x);
                        let (m, n) = (src.rows(), src.cols());
                        let mut d_in = Tensor::zeros(vec![m, n]);
                        let w = d_out.scalar_value() / m as f64;
                        for r in 0..m {
                            d_in.data_mut()[r * n + col] = w;
                        }
                        self.accumulate(x, d_in);
                    }
                }
            }
            Op::CrossEntropy { logits, target, out } => {
                if let Some(d_out) = self.upstream(out) {
                    if self.wants_grad(logits) {
                        let z = self.value(logits);
                        let p = tensor::softmax_rows(
                            &Tensor::row(z.data().to_vec()).expect("ce logits row"),
                            None,
                        )
                        .expect("ce softmax");
                        let s = d_out.scalar_value();
                        let mut data: Vec<f64> = p.data().iter().map(|&v| v * s).collect();
                        data[target] -= s;
                        let shape = z.shape().to_vec();
                        self.accumulate(logits, Tensor::from_vec(shape, data).expect("vjp ce"));
                    }
                }
            }
            Op::SquaredError { pred, target, out } => {
                if let Some(d_out) = self.upstream(out) {
                    let p = self.value(pred).scalar_value();
                    let d = 2.0 * (p - target) * d_out.scalar_value();
                    self.accumulate(pred, Tensor::scalar(d));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn backward_of_sum_is_ones() {
        // loss = sum(x) via matmul with a ones column.
        let mut g = Graph::new(Mode::Train);
        let x = g.trainable(&Tensor::row(vec![1.0, -2.0, 3.0]).unwrap());
        let ones = g.frozen(&Tensor::column(vec![1.0; 3]).unwrap());
        let loss = g.matmul(x, ones).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.gradient(x).unwrap().data(), &[1.0, 1.0, 1.0]);
        assert!(g.gradient(ones).is_none(), "frozen leaf must get no buffer");
    }

    #[test]
    fn backward_of_half_norm_squared_is_x() {
        // loss = 0.5 * x x^T
        let mut g = Graph::new(Mode::Train);
        let x = g.trainable(&Tensor::row(vec![1.5, -0.5, 2.0]).unwrap());
        let sq = g.matmul_nt(x, x).unwrap();
        let loss = g.scale(sq, 0.5).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.gradient(x).unwrap().data(), &[1.5, -0.5, 2.0]);
    }

    #[test]
    fn softmax_cross_entropy_gradient_analytic() {
        // logits [0,0], target 0 -> gradient [-0.5, +0.5]
        let mut g = Graph::new(Mode::Train);
        let z = g.trainable(&Tensor::column(vec![0.0, 0.0]).unwrap());
        let loss = g.cross_entropy(z, 0).unwrap();
        g.backward(loss).unwrap();
        let grad = g.gradient(z).unwrap();
        assert!(close(grad.data()[0], -0.5, 1e-12));
        assert!(close(grad.data()[1], 0.5, 1e-12));
        assert!(close(g.value(loss).scalar_value(), 2.0f64.ln(), 1e-12));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new(Mode::Train);
        let x = g.trainable(&Tensor::row(vec![1.0, 2.0]).unwrap());
        match g.backward(x) {
            Err(NumericsError::NonScalarLoss(shape)) => assert_eq!(shape, vec![1, 2]),
            other => panic!("expected NonScalarLoss, got {other:?}"),
        }
    }

    #[test]
    fn inference_mode_tapes_nothing_and_refuses_backward() {
        let mut g = Graph::new(Mode::Inference);
        let x = g.trainable(&Tensor::row(vec![1.0, 2.0]).unwrap());
        let y = g.matmul_nt(x, x).unwrap();
        assert_eq!(g.recorded_ops(), 0);
        assert_eq!(g.gradient_buffers(), 0);
        assert!(matches!(g.backward(y), Err(NumericsError::DifferentiationDisabled)));
        assert_eq!(g.gradient_buffers(), 0);
    }

    #[test]
    fn gradient_accumulates_over_multiple_uses() {
        // loss = (x @ ones) + (x @ ones) -> d_x = 2
        let mut g = Graph::new(Mode::Train);
        let x = g.trainable(&Tensor::row(vec![4.0]).unwrap());
        let ones = g.frozen(&Tensor::column(vec![1.0]).unwrap());
        let s1 = g.matmul(x, ones).unwrap();
        let s2 = g.matmul(x, ones).unwrap();
        let loss = g.add(s1, s2).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.gradient(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn attention_masked_entries_stay_exactly_zero() {
        let mut g = Graph::new(Mode::Train);
        let q = g.trainable(&Tensor::matrix(3, 2, vec![0.3; 6]).unwrap());
        let k = g.trainable(&Tensor::matrix(3, 2, vec![0.1, 0.7, -0.2, 0.4, 0.9, 0.05]).unwrap());
        let v = g.trainable(&Tensor::matrix(3, 2, vec![1.0; 6]).unwrap());
        let mask = BoolMask::from_fn(3, 3, |r, c| !(r == 0 && c == 2));
        let (_, a) = g.attention(q, k, v, Some(&mask)).unwrap();
        assert_eq!(g.value(a).at(0, 2), 0.0);
        for r in 0..3 {
            let sum: f64 = g.value(a).row_slice(r).iter().sum();
            assert!(close(sum, 1.0, 1e-12));
        }
    }

    #[test]
    fn pick_and_concat_route_gradients() {
        // loss = b[1] with b a 3x1 trainable -> grad [0,1,0]
        let mut g = Graph::new(Mode::Train);
        let b = g.trainable(&Tensor::column(vec![5.0, 6.0, 7.0]).unwrap());
        let picked = g.pick(b, 1).unwrap();
        let stacked = g.concat_rows(&[picked, picked]).unwrap();
        let loss = g.mean_rows(stacked, 0, 2).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.gradient(b).unwrap().data(), &[0.0, 1.0, 0.0]);
    }
}
