//! Reverse-mode differentiation over dense 2-D tensors.
//!
//! A [`Tape`] records one forward computation as a flat list of nodes; each
//! node owns its value, the op that produced it, and (after `backward`) a
//! gradient of the same shape. The op set is exactly what the detection
//! model needs — matrix products, affine layers, ReLU/sigmoid, hypergraph
//! propagation, per-edge mean pooling, and the three losses — nothing more.
//!
//! Every forward op checks its output for NaN/Inf and fails hard with
//! [`AutodiffError::NonFinite`]; the trainer surfaces that as a diverged
//! run rather than letting garbage propagate.

use std::rc::Rc;

use thiserror::Error;

use crate::hypergraph::PropagationStructure;
use crate::tensor::{lane_dot, Tensor};

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch { op: &'static str, expected: (usize, usize), got: (usize, usize) },
    #[error("mean_pool_rows: group {group} is empty")]
    EmptyGroup { group: usize },
    #[error("info_nce: batch size {size} is too small, need at least 2 rows")]
    BatchTooSmall { size: usize },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

enum Op {
    Leaf,
    MatMul { a: ValueId, b: ValueId },
    Affine { x: ValueId, w: ValueId, b: ValueId },
    Relu { x: ValueId },
    Sigmoid { x: ValueId },
    Add { a: ValueId, b: ValueId },
    Scale { a: ValueId, c: f64 },
    ConcatCols { a: ValueId, b: ValueId },
    /// Σ_ij a_ij · c_ij, a fixed-coefficient scalar readout (test harnesses
    /// use it to turn matrix-valued ops into checkable scalars).
    Inner { a: ValueId, c: Rc<Tensor> },
    MeanPoolRows { z: ValueId, groups: Rc<Vec<Vec<usize>>> },
    Propagate { z: ValueId, w: ValueId, s: Rc<PropagationStructure>, edge_sums: Tensor },
    MseLoss { pred: ValueId, target: Rc<Tensor> },
    SoftmaxCrossEntropy { logits: ValueId, labels: Rc<Vec<u8>>, rows: Rc<Vec<usize>> },
    InfoNce(Box<InfoNceCtx>),
}

/// Saved context for the contrastive loss backward pass.
struct InfoNceCtx {
    a: ValueId,
    b: ValueId,
    tau: f64,
    a_unit: Tensor,
    b_unit: Tensor,
    a_norms: Vec<f64>,
    b_norms: Vec<f64>,
    /// Similarity matrix M = A'B'ᵀ/τ.
    sim: Tensor,
    /// Per-row (max, log Σ exp(x − max)) of M.
    row_stats: Vec<(f64, f64)>,
    /// Per-column (max, log Σ exp(x − max)) of M.
    col_stats: Vec<(f64, f64)>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Records an input tensor. Gradients are accumulated for it only when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> ValueId {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// The value of a 1×1 node.
    pub fn scalar(&self, id: ValueId) -> f64 {
        let t = self.value(id);
        assert_eq!(t.shape(), (1, 1), "scalar() on a non-scalar node");
        t.data()[0]
    }

    pub fn grad(&self, id: ValueId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Moves a gradient out of the tape (typically into the optimizer).
    pub fn take_grad(&mut self, id: ValueId) -> Option<Tensor> {
        self.nodes[id.0].grad.take()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> ValueId {
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        ValueId(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        value: Tensor,
        requires_grad: bool,
        op: Op,
        name: &'static str,
    ) -> Result<ValueId, AutodiffError> {
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        Ok(self.push(value, requires_grad, op))
    }

    fn needs_grad(&self, ids: &[ValueId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                expected: (ta.cols(), tb.rows()),
                got: (tb.rows(), tb.cols()),
            });
        }
        let value = ta.matmul(tb);
        self.push_checked(value, self.needs_grad(&[a, b]), Op::MatMul { a, b }, "matmul")
    }

    /// X·W + 1·bᵀ with `b` stored as a 1×c row vector.
    pub fn affine(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tx.cols() != tw.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "affine",
                expected: (tx.cols(), tw.cols()),
                got: tw.shape(),
            });
        }
        if tb.shape() != (1, tw.cols()) {
            return Err(AutodiffError::ShapeMismatch {
                op: "affine",
                expected: (1, tw.cols()),
                got: tb.shape(),
            });
        }
        let mut value = tx.matmul(tw);
        let bias = tb.row(0).to_vec();
        for i in 0..value.rows() {
            for (v, add) in value.row_mut(i).iter_mut().zip(&bias) {
                *v += add;
            }
        }
        self.push_checked(value, self.needs_grad(&[x, w, b]), Op::Affine { x, w, b }, "affine")
    }

    pub fn relu(&mut self, x: ValueId) -> Result<ValueId, AutodiffError> {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push_checked(value, self.needs_grad(&[x]), Op::Relu { x }, "relu")
    }

    pub fn sigmoid(&mut self, x: ValueId) -> Result<ValueId, AutodiffError> {
        let value = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push_checked(value, self.needs_grad(&[x]), Op::Sigmoid { x }, "sigmoid")
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "add",
                expected: ta.shape(),
                got: tb.shape(),
            });
        }
        let mut value = ta.clone();
        value.add_scaled(tb, 1.0);
        self.push_checked(value, self.needs_grad(&[a, b]), Op::Add { a, b }, "add")
    }

    pub fn scale(&mut self, a: ValueId, c: f64) -> Result<ValueId, AutodiffError> {
        let value = self.value(a).map(|v| v * c);
        self.push_checked(value, self.needs_grad(&[a]), Op::Scale { a, c }, "scale")
    }

    /// [A | B] along columns.
    pub fn concat_cols(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat_cols",
                expected: (ta.rows(), tb.cols()),
                got: tb.shape(),
            });
        }
        let mut value = Tensor::zeros(ta.rows(), ta.cols() + tb.cols());
        for i in 0..ta.rows() {
            let row = value.row_mut(i);
            row[..ta.cols()].copy_from_slice(ta.row(i));
            row[ta.cols()..].copy_from_slice(tb.row(i));
        }
        self.push_checked(value, self.needs_grad(&[a, b]), Op::ConcatCols { a, b }, "concat_cols")
    }

    /// Fixed-coefficient scalar readout Σ_ij a_ij·c_ij.
    pub fn inner(&mut self, a: ValueId, coeffs: Tensor) -> Result<ValueId, AutodiffError> {
        let ta = self.value(a);
        if ta.shape() != coeffs.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "inner",
                expected: ta.shape(),
                got: coeffs.shape(),
            });
        }
        let s = lane_dot(ta.data(), coeffs.data());
        let value = Tensor::from_vec(1, 1, vec![s]);
        self.push_checked(
            value,
            self.needs_grad(&[a]),
            Op::Inner { a, c: Rc::new(coeffs) },
            "inner",
        )
    }

    /// Row `i` of the output is the mean of the `Z` rows listed in
    /// `groups[i]` — the per-edge pooling of user embeddings.
    pub fn mean_pool_rows(
        &mut self,
        z: ValueId,
        groups: Rc<Vec<Vec<usize>>>,
    ) -> Result<ValueId, AutodiffError> {
        let tz = self.value(z);
        let d = tz.cols();
        let mut value = Tensor::zeros(groups.len(), d);
        for (g, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(AutodiffError::EmptyGroup { group: g });
            }
            let inv = 1.0 / group.len() as f64;
            let row = value.row_mut(g);
            for &j in group.iter() {
                debug_assert!(j < tz.rows(), "group index out of range");
                for (o, &x) in row.iter_mut().zip(tz.row(j)) {
                    *o += x;
                }
            }
            for o in row.iter_mut() {
                *o *= inv;
            }
        }
        self.push_checked(
            value,
            self.needs_grad(&[z]),
            Op::MeanPoolRows { z, groups },
            "mean_pool_rows",
        )
    }

    /// S(w)·Z where S is the normalized propagation operator built from
    /// `structure` and the learnable edge-weight vector `w` (a t×1 node).
    /// Gradients flow into both `z` and `w`.
    pub fn propagate(
        &mut self,
        z: ValueId,
        w: ValueId,
        structure: Rc<PropagationStructure>,
    ) -> Result<ValueId, AutodiffError> {
        let (tz, tw) = (self.value(z), self.value(w));
        if tw.shape() != (structure.edge_count(), 1) {
            return Err(AutodiffError::ShapeMismatch {
                op: "propagate",
                expected: (structure.edge_count(), 1),
                got: tw.shape(),
            });
        }
        if tz.rows() != structure.node_count() {
            return Err(AutodiffError::ShapeMismatch {
                op: "propagate",
                expected: (structure.node_count(), tz.cols()),
                got: tz.shape(),
            });
        }
        // Forward in factored form, keeping the per-edge sums Q = Hᵀ·N·Z
        // around: the weight gradient needs them.
        let mut scaled = tz.clone();
        crate::hypergraph::scale_rows(&mut scaled, structure.node_scale());
        let edge_sums = structure.pool_to_edges(&scaled);
        let mut weighted = edge_sums.clone();
        for e in 0..weighted.rows() {
            let c = tw[(e, 0)] * structure.inv_edge_degree()[e];
            for x in weighted.row_mut(e) {
                *x *= c;
            }
        }
        let mut value = structure.scatter_to_nodes(&weighted);
        crate::hypergraph::scale_rows(&mut value, structure.node_scale());
        self.push_checked(
            value,
            self.needs_grad(&[z, w]),
            Op::Propagate { z, w, s: structure, edge_sums },
            "propagate",
        )
    }

    /// Mean squared reconstruction error: Σ(pred − target)² / rows.
    pub fn mse_loss(&mut self, pred: ValueId, target: &Tensor) -> Result<ValueId, AutodiffError> {
        let tp = self.value(pred);
        if tp.shape() != target.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mse_loss",
                expected: target.shape(),
                got: tp.shape(),
            });
        }
        let m = tp.rows() as f64;
        let ss: f64 = tp
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let value = Tensor::from_vec(1, 1, vec![ss / m]);
        self.push_checked(
            value,
            self.needs_grad(&[pred]),
            Op::MseLoss { pred, target: Rc::new(target.clone()) },
            "mse_loss",
        )
    }

    /// Mean of −log softmax(logits)[label] over all rows.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: ValueId,
        labels: Rc<Vec<u8>>,
    ) -> Result<ValueId, AutodiffError> {
        let n = self.value(logits).rows();
        let rows = Rc::new((0..n).collect::<Vec<_>>());
        self.softmax_cross_entropy_masked(logits, labels, rows)
    }

    /// Cross-entropy averaged over a subset of rows — the supervised loss
    /// uses only training-split edges while the logits cover all edges.
    pub fn softmax_cross_entropy_masked(
        &mut self,
        logits: ValueId,
        labels: Rc<Vec<u8>>,
        rows: Rc<Vec<usize>>,
    ) -> Result<ValueId, AutodiffError> {
        let tl = self.value(logits);
        if labels.len() != tl.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "softmax_cross_entropy",
                expected: (tl.rows(), 1),
                got: (labels.len(), 1),
            });
        }
        if rows.is_empty() {
            return Err(AutodiffError::BatchTooSmall { size: 0 });
        }
        let mut total = 0.0;
        for &r in rows.iter() {
            debug_assert!((labels[r] as usize) < tl.cols(), "label out of range");
            total += log_sum_exp(tl.row(r)) - tl[(r, labels[r] as usize)];
        }
        let value = Tensor::from_vec(1, 1, vec![total / rows.len() as f64]);
        self.push_checked(
            value,
            self.needs_grad(&[logits]),
            Op::SoftmaxCrossEntropy { logits, labels, rows },
            "softmax_cross_entropy",
        )
    }

    /// Symmetric contrastive alignment loss between two n×d views.
    ///
    /// Rows are L2-normalized internally, the similarity matrix is
    /// M = A'B'ᵀ/τ, and the loss averages cross-entropy against the
    /// diagonal in both the row and the column direction. Minimizing it
    /// maximizes a lower bound on the mutual information between paired
    /// rows. The construction is exactly symmetric: `info_nce(a, b)` and
    /// `info_nce(b, a)` are bitwise equal.
    pub fn info_nce(&mut self, a: ValueId, b: ValueId, tau: f64) -> Result<ValueId, AutodiffError> {
        assert!(tau > 0.0, "temperature must be positive");
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "info_nce",
                expected: ta.shape(),
                got: tb.shape(),
            });
        }
        let n = ta.rows();
        if n < 2 {
            return Err(AutodiffError::BatchTooSmall { size: n });
        }
        let (a_unit, a_norms) = normalize_rows(ta);
        let (b_unit, b_norms) = normalize_rows(tb);
        let inv_tau = 1.0 / tau;
        let mut sim = Tensor::zeros(n, n);
        for i in 0..n {
            let ai = a_unit.row(i);
            let row = sim.row_mut(i);
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = lane_dot(ai, b_unit.row(j)) * inv_tau;
            }
        }
        let simt = sim.transpose();
        let row_stats: Vec<(f64, f64)> = (0..n).map(|i| max_lse(sim.row(i))).collect();
        let col_stats: Vec<(f64, f64)> = (0..n).map(|i| max_lse(simt.row(i))).collect();
        let mut loss_rows = 0.0;
        let mut loss_cols = 0.0;
        for i in 0..n {
            loss_rows += row_stats[i].0 + row_stats[i].1 - sim[(i, i)];
            loss_cols += col_stats[i].0 + col_stats[i].1 - simt[(i, i)];
        }
        let inv_n = 1.0 / n as f64;
        let value = Tensor::from_vec(1, 1, vec![0.5 * (loss_rows * inv_n + loss_cols * inv_n)]);
        let ctx = InfoNceCtx {
            a,
            b,
            tau,
            a_unit,
            b_unit,
            a_norms,
            b_norms,
            sim,
            row_stats,
            col_stats,
        };
        self.push_checked(value, self.needs_grad(&[a, b]), Op::InfoNce(Box::new(ctx)), "info_nce")
    }

    /// Runs the backward pass from a scalar node, accumulating gradients
    /// into every node that requires them.
    pub fn backward(&mut self, loss: ValueId) {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar loss");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_vec(1, 1, vec![1.0]));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (node, grad) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                node.grad = grad;
            }
        }
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor>],
        id: ValueId,
        update: impl FnOnce() -> Tensor,
    ) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let delta = update();
        match &mut grads[id.0] {
            Some(g) => g.add_scaled(&delta, 1.0),
            slot @ None => *slot = Some(delta),
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, || g.matmul_nt(tb));
                self.accumulate(grads, *b, || ta.matmul_tn(g));
            }
            Op::Affine { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                self.accumulate(grads, *x, || g.matmul_nt(tw));
                self.accumulate(grads, *w, || tx.matmul_tn(g));
                self.accumulate(grads, *b, || {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (slot, &x) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                            *slot += x;
                        }
                    }
                    db
                });
            }
            Op::Relu { x } => {
                let tx = self.value(*x);
                self.accumulate(grads, *x, || {
                    let mut dx = g.clone();
                    for (d, &v) in dx.data_mut().iter_mut().zip(tx.data()) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    dx
                });
            }
            Op::Sigmoid { x } => {
                let s = &self.nodes[i].value;
                self.accumulate(grads, *x, || {
                    let mut dx = g.clone();
                    for (d, &v) in dx.data_mut().iter_mut().zip(s.data()) {
                        *d *= v * (1.0 - v);
                    }
                    dx
                });
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, || g.clone());
                self.accumulate(grads, *b, || g.clone());
            }
            Op::Scale { a, c } => {
                let c = *c;
                self.accumulate(grads, *a, || g.map(|v| v * c));
            }
            Op::ConcatCols { a, b } => {
                let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                self.accumulate(grads, *a, || {
                    Tensor::from_fn(g.rows(), ca, |r, c| g[(r, c)])
                });
                self.accumulate(grads, *b, || {
                    Tensor::from_fn(g.rows(), cb, |r, c| g[(r, ca + c)])
                });
            }
            Op::Inner { a, c } => {
                let scale = g.data()[0];
                self.accumulate(grads, *a, || c.map(|v| v * scale));
            }
            Op::MeanPoolRows { z, groups } => {
                let rows = self.value(*z).rows();
                let cols = self.value(*z).cols();
                self.accumulate(grads, *z, || {
                    let mut dz = Tensor::zeros(rows, cols);
                    for (gi, group) in groups.iter().enumerate() {
                        let inv = 1.0 / group.len() as f64;
                        for &j in group {
                            let dst = dz.row_mut(j);
                            for (d, &up) in dst.iter_mut().zip(g.row(gi)) {
                                *d += up * inv;
                            }
                        }
                    }
                    dz
                });
            }
            Op::Propagate { z, w, s, edge_sums } => {
                let tw = self.value(*w);
                // dOut → scale by N → per-edge sums → split into dW and dQ →
                // scatter → scale by N. Mirrors the factored forward.
                let mut dt = g.clone();
                crate::hypergraph::scale_rows(&mut dt, s.node_scale());
                let dr = s.pool_to_edges(&dt);
                self.accumulate(grads, *w, || {
                    let mut dw = Tensor::zeros(s.edge_count(), 1);
                    for e in 0..s.edge_count() {
                        dw[(e, 0)] =
                            lane_dot(edge_sums.row(e), dr.row(e)) * s.inv_edge_degree()[e];
                    }
                    dw
                });
                self.accumulate(grads, *z, || {
                    let mut dq = dr;
                    for e in 0..dq.rows() {
                        let c = tw[(e, 0)] * s.inv_edge_degree()[e];
                        for x in dq.row_mut(e) {
                            *x *= c;
                        }
                    }
                    let mut dz = s.scatter_to_nodes(&dq);
                    crate::hypergraph::scale_rows(&mut dz, s.node_scale());
                    dz
                });
            }
            Op::MseLoss { pred, target } => {
                let tp = self.value(*pred);
                let scale = 2.0 * g.data()[0] / tp.rows() as f64;
                self.accumulate(grads, *pred, || {
                    let mut dp = tp.clone();
                    dp.add_scaled(target, -1.0);
                    dp.map(|v| v * scale)
                });
            }
            Op::SoftmaxCrossEntropy { logits, labels, rows } => {
                let tl = self.value(*logits);
                let scale = g.data()[0] / rows.len() as f64;
                self.accumulate(grads, *logits, || {
                    let mut dl = Tensor::zeros(tl.rows(), tl.cols());
                    for &r in rows.iter() {
                        let row = tl.row(r);
                        let (mx, lse) = max_lse(row);
                        let dst = dl.row_mut(r);
                        for (j, (d, &v)) in dst.iter_mut().zip(row).enumerate() {
                            let p = (v - mx - lse).exp();
                            let target = if j == labels[r] as usize { 1.0 } else { 0.0 };
                            *d = (p - target) * scale;
                        }
                    }
                    dl
                });
            }
            Op::InfoNce(ctx) => self.backprop_info_nce(ctx, g, grads),
        }
    }

    fn backprop_info_nce(&self, ctx: &InfoNceCtx, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let n = ctx.sim.rows();
        // dL/dM = ½[(P_row − I) + (P_col − I)ᵀ]/n where P_row/P_col are the
        // row- and column-wise softmaxes of M; both come from the saved
        // stats in one pass over M. The 1/τ from M = A'B'ᵀ/τ folds in here.
        let scale = 0.5 * g.data()[0] / (n as f64 * ctx.tau);
        let mut dsim = Tensor::zeros(n, n);
        for i in 0..n {
            let (rmx, rlse) = ctx.row_stats[i];
            let src = ctx.sim.row(i);
            let dst = dsim.row_mut(i);
            for j in 0..n {
                let (cmx, clse) = ctx.col_stats[j];
                let v = src[j];
                let mut d = (v - rmx - rlse).exp() + (v - cmx - clse).exp();
                if i == j {
                    d -= 2.0;
                }
                dst[j] = d * scale;
            }
        }
        let da_unit = dsim.matmul(&ctx.b_unit);
        let db_unit = dsim.matmul_tn(&ctx.a_unit);
        self.accumulate(grads, ctx.a, || {
            normalize_rows_backward(&ctx.a_unit, &ctx.a_norms, &da_unit)
        });
        self.accumulate(grads, ctx.b, || {
            normalize_rows_backward(&ctx.b_unit, &ctx.b_norms, &db_unit)
        });
    }
}

/// L2-normalizes every row; zero rows stay zero. Returns (unit rows, norms).
fn normalize_rows(t: &Tensor) -> (Tensor, Vec<f64>) {
    let mut out = t.clone();
    let mut norms = Vec::with_capacity(t.rows());
    for i in 0..t.rows() {
        let row = out.row_mut(i);
        let norm = lane_dot(row, row).sqrt();
        if norm > 0.0 {
            let inv = 1.0 / norm;
            for x in row {
                *x *= inv;
            }
        }
        norms.push(norm);
    }
    (out, norms)
}

/// Gradient of row normalization: dX_i = (dU_i − U_i·(U_i·dU_i))/‖X_i‖.
/// Rows that were zero (norm 0) get a zero gradient.
fn normalize_rows_backward(unit: &Tensor, norms: &[f64], d_unit: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(unit.rows(), unit.cols());
    for i in 0..unit.rows() {
        if norms[i] == 0.0 {
            continue;
        }
        let u = unit.row(i);
        let du = d_unit.row(i);
        let proj = lane_dot(u, du);
        let inv = 1.0 / norms[i];
        for (slot, (&uu, &dd)) in out.row_mut(i).iter_mut().zip(u.iter().zip(du)) {
            *slot = (dd - uu * proj) * inv;
        }
    }
    out
}

fn max_lse(row: &[f64]) -> (f64, f64) {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&v| (v - mx).exp()).sum();
    (mx, sum.ln())
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let (mx, lse) = max_lse(row);
    mx + lse
}

/// Compares the analytic gradient of `f` at `x` against central finite
/// differences, coordinate by coordinate, and returns the worst error.
///
/// `f` must return the scalar value and its full analytic gradient at the
/// evaluation point (only the value is used at the perturbed points). The
/// error is relative, `|a − n| / max(|a|, |n|)`, falling back to the
/// absolute difference when both magnitudes are below 1e-4 so that noise
/// around true zeros is not amplified into spurious failures.
pub fn grad_check<F>(mut f: F, x: &Tensor, h: f64) -> Result<f64, AutodiffError>
where
    F: FnMut(&Tensor) -> Result<(f64, Tensor), AutodiffError>,
{
    assert!((1e-7..=1e-4).contains(&h), "step size outside sensible range");
    let (_, analytic) = f(x)?;
    assert_eq!(analytic.shape(), x.shape(), "gradient shape must match input");
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for idx in 0..x.data().len() {
        let orig = x.data()[idx];
        probe.data_mut()[idx] = orig + h;
        let (fp, _) = f(&probe)?;
        probe.data_mut()[idx] = orig - h;
        let (fm, _) = f(&probe)?;
        probe.data_mut()[idx] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.data()[idx];
        let denom = a.abs().max(numeric.abs());
        let err = if denom > 1e-4 { (a - numeric).abs() / denom } else { (a - numeric).abs() };
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::Incidence;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rnd(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Random tensor with entries bounded away from zero, for checks whose
    /// finite differences degenerate near kinks or tiny gradients.
    fn rnd_offset(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(rows, cols, |_, _| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * rng.random_range(0.5..1.5)
        })
    }

    #[test]
    fn matmul_known_values() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]), false);
        let b = tape.leaf(Tensor::from_rows(&[vec![1.0], vec![1.0]]), false);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 7.0]);

        let i2 = tape.leaf(Tensor::eye(2), false);
        let b2 = tape.leaf(Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]), false);
        let c2 = tape.matmul(i2, b2).unwrap();
        assert_eq!(tape.value(c2), tape.value(b2));
    }

    #[test]
    fn shape_mismatches_are_reported() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3), false);
        let b = tape.leaf(Tensor::zeros(2, 3), false);
        assert!(matches!(tape.matmul(a, b), Err(AutodiffError::ShapeMismatch { .. })));
        assert!(matches!(tape.mse_loss(a, &Tensor::zeros(3, 2)), Err(AutodiffError::ShapeMismatch { .. })));
    }

    #[test]
    fn non_finite_forward_is_a_hard_error() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(1, 1, vec![1e308]), false);
        let b = tape.leaf(Tensor::from_vec(1, 1, vec![1e308]), false);
        assert!(matches!(tape.add(a, b), Err(AutodiffError::NonFinite { op: "add" })));
    }

    #[test]
    fn relu_and_sigmoid_known_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![-1.0, 2.0]]), false);
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 2.0]);
        let z = tape.leaf(Tensor::from_vec(1, 1, vec![0.0]), false);
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5]);
    }

    #[test]
    fn mean_pool_known_values() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::from_rows(&[vec![0.0, 0.0], vec![2.0, 4.0]]), false);
        let groups = Rc::new(vec![vec![0, 1], vec![1]]);
        let u = tape.mean_pool_rows(z, groups).unwrap();
        assert_eq!(tape.value(u).data(), &[1.0, 2.0, 2.0, 4.0]);

        let empty = Rc::new(vec![vec![]]);
        assert!(matches!(
            tape.mean_pool_rows(z, empty),
            Err(AutodiffError::EmptyGroup { group: 0 })
        ));
    }

    #[test]
    fn mean_pool_matches_loop_oracle_and_conserves_column_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z_val = rnd(10, 4, &mut rng);
        // A partition of all rows into three groups.
        let groups = vec![vec![0, 3, 5], vec![1, 2, 6, 9], vec![4, 7, 8]];
        let mut tape = Tape::new();
        let z = tape.leaf(z_val.clone(), false);
        let u = tape.mean_pool_rows(z, Rc::new(groups.clone())).unwrap();
        let u = tape.value(u);
        for (gi, group) in groups.iter().enumerate() {
            for c in 0..4 {
                let want: f64 =
                    group.iter().map(|&r| z_val[(r, c)]).sum::<f64>() / group.len() as f64;
                assert!((u[(gi, c)] - want).abs() < 1e-12);
            }
        }
        // Re-expanded by group sizes, pooling conserves column sums.
        for c in 0..4 {
            let expanded: f64 =
                groups.iter().enumerate().map(|(gi, g)| g.len() as f64 * u[(gi, c)]).sum();
            let direct: f64 = (0..10).map(|r| z_val[(r, c)]).sum();
            assert!((expanded - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn cross_entropy_known_values() {
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::from_rows(&[vec![0.0, 0.0]]), false);
        let loss = tape.softmax_cross_entropy(l, Rc::new(vec![0])).unwrap();
        assert!((tape.scalar(loss) - std::f64::consts::LN_2).abs() < 1e-12);

        let l = tape.leaf(Tensor::from_rows(&[vec![100.0, 0.0]]), false);
        let loss = tape.softmax_cross_entropy(l, Rc::new(vec![0])).unwrap();
        assert!(tape.scalar(loss) <= 1e-8);
    }

    #[test]
    fn mse_known_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 1.0]]), false);
        let same = tape.mse_loss(x, &Tensor::from_rows(&[vec![1.0, 1.0]])).unwrap();
        assert_eq!(tape.scalar(same), 0.0);
        let diff = tape.mse_loss(x, &Tensor::from_rows(&[vec![0.0, 0.0]])).unwrap();
        assert_eq!(tape.scalar(diff), 2.0);
    }

    #[test]
    fn info_nce_identity_pair_value() {
        // A = B = I₂, τ = 1: every direction gives −log(e/(e+1)).
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::eye(2), false);
        let b = tape.leaf(Tensor::eye(2), false);
        let loss = tape.info_nce(a, b, 1.0).unwrap();
        let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((tape.scalar(loss) - expected).abs() < 1e-12);
        assert!((expected - 0.3132616875).abs() < 1e-9);
    }

    #[test]
    fn info_nce_perfect_alignment_goes_to_zero() {
        // Mutually orthogonal rows, A = B, small τ: loss ≈ 0.
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::eye(4), false);
        let b = tape.leaf(Tensor::eye(4), false);
        let loss = tape.info_nce(a, b, 0.05).unwrap();
        assert!(tape.scalar(loss) < 1e-7, "got {}", tape.scalar(loss));
    }

    #[test]
    fn info_nce_is_exactly_symmetric_and_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a_val = rnd(6, 5, &mut rng);
        let b_val = rnd(6, 5, &mut rng);

        let mut t1 = Tape::new();
        let (a, b) = (t1.leaf(a_val.clone(), false), t1.leaf(b_val.clone(), false));
        let ab = t1.info_nce(a, b, 0.5).unwrap();

        let mut t2 = Tape::new();
        let (b2, a2) = (t2.leaf(b_val.clone(), false), t2.leaf(a_val.clone(), false));
        let ba = t2.info_nce(b2, a2, 0.5).unwrap();
        assert_eq!(t1.scalar(ab).to_bits(), t2.scalar(ba).to_bits());

        // Positive per-row rescaling is absorbed by the normalization.
        let mut scaled = a_val.clone();
        for i in 0..scaled.rows() {
            let c = 0.1 + i as f64;
            for x in scaled.row_mut(i) {
                *x *= c;
            }
        }
        let mut t3 = Tape::new();
        let (a3, b3) = (t3.leaf(scaled, false), t3.leaf(b_val, false));
        let s = t3.info_nce(a3, b3, 0.5).unwrap();
        assert!((t3.scalar(s) - t1.scalar(ab)).abs() < 1e-10);
    }

    #[test]
    fn info_nce_rejects_tiny_batches() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[vec![1.0, 0.0]]), false);
        let b = tape.leaf(Tensor::from_rows(&[vec![1.0, 0.0]]), false);
        assert!(matches!(tape.info_nce(a, b, 0.5), Err(AutodiffError::BatchTooSmall { size: 1 })));
    }

    #[test]
    fn grad_check_linear_and_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rnd(3, 4, &mut rng);
        // f = Σx: analytic gradient all ones.
        let err = grad_check(
            |x| {
                let mut tape = Tape::new();
                let id = tape.leaf(x.clone(), true);
                let s = tape.inner(id, Tensor::from_fn(3, 4, |_, _| 1.0))?;
                tape.backward(s);
                Ok((tape.scalar(s), tape.take_grad(id).unwrap()))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-10, "sum gradient error {err}");

        // f = ‖x‖² via mse against zero, scaled back up by the row count.
        let x = rnd_offset(4, 3, &mut rng);
        let err = grad_check(
            |x| {
                let mut tape = Tape::new();
                let id = tape.leaf(x.clone(), true);
                let l = tape.mse_loss(id, &Tensor::zeros(4, 3))?;
                let l = tape.scale(l, 4.0)?;
                tape.backward(l);
                Ok((tape.scalar(l), tape.take_grad(id).unwrap()))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "quadratic gradient error {err}");
    }

    /// Gradient suite over every differentiable op, each against central
    /// differences at h = 1e-5.
    #[test]
    fn grad_check_all_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);

        // matmul, both arguments.
        let a_val = rnd(3, 4, &mut rng);
        let b_val = rnd(4, 2, &mut rng);
        let read = rnd(3, 2, &mut rng);
        for arg in 0..2 {
            let x0 = if arg == 0 { a_val.clone() } else { b_val.clone() };
            let err = grad_check(
                |x| {
                    let mut tape = Tape::new();
                    let a = tape.leaf(if arg == 0 { x.clone() } else { a_val.clone() }, arg == 0);
                    let b = tape.leaf(if arg == 1 { x.clone() } else { b_val.clone() }, arg == 1);
                    let c = tape.matmul(a, b)?;
                    let s = tape.inner(c, read.clone())?;
                    tape.backward(s);
                    Ok((tape.scalar(s), tape.take_grad(if arg == 0 { a } else { b }).unwrap()))
                },
                &x0,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "matmul arg {arg} gradient error {err}");
        }

        // affine: x, w and b.
        let x_val = rnd(5, 3, &mut rng);
        let w_val = rnd(3, 4, &mut rng);
        let bias_val = rnd(1, 4, &mut rng);
        let read = rnd(5, 4, &mut rng);
        for arg in 0..3 {
            let x0 = [&x_val, &w_val, &bias_val][arg].clone();
            let err = grad_check(
                |t| {
                    let mut tape = Tape::new();
                    let x = tape.leaf(if arg == 0 { t.clone() } else { x_val.clone() }, arg == 0);
                    let w = tape.leaf(if arg == 1 { t.clone() } else { w_val.clone() }, arg == 1);
                    let b =
                        tape.leaf(if arg == 2 { t.clone() } else { bias_val.clone() }, arg == 2);
                    let y = tape.affine(x, w, b)?;
                    let s = tape.inner(y, read.clone())?;
                    tape.backward(s);
                    let id = [x, w, b][arg];
                    Ok((tape.scalar(s), tape.take_grad(id).unwrap()))
                },
                &x0,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "affine arg {arg} gradient error {err}");
        }

        // relu (inputs bounded away from the kink) and sigmoid.
        let x_val = rnd_offset(4, 4, &mut rng);
        let read = rnd(4, 4, &mut rng);
        for op in ["relu", "sigmoid"] {
            let err = grad_check(
                |t| {
                    let mut tape = Tape::new();
                    let x = tape.leaf(t.clone(), true);
                    let y = if op == "relu" { tape.relu(x)? } else { tape.sigmoid(x)? };
                    let s = tape.inner(y, read.clone())?;
                    tape.backward(s);
                    Ok((tape.scalar(s), tape.take_grad(x).unwrap()))
                },
                &x_val,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "{op} gradient error {err}");
        }

        // mean_pool_rows with overlapping groups.
        let z_val = rnd(6, 3, &mut rng);
        let groups = Rc::new(vec![vec![0, 1, 2], vec![2, 3], vec![4], vec![0, 5]]);
        let read = rnd(4, 3, &mut rng);
        let err = grad_check(
            |t| {
                let mut tape = Tape::new();
                let z = tape.leaf(t.clone(), true);
                let u = tape.mean_pool_rows(z, groups.clone())?;
                let s = tape.inner(u, read.clone())?;
                tape.backward(s);
                Ok((tape.scalar(s), tape.take_grad(z).unwrap()))
            },
            &z_val,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "mean_pool gradient error {err}");

        // softmax cross-entropy on random logits.
        let logits_val = rnd(6, 2, &mut rng);
        let labels = Rc::new(vec![0u8, 1, 1, 0, 1, 0]);
        let err = grad_check(
            |t| {
                let mut tape = Tape::new();
                let l = tape.leaf(t.clone(), true);
                let loss = tape.softmax_cross_entropy(l, labels.clone())?;
                tape.backward(loss);
                Ok((tape.scalar(loss), tape.take_grad(l).unwrap()))
            },
            &logits_val,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "cross-entropy gradient error {err}");

        // mse.
        let p_val = rnd(5, 3, &mut rng);
        let target = rnd(5, 3, &mut rng);
        let err = grad_check(
            |t| {
                let mut tape = Tape::new();
                let p = tape.leaf(t.clone(), true);
                let loss = tape.mse_loss(p, &target)?;
                tape.backward(loss);
                Ok((tape.scalar(loss), tape.take_grad(p).unwrap()))
            },
            &p_val,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "mse gradient error {err}");

        // info_nce, both arguments, random 8×4 pair.
        let a_val = rnd(8, 4, &mut rng);
        let b_val = rnd(8, 4, &mut rng);
        for arg in 0..2 {
            let x0 = if arg == 0 { a_val.clone() } else { b_val.clone() };
            let err = grad_check(
                |t| {
                    let mut tape = Tape::new();
                    let a = tape.leaf(if arg == 0 { t.clone() } else { a_val.clone() }, arg == 0);
                    let b = tape.leaf(if arg == 1 { t.clone() } else { b_val.clone() }, arg == 1);
                    let loss = tape.info_nce(a, b, 0.5)?;
                    tape.backward(loss);
                    Ok((tape.scalar(loss), tape.take_grad(if arg == 0 { a } else { b }).unwrap()))
                },
                &x0,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-5, "info_nce arg {arg} gradient error {err}");
        }

        // propagate: gradients into both features and edge weights.
        let incidence =
            Incidence::new(vec![vec![0, 1, 2], vec![2, 3], vec![3, 4, 5], vec![0, 5]], 6).unwrap();
        let structure = Rc::new(PropagationStructure::new(&incidence, 1e-12));
        let z_val = rnd(6, 3, &mut rng);
        let w_val = Tensor::from_fn(4, 1, |_, _| rng.random_range(0.2..1.5));
        let read = rnd(6, 3, &mut rng);
        for arg in 0..2 {
            let x0 = if arg == 0 { z_val.clone() } else { w_val.clone() };
            let err = grad_check(
                |t| {
                    let mut tape = Tape::new();
                    let z = tape.leaf(if arg == 0 { t.clone() } else { z_val.clone() }, arg == 0);
                    let w = tape.leaf(if arg == 1 { t.clone() } else { w_val.clone() }, arg == 1);
                    let out = tape.propagate(z, w, structure.clone())?;
                    let s = tape.inner(out, read.clone())?;
                    tape.backward(s);
                    Ok((tape.scalar(s), tape.take_grad(if arg == 0 { z } else { w }).unwrap()))
                },
                &x0,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "propagate arg {arg} gradient error {err}");
        }
    }

    #[test]
    fn gradient_accumulates_across_shared_use() {
        // y = x + x ⇒ dy/dx = 2.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(1, 1, vec![3.0]), true);
        let y = tape.add(x, x).unwrap();
        tape.backward(y);
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn constant_subgraphs_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(1, 1, vec![3.0]), true);
        let c = tape.leaf(Tensor::from_vec(1, 1, vec![5.0]), false);
        let y = tape.add(x, c).unwrap();
        tape.backward(y);
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0]);
    }
}
