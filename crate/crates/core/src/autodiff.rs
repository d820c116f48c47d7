//! Reverse-mode automatic differentiation over dense 2-D matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value and
//! the indices of its parents, so node order is already a topological order.
//! Graphs are rebuilt per forward pass (define-by-run) and confined to one
//! thread; [`Graph::backward`] sweeps the tape once in reverse, accumulating
//! gradients into every `requires_grad` leaf.

use crate::error::{Result, TarnError};
use crate::matrix::Matrix;

/// Arguments below this threshold are clamped inside [`Graph::ln_clamped`];
/// the gradient is zero in the clamped region.
pub const LN_CLAMP: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Row-broadcast bias: `1 x d` added to every row of an `m x d` operand.
    AddRow(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Square(NodeId),
    LnClamped(NodeId),
    Scale(NodeId, f64),
    SoftmaxCols(NodeId),
    Sum(NodeId),
    MeanRows(NodeId),
    MeanCols(NodeId),
    L2RowPair(NodeId, NodeId),
    CosRowPair(NodeId, NodeId),
    Row(NodeId, usize),
    ConcatCols(NodeId, NodeId),
    StackRows(Vec<NodeId>),
}

struct NodeRec {
    value: Matrix,
    grad: Option<Matrix>,
    op: Op,
    requires: bool,
}

/// Define-by-run computation graph.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<NodeRec>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Inserts a leaf that accumulates a gradient during [`Graph::backward`].
    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    /// Gradient accumulated at a leaf, if any consumer contributed one.
    pub fn grad(&self, id: NodeId) -> Option<&Matrix> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Gradient of a leaf, zero-filled when the leaf never influenced the loss.
    pub fn grad_or_zeros(&self, id: NodeId) -> Matrix {
        match self.nodes[id.0].grad {
            Some(ref g) => g.clone(),
            None => {
                let (r, c) = self.shape(id);
                Matrix::zeros(r, c)
            }
        }
    }

    fn push(&mut self, value: Matrix, op: Op, requires: bool) -> NodeId {
        self.nodes.push(NodeRec {
            value,
            grad: None,
            op,
            requires,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Matrix, op: Op) -> NodeId {
        let requires = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::L2RowPair(a, b)
            | Op::CosRowPair(a, b)
            | Op::ConcatCols(a, b) => self.requires(*a) || self.requires(*b),
            Op::Transpose(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Square(a)
            | Op::LnClamped(a)
            | Op::Scale(a, _)
            | Op::SoftmaxCols(a)
            | Op::Sum(a)
            | Op::MeanRows(a)
            | Op::MeanCols(a)
            | Op::Row(a, _) => self.requires(*a),
            Op::StackRows(ps) => ps.iter().any(|p| self.requires(*p)),
        };
        self.push(value, op, requires)
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires
    }

    // ---- operations ------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push_op(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).transpose();
        self.push_op(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push_op(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push_op(value, Op::Sub(a, b)))
    }

    /// Entry-wise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push_op(value, Op::Mul(a, b)))
    }

    /// Adds a `1 x d` bias row to every row of an `m x d` operand.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let vb = self.value(bias);
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(TarnError::shape("add_row", va.shape(), vb.shape()));
        }
        let mut value = va.clone();
        for r in 0..value.rows() {
            for c in 0..value.cols() {
                let v = value.get(r, c) + vb.get(0, c);
                value.set(r, c, v);
            }
        }
        Ok(self.push_op(value, Op::AddRow(a, bias)))
    }

    /// `x . w + b` with a row-broadcast bias.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(stable_sigmoid);
        self.push_op(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::tanh);
        self.push_op(value, Op::Tanh(a))
    }

    /// Rectifier; the gradient at exactly zero is zero.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push_op(value, Op::Relu(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| x * x);
        self.push_op(value, Op::Square(a))
    }

    /// Natural log with the argument clamped at [`LN_CLAMP`]. NaN arguments
    /// propagate (f64::max would silently absorb them into the clamp).
    pub fn ln_clamped(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| {
            if x > LN_CLAMP {
                x.ln()
            } else if x.is_nan() {
                f64::NAN
            } else {
                LN_CLAMP.ln()
            }
        });
        self.push_op(value, Op::LnClamped(a))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let value = self.value(a).map(|x| x * s);
        self.push_op(value, Op::Scale(a, s))
    }

    /// Column-wise softmax with max subtraction; every column sums to 1.
    pub fn softmax_cols(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let (m, n) = va.shape();
        let mut value = Matrix::zeros(m, n);
        for c in 0..n {
            let mut mx = f64::NEG_INFINITY;
            for r in 0..m {
                mx = mx.max(va.get(r, c));
            }
            let mut sum = 0.0;
            for r in 0..m {
                let e = (va.get(r, c) - mx).exp();
                value.set(r, c, e);
                sum += e;
            }
            for r in 0..m {
                value.set(r, c, value.get(r, c) / sum);
            }
        }
        self.push_op(value, Op::SoftmaxCols(a))
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        self.push_op(Matrix::scalar(s), Op::Sum(a))
    }

    /// Mean over rows: `m x n` -> `1 x n`.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let (m, n) = va.shape();
        let mut value = Matrix::zeros(1, n);
        for c in 0..n {
            let mut s = 0.0;
            for r in 0..m {
                s += va.get(r, c);
            }
            value.set(0, c, s / m as f64);
        }
        self.push_op(value, Op::MeanRows(a))
    }

    /// Mean over columns: `m x n` -> `m x 1`.
    pub fn mean_cols(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let (m, n) = va.shape();
        let mut value = Matrix::zeros(m, 1);
        for r in 0..m {
            let s: f64 = va.row(r).iter().sum();
            value.set(r, 0, s / n as f64);
        }
        self.push_op(value, Op::MeanCols(a))
    }

    /// Euclidean distance between two `1 x d` rows; the gradient at equal
    /// rows is defined as zero.
    pub fn l2_rowpair(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.rowpair_check("l2_rowpair", a, b)?;
        let d: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        Ok(self.push_op(Matrix::scalar(d.sqrt()), Op::L2RowPair(a, b)))
    }

    /// Cosine similarity between two `1 x d` rows; defined as 0 (with zero
    /// gradient) when either row is the zero vector.
    pub fn cosine_rowpair(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.rowpair_check("cosine_rowpair", a, b)?;
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let dot: f64 = va.iter().zip(vb).map(|(&x, &y)| x * y).sum();
        let na = va.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
        let value = if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        };
        Ok(self.push_op(Matrix::scalar(value), Op::CosRowPair(a, b)))
    }

    fn rowpair_check(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.0 != 1 || sb.0 != 1 || sa.1 != sb.1 {
            return Err(TarnError::shape(op, sa, sb));
        }
        Ok(())
    }

    /// Extracts row `r` as a `1 x d` node.
    pub fn row(&mut self, a: NodeId, r: usize) -> Result<NodeId> {
        let va = self.value(a);
        if r >= va.rows() {
            return Err(TarnError::Contract(format!(
                "row {r} out of bounds for {} rows",
                va.rows()
            )));
        }
        let value = va.row_matrix(r);
        Ok(self.push_op(value, Op::Row(a, r)))
    }

    /// Horizontal concatenation of two nodes with equal row counts.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let vb = self.value(b);
        if va.rows() != vb.rows() {
            return Err(TarnError::shape("concat_cols", va.shape(), vb.shape()));
        }
        let (m, p, q) = (va.rows(), va.cols(), vb.cols());
        let mut data = Vec::with_capacity(m * (p + q));
        for r in 0..m {
            data.extend_from_slice(va.row(r));
            data.extend_from_slice(vb.row(r));
        }
        let value = Matrix::from_vec(m, p + q, data);
        Ok(self.push_op(value, Op::ConcatCols(a, b)))
    }

    /// Stacks `1 x d` rows into an `n x d` node.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(TarnError::Contract("stack_rows of zero rows".into()));
        }
        let d = self.shape(rows[0]).1;
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let v = self.value(r);
            if v.shape() != (1, d) {
                return Err(TarnError::shape("stack_rows", (1, d), v.shape()));
            }
            data.extend_from_slice(v.data());
        }
        let value = Matrix::from_vec(rows.len(), d, data);
        Ok(self.push_op(value, Op::StackRows(rows.to_vec())))
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar loss. Visits each node at most once, in
    /// reverse tape order; gradients of interior nodes are dropped after use
    /// and only leaves keep theirs.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(TarnError::Contract(format!(
                "backward requires a 1x1 loss, got {}x{}",
                self.shape(loss).0,
                self.shape(loss).1
            )));
        }
        self.accum(loss, Matrix::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            self.backprop(idx, &op, &g)?;
        }
        Ok(())
    }

    fn accum(&mut self, id: NodeId, delta: Matrix) {
        if !self.nodes[id.0].requires {
            return;
        }
        debug_assert_eq!(self.nodes[id.0].value.shape(), delta.shape());
        match &mut self.nodes[id.0].grad {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn backprop(&mut self, idx: usize, op: &Op, g: &Matrix) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires(a) {
                    let da = g.matmul(&self.value(b).transpose())?;
                    self.accum(a, da);
                }
                if self.requires(b) {
                    let db = self.value(a).transpose().matmul(g)?;
                    self.accum(b, db);
                }
            }
            Op::Transpose(a) => self.accum(a, g.transpose()),
            Op::Add(a, b) => {
                self.accum(a, g.clone());
                self.accum(b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(a, g.clone());
                self.accum(b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.requires(a) {
                    let da = g.zip(self.value(b), "mul_bwd", |x, y| x * y)?;
                    self.accum(a, da);
                }
                if self.requires(b) {
                    let db = g.zip(self.value(a), "mul_bwd", |x, y| x * y)?;
                    self.accum(b, db);
                }
            }
            Op::AddRow(a, bias) => {
                self.accum(a, g.clone());
                if self.requires(bias) {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            db.set(0, c, db.get(0, c) + g.get(r, c));
                        }
                    }
                    self.accum(bias, db);
                }
            }
            Op::Sigmoid(a) => {
                let s = &self.nodes[idx].value;
                let da = g.zip(s, "sigmoid_bwd", |gv, sv| gv * sv * (1.0 - sv))?;
                self.accum(a, da);
            }
            Op::Tanh(a) => {
                let t = &self.nodes[idx].value;
                let da = g.zip(t, "tanh_bwd", |gv, tv| gv * (1.0 - tv * tv))?;
                self.accum(a, da);
            }
            Op::Relu(a) => {
                let da = g.zip(self.value(a), "relu_bwd", |gv, xv| {
                    if xv > 0.0 {
                        gv
                    } else {
                        0.0
                    }
                })?;
                self.accum(a, da);
            }
            Op::Square(a) => {
                let da = g.zip(self.value(a), "square_bwd", |gv, xv| gv * 2.0 * xv)?;
                self.accum(a, da);
            }
            Op::LnClamped(a) => {
                let da = g.zip(self.value(a), "ln_bwd", |gv, xv| {
                    if xv > LN_CLAMP {
                        gv / xv
                    } else {
                        0.0
                    }
                })?;
                self.accum(a, da);
            }
            Op::Scale(a, s) => self.accum(a, g.map(|x| x * s)),
            Op::SoftmaxCols(a) => {
                let s = &self.nodes[idx].value;
                let (m, n) = s.shape();
                let mut da = Matrix::zeros(m, n);
                for c in 0..n {
                    let mut dot = 0.0;
                    for r in 0..m {
                        dot += g.get(r, c) * s.get(r, c);
                    }
                    for r in 0..m {
                        da.set(r, c, s.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                self.accum(a, da);
            }
            Op::Sum(a) => {
                let (m, n) = self.shape(a);
                self.accum(a, Matrix::filled(m, n, g.item()));
            }
            Op::MeanRows(a) => {
                let (m, n) = self.shape(a);
                let mut da = Matrix::zeros(m, n);
                for r in 0..m {
                    for c in 0..n {
                        da.set(r, c, g.get(0, c) / m as f64);
                    }
                }
                self.accum(a, da);
            }
            Op::MeanCols(a) => {
                let (m, n) = self.shape(a);
                let mut da = Matrix::zeros(m, n);
                for r in 0..m {
                    for c in 0..n {
                        da.set(r, c, g.get(r, 0) / n as f64);
                    }
                }
                self.accum(a, da);
            }
            Op::L2RowPair(a, b) => {
                let dist = self.nodes[idx].value.item();
                if dist > 0.0 {
                    let gs = g.item();
                    let va = self.value(a).clone();
                    let vb = self.value(b).clone();
                    let diff = va.zip(&vb, "l2_bwd", |x, y| x - y)?;
                    self.accum(a, diff.map(|d| gs * d / dist));
                    self.accum(b, diff.map(|d| -gs * d / dist));
                }
                // dist == 0: gradient pinned to zero at the kink.
            }
            Op::CosRowPair(a, b) => {
                let va = self.value(a).clone();
                let vb = self.value(b).clone();
                let dot: f64 = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).sum();
                let na = va.sq_norm().sqrt();
                let nb = vb.sq_norm().sqrt();
                if na > 0.0 && nb > 0.0 {
                    let gs = g.item();
                    let c = dot / (na * nb);
                    let da = va
                        .zip(&vb, "cos_bwd", |x, y| y / (na * nb) - c * x / (na * na))?
                        .map(|v| gs * v);
                    let db = vb
                        .zip(&va, "cos_bwd", |y, x| x / (na * nb) - c * y / (nb * nb))?
                        .map(|v| gs * v);
                    self.accum(a, da);
                    self.accum(b, db);
                }
            }
            Op::Row(a, r) => {
                let (m, n) = self.shape(a);
                let mut da = Matrix::zeros(m, n);
                for c in 0..n {
                    da.set(r, c, g.get(0, c));
                }
                self.accum(a, da);
            }
            Op::ConcatCols(a, b) => {
                let (m, p) = self.shape(a);
                let q = self.shape(b).1;
                if self.requires(a) {
                    let mut da = Matrix::zeros(m, p);
                    for r in 0..m {
                        for c in 0..p {
                            da.set(r, c, g.get(r, c));
                        }
                    }
                    self.accum(a, da);
                }
                if self.requires(b) {
                    let mut db = Matrix::zeros(m, q);
                    for r in 0..m {
                        for c in 0..q {
                            db.set(r, c, g.get(r, p + c));
                        }
                    }
                    self.accum(b, db);
                }
            }
            Op::StackRows(ref parents) => {
                for (r, &p) in parents.iter().enumerate() {
                    if self.requires(p) {
                        let d = g.cols();
                        let mut dp = Matrix::zeros(1, d);
                        for c in 0..d {
                            dp.set(0, c, g.get(r, c));
                        }
                        self.accum(p, dp);
                    }
                }
            }
        }
        Ok(())
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, max_rel_err};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.5..1.5)).collect())
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::scalar(0.0));
        let y = g.sigmoid(x);
        assert_eq!(g.value(y).item(), 0.5);
    }

    #[test]
    fn elementwise_mul_hand_product() {
        let mut g = Graph::new();
        let a = g.constant(Matrix::from_rows(&[vec![2.0, 3.0]]));
        let b = g.constant(Matrix::from_rows(&[vec![4.0, 5.0]]));
        let y = g.mul(a, b).unwrap();
        assert_eq!(g.value(y).data(), &[8.0, 15.0]);
    }

    #[test]
    fn elementwise_shape_mismatch_is_error() {
        let mut g = Graph::new();
        let a = g.constant(Matrix::zeros(2, 2));
        let b = g.constant(Matrix::zeros(2, 3));
        assert!(matches!(g.add(a, b), Err(TarnError::Shape { .. })));
    }

    #[test]
    fn softmax_equal_logits_and_hand_value() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::from_vec(2, 1, vec![0.0, 0.0]));
        let s = g.softmax_cols(x);
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);

        let x2 = g.constant(Matrix::from_vec(2, 1, vec![1.0, 0.0]));
        let s2 = g.softmax_cols(x2);
        let e = 1.0_f64.exp();
        assert!((g.value(s2).get(0, 0) - e / (e + 1.0)).abs() < 1e-12);
        assert!((g.value(s2).get(1, 0) - 1.0 / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::from_vec(3, 1, vec![0.3, -1.2, 0.9]));
        let s = g.softmax_cols(x);
        let xs = g.constant(Matrix::from_vec(3, 1, vec![1000.3, 998.8, 1000.9]));
        let ss = g.softmax_cols(xs);
        for r in 0..3 {
            assert!((g.value(s).get(r, 0) - g.value(ss).get(r, 0)).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_backward_is_ones() {
        let mut g = Graph::new();
        let w = g.param(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let loss = g.sum(w);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn square_backward_is_two_x() {
        let mut g = Graph::new();
        let w = g.param(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let sq = g.square(w);
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut g = Graph::new();
        let w = g.param(Matrix::zeros(2, 2));
        assert!(matches!(g.backward(w), Err(TarnError::Contract(_))));
    }

    #[test]
    fn fanout_accumulates_both_paths() {
        // loss = sum(w + w) so dL/dw = 2 everywhere.
        let mut g = Graph::new();
        let w = g.param(Matrix::from_rows(&[vec![0.5, -0.5]]));
        let s = g.add(w, w).unwrap();
        let loss = g.sum(s);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn l2_of_identical_rows_is_zero_with_zero_grad() {
        let mut g = Graph::new();
        let a = g.param(Matrix::from_rows(&[vec![1.0, 2.0]]));
        let d = g.l2_rowpair(a, a).unwrap();
        assert_eq!(g.value(d).item(), 0.0);
        g.backward(d).unwrap();
        assert_eq!(g.grad_or_zeros(a).data(), &[0.0, 0.0]);
    }

    #[test]
    fn orthogonal_rows_cosine_and_l2() {
        let mut g = Graph::new();
        let a = g.constant(Matrix::from_rows(&[vec![1.0, 0.0]]));
        let b = g.constant(Matrix::from_rows(&[vec![0.0, 1.0]]));
        let c = g.cosine_rowpair(a, b).unwrap();
        let d = g.l2_rowpair(a, b).unwrap();
        assert_eq!(g.value(c).item(), 0.0);
        assert!((g.value(d).item() - 2.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cosine_with_zero_vector_is_zero() {
        let mut g = Graph::new();
        let a = g.param(Matrix::from_rows(&[vec![0.0, 0.0]]));
        let b = g.constant(Matrix::from_rows(&[vec![1.0, 2.0]]));
        let c = g.cosine_rowpair(a, b).unwrap();
        assert_eq!(g.value(c).item(), 0.0);
        g.backward(c).unwrap();
        assert_eq!(g.grad_or_zeros(a).data(), &[0.0, 0.0]);
    }

    #[test]
    fn mean_rows_matches_hand_value() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let m = g.mean_rows(x);
        assert_eq!(g.value(m).data(), &[2.0, 3.0]);
    }

    /// Central-difference check of one op through a random-weighted sum so
    /// every output entry contributes a distinct gradient path.
    fn fd_check_op(
        name: &str,
        shapes: &[(usize, usize)],
        build: impl Fn(&mut Graph, &[NodeId]) -> NodeId,
        seed: u64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Matrix> = shapes.iter().map(|&(r, c)| rand_matrix(&mut rng, r, c)).collect();
        let out_shape = {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = inputs.iter().map(|m| g.constant(m.clone())).collect();
            let out = build(&mut g, &ids);
            g.shape(out)
        };
        let weights = rand_matrix(&mut rng, out_shape.0, out_shape.1);

        let loss_of = |mats: &[Matrix]| -> crate::error::Result<f64> {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = mats.iter().map(|m| g.param(m.clone())).collect();
            let out = build(&mut g, &ids);
            let w = g.constant(weights.clone());
            let prod = g.mul(out, w)?;
            let loss = g.sum(prod);
            Ok(g.value(loss).item())
        };

        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|m| g.param(m.clone())).collect();
        let out = build(&mut g, &ids);
        let w = g.constant(weights.clone());
        let prod = g.mul(out, w).unwrap();
        let loss = g.sum(prod);
        g.backward(loss).unwrap();

        let numeric = central_diff(&inputs, loss_of, 1e-5).unwrap();
        for (i, num) in numeric.iter().enumerate() {
            let ana = g.grad_or_zeros(ids[i]);
            let err = max_rel_err(&ana, num);
            assert!(
                err < 1e-6,
                "{name}: input {i} rel err {err:.3e} exceeds 1e-6"
            );
        }
    }

    #[test]
    fn gradcheck_matmul() {
        fd_check_op(
            "matmul",
            &[(3, 4), (4, 2)],
            |g, ids| g.matmul(ids[0], ids[1]).unwrap(),
            11,
        );
    }

    #[test]
    fn gradcheck_elementwise_and_activations() {
        fd_check_op("add", &[(2, 3), (2, 3)], |g, ids| g.add(ids[0], ids[1]).unwrap(), 12);
        fd_check_op("sub", &[(2, 3), (2, 3)], |g, ids| g.sub(ids[0], ids[1]).unwrap(), 13);
        fd_check_op("mul", &[(2, 3), (2, 3)], |g, ids| g.mul(ids[0], ids[1]).unwrap(), 14);
        fd_check_op("sigmoid", &[(2, 3)], |g, ids| g.sigmoid(ids[0]), 15);
        fd_check_op("tanh", &[(2, 3)], |g, ids| g.tanh(ids[0]), 16);
        fd_check_op("square", &[(2, 3)], |g, ids| g.square(ids[0]), 17);
        // relu inputs kept away from the kink by the sampled range.
        fd_check_op("relu", &[(2, 3)], |g, ids| g.relu(ids[0]), 18);
        fd_check_op("scale", &[(2, 3)], |g, ids| g.scale(ids[0], -1.7), 19);
    }

    #[test]
    fn gradcheck_broadcast_reductions_structure() {
        fd_check_op("add_row", &[(3, 4), (1, 4)], |g, ids| g.add_row(ids[0], ids[1]).unwrap(), 20);
        fd_check_op("transpose", &[(2, 3)], |g, ids| g.transpose(ids[0]), 21);
        fd_check_op("softmax_cols", &[(4, 3)], |g, ids| g.softmax_cols(ids[0]), 22);
        fd_check_op("sum", &[(3, 3)], |g, ids| g.sum(ids[0]), 23);
        fd_check_op("mean_rows", &[(3, 4)], |g, ids| g.mean_rows(ids[0]), 24);
        fd_check_op("mean_cols", &[(3, 4)], |g, ids| g.mean_cols(ids[0]), 25);
        fd_check_op("row", &[(3, 4)], |g, ids| g.row(ids[0], 1).unwrap(), 26);
        fd_check_op("concat_cols", &[(2, 3), (2, 2)], |g, ids| {
            g.concat_cols(ids[0], ids[1]).unwrap()
        }, 27);
        fd_check_op("stack_rows", &[(1, 3), (1, 3), (1, 3)], |g, ids| g.stack_rows(ids).unwrap(), 28);
    }

    #[test]
    fn gradcheck_row_pair_ops() {
        fd_check_op("l2_rowpair", &[(1, 5), (1, 5)], |g, ids| {
            g.l2_rowpair(ids[0], ids[1]).unwrap()
        }, 29);
        fd_check_op("cosine_rowpair", &[(1, 5), (1, 5)], |g, ids| {
            g.cosine_rowpair(ids[0], ids[1]).unwrap()
        }, 30);
        fd_check_op("ln_clamped", &[(2, 3)], |g, ids| {
            // keep arguments positive and away from the clamp
            let sq = g.square(ids[0]);
            let shifted = g.scale(sq, 0.5);
            let c = g.constant(Matrix::filled(2, 3, 0.3));
            let pos = g.add(shifted, c).unwrap();
            g.ln_clamped(pos)
        }, 31);
    }

    #[test]
    fn gradcheck_fanout_against_fd() {
        fd_check_op("fanout", &[(2, 2), (2, 2)], |g, ids| {
            // ids[0] feeds two consumers whose results are combined.
            let p = g.matmul(ids[0], ids[1]).unwrap();
            let q = g.mul(ids[0], ids[0]).unwrap();
            g.add(p, q).unwrap()
        }, 32);
    }

    #[test]
    fn softmax_columns_sum_to_one_entries_open_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let r = rng.random_range(2..6);
            let c = rng.random_range(1..6);
            let m = rand_matrix(&mut rng, r, c);
            let mut g = Graph::new();
            let x = g.constant(m);
            let s = g.softmax_cols(x);
            let v = g.value(s);
            for j in 0..c {
                let sum: f64 = (0..r).map(|i| v.get(i, j)).sum();
                assert!((sum - 1.0).abs() < 1e-9);
                for i in 0..r {
                    let e = v.get(i, j);
                    assert!(e > 0.0 && e < 1.0);
                }
            }
        }
    }
}
