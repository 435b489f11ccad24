use super::tensor::{matmul_nn, matmul_nt, matmul_tn};
use super::{AutodiffError, Tensor};

/// Probabilities fed to logs are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-12;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Relu(Var),
    Ln(Var),
    Square(Var),
    Mean(Var),
    Sum(Var),
    FrobeniusSq(Var),
    FrobeniusNorm(Var),
    DivScalar(Var, Var),
    Sigmoid(Var),
    SoftmaxRows(Var, f64),
    L2NormalizeRows(Var, f64),
    GatherRows(Var, Vec<usize>),
    OuterDiff(Var, Var),
    StopGradient,
    Bce(Var, Vec<f64>),
    KlBernoulli(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Eager computation tape. Every primitive evaluates immediately and records
/// its parents so [`Graph::backward`] can walk the tape in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    detached: Vec<Tensor>,
    pinned: Option<Vec<Tensor>>,
}

/// Numerically stable logistic function.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn clamp_prob(p: f64) -> (f64, bool) {
    if p < PROB_CLAMP {
        (PROB_CLAMP, true)
    } else if p > 1.0 - PROB_CLAMP {
        (1.0 - PROB_CLAMP, true)
    } else {
        (p, false)
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize), AutodiffError> {
    if t.shape().len() != 2 {
        return Err(AutodiffError::InvalidArgument {
            op,
            msg: format!("expected a 2-D tensor, got shape {:?}", t.shape()),
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn require_column(op: &'static str, t: &Tensor) -> Result<usize, AutodiffError> {
    let (r, c) = require_matrix(op, t)?;
    if c != 1 {
        return Err(AutodiffError::InvalidArgument {
            op,
            msg: format!("expected a column vector, got shape {:?}", t.shape()),
        });
    }
    Ok(r)
}

fn require_scalar(op: &'static str, t: &Tensor) -> Result<(), AutodiffError> {
    if t.len() != 1 {
        return Err(AutodiffError::InvalidArgument {
            op,
            msg: format!("expected a scalar, got shape {:?}", t.shape()),
        });
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by backward.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        let requires_grad = match &op {
            Op::Leaf | Op::StopGradient => false,
            Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::DivScalar(a, b)
            | Op::OuterDiff(a, b)
            | Op::KlBernoulli(a, b) => self.requires_grad(*a) || self.requires_grad(*b),
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.iter().any(|v| self.requires_grad(*v)),
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Relu(a)
            | Op::Ln(a)
            | Op::Square(a)
            | Op::Mean(a)
            | Op::Sum(a)
            | Op::FrobeniusSq(a)
            | Op::FrobeniusNorm(a)
            | Op::Sigmoid(a)
            | Op::SoftmaxRows(a, _)
            | Op::L2NormalizeRows(a, _)
            | Op::GatherRows(a, _)
            | Op::Bce(a, _) => self.requires_grad(*a),
        };
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push("add", v, Op::Add(a, b))
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (m, n) = require_matrix("add_row", ta)?;
        if tr.shape() != [1, n] {
            return Err(mismatch("add_row", ta, tr));
        }
        let mut out = ta.data().to_vec();
        for i in 0..m {
            for (o, r) in out[i * n..(i + 1) * n].iter_mut().zip(tr.data()) {
                *o += r;
            }
        }
        let v = Tensor::matrix(m, n, out)?;
        self.push("add_row", v, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        let v = self.value(a).map(|x| x * c);
        self.push("scale", v, Op::Scale(a, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = require_matrix("matmul", ta)?;
        let (k2, n) = require_matrix("matmul", tb)?;
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let v = Tensor::matrix(m, n, matmul_nn(ta.data(), tb.data(), m, k, n))?;
        self.push("matmul", v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        require_matrix("transpose", self.value(a))?;
        let v = self.value(a).transpose();
        self.push("transpose", v, Op::Transpose(a))
    }

    /// Horizontal concatenation; every part must have the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        if parts.is_empty() {
            return Err(AutodiffError::InvalidArgument {
                op: "concat_cols",
                msg: "no inputs".into(),
            });
        }
        let rows = require_matrix("concat_cols", self.value(parts[0]))?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            let (r, c) = require_matrix("concat_cols", t)?;
            if r != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), t));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let v = Tensor::matrix(rows, total, out)?;
        self.push("concat_cols", v, Op::ConcatCols(parts.to_vec()))
    }

    /// Vertical concatenation; every part must have the same column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        if parts.is_empty() {
            return Err(AutodiffError::InvalidArgument {
                op: "concat_rows",
                msg: "no inputs".into(),
            });
        }
        let cols = require_matrix("concat_rows", self.value(parts[0]))?.1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (r, c) = require_matrix("concat_rows", t)?;
            if c != cols {
                return Err(mismatch("concat_rows", self.value(parts[0]), t));
            }
            rows += r;
            out.extend_from_slice(t.data());
        }
        let v = Tensor::matrix(rows, cols, out)?;
        self.push("concat_rows", v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push("relu", v, Op::Relu(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = self.value(a).map(f64::ln);
        self.push("ln", v, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = self.value(a).map(|x| x * x);
        self.push("square", v, Op::Square(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(AutodiffError::InvalidArgument {
                op: "mean",
                msg: "empty tensor".into(),
            });
        }
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push("mean", v, Op::Mean(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push("sum", v, Op::Sum(a))
    }

    /// Squared Frobenius norm.
    pub fn frobenius_sq(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = Tensor::scalar(self.value(a).sum_sq());
        self.push("frobenius_sq", v, Op::FrobeniusSq(a))
    }

    /// Plain Frobenius norm; its gradient at the zero matrix is zero.
    pub fn frobenius_norm(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = Tensor::scalar(self.value(a).sum_sq().sqrt());
        self.push("frobenius_norm", v, Op::FrobeniusNorm(a))
    }

    /// Divides every entry of `a` by the scalar node `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var, AutodiffError> {
        require_scalar("div_scalar", self.value(s))?;
        let d = self.item(s);
        let v = self.value(a).map(|x| x / d);
        self.push("div_scalar", v, Op::DivScalar(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = self.value(a).map(sigmoid_scalar);
        self.push("sigmoid", v, Op::Sigmoid(a))
    }

    /// Row-wise softmax of `a / tau` with max subtraction.
    pub fn softmax_rows(&mut self, a: Var, tau: f64) -> Result<Var, AutodiffError> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(AutodiffError::InvalidArgument {
                op: "softmax_rows",
                msg: format!("temperature must be positive, got {tau}"),
            });
        }
        let t = self.value(a);
        let (m, n) = require_matrix("softmax_rows", t)?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = t.row(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
            let o = &mut out[i * n..(i + 1) * n];
            let mut z = 0.0;
            for (ov, &x) in o.iter_mut().zip(row) {
                *ov = ((x - max) / tau).exp();
                z += *ov;
            }
            for ov in o.iter_mut() {
                *ov /= z;
            }
        }
        let v = Tensor::matrix(m, n, out)?;
        self.push("softmax_rows", v, Op::SoftmaxRows(a, tau))
    }

    /// Divides each row by `max(||row||_2, eps)`.
    pub fn l2_normalize_rows(&mut self, a: Var, eps: f64) -> Result<Var, AutodiffError> {
        if !(eps > 0.0) {
            return Err(AutodiffError::InvalidArgument {
                op: "l2_normalize_rows",
                msg: format!("eps must be positive, got {eps}"),
            });
        }
        let t = self.value(a);
        let (m, n) = require_matrix("l2_normalize_rows", t)?;
        let mut out = t.data().to_vec();
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(eps);
            for x in row.iter_mut() {
                *x /= norm;
            }
        }
        let v = Tensor::matrix(m, n, out)?;
        self.push("l2_normalize_rows", v, Op::L2NormalizeRows(a, eps))
    }

    /// Rows of `table` picked by `idx`; backward scatters into the picked rows only.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(table);
        let (rows, _) = require_matrix("gather_rows", t)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::InvalidArgument {
                op: "gather_rows",
                msg: format!("index {bad} out of range for {rows} rows"),
            });
        }
        let v = t.select_rows(idx);
        self.push("gather_rows", v, Op::GatherRows(table, idx.to_vec()))
    }

    /// `out[i][j] = a[i] - b[j]` for column vectors `a` (n x 1) and `b` (m x 1).
    pub fn outer_diff(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let n = require_column("outer_diff", self.value(a))?;
        let m = require_column("outer_diff", self.value(b))?;
        let (ta, tb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * m);
        for &x in ta {
            out.extend(tb.iter().map(|&y| x - y));
        }
        let v = Tensor::matrix(n, m, out)?;
        self.push("outer_diff", v, Op::OuterDiff(a, b))
    }

    /// Identity on the forward pass; blocks every upstream gradient.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let k = self.detached.len();
        let v = match self.pinned.as_ref().and_then(|p| p.get(k)) {
            Some(p) => p.clone(),
            None => self.value(a).clone(),
        };
        self.detached.push(v.clone());
        self.push_raw(v, Op::StopGradient, false)
    }

    /// A graph whose `k`-th stop-gradient node takes `values[k]` instead of
    /// its input, so detached quantities stay fixed under perturbation.
    pub fn with_pinned(values: Vec<Tensor>) -> Self {
        Self {
            pinned: Some(values),
            ..Self::default()
        }
    }

    /// Values produced by stop-gradient nodes so far, in creation order.
    pub fn detached_values(&self) -> &[Tensor] {
        &self.detached
    }

    /// Mean binary cross-entropy of column-vector logits against 0/1 labels.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var, AutodiffError> {
        let n = require_column("bce", self.value(logits))?;
        if labels.len() != n {
            return Err(AutodiffError::InvalidArgument {
                op: "bce",
                msg: format!("{} labels for {} logits", labels.len(), n),
            });
        }
        if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(AutodiffError::InvalidArgument {
                op: "bce",
                msg: format!("label {y} is not binary"),
            });
        }
        if n == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: "bce",
                msg: "empty batch".into(),
            });
        }
        let total: f64 = self
            .value(logits)
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| {
                let (p, _) = clamp_prob(sigmoid_scalar(z));
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        let v = Tensor::scalar(total / n as f64);
        self.push("bce", v, Op::Bce(logits, labels.to_vec()))
    }

    /// Mean Bernoulli KL divergence `KL[sigmoid(p) || sigmoid(q)]` over rows.
    pub fn kl_bernoulli(&mut self, p_logits: Var, q_logits: Var) -> Result<Var, AutodiffError> {
        let n = require_column("kl_bernoulli", self.value(p_logits))?;
        self.same_shape("kl_bernoulli", p_logits, q_logits)?;
        if n == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: "kl_bernoulli",
                msg: "empty batch".into(),
            });
        }
        let total: f64 = self
            .value(p_logits)
            .data()
            .iter()
            .zip(self.value(q_logits).data())
            .map(|(&a, &b)| {
                let (p, _) = clamp_prob(sigmoid_scalar(a));
                let (q, _) = clamp_prob(sigmoid_scalar(b));
                p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
            })
            .sum();
        let v = Tensor::scalar(total / n as f64);
        self.push("kl_bernoulli", v, Op::KlBernoulli(p_logits, q_logits))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        let t = self.value(root);
        if t.len() != 1 {
            return Err(AutodiffError::NonScalarRoot(t.shape().to_vec()));
        }
        self.backward_with_seed(root, Tensor::full(t.shape(), 1.0))
    }

    /// Reverse pass from an arbitrary node given the upstream gradient `seed`.
    pub fn backward_with_seed(&self, root: Var, seed: Tensor) -> Result<Gradients, AutodiffError> {
        let rv = self.value(root);
        if seed.shape() != rv.shape() {
            return Err(mismatch("backward", rv, &seed));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.requires_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*row) {
                    let n = g.cols();
                    let mut acc = vec![0.0; n];
                    for i in 0..g.rows() {
                        for (s, v) in acc.iter_mut().zip(g.row(i)) {
                            *s += v;
                        }
                    }
                    self.accumulate(grads, *row, Tensor::matrix(1, n, acc).expect("row shape"));
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|x| x * c)),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.requires_grad(*a) {
                    let da = matmul_nt(g.data(), tb.data(), m, n, k);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da).expect("matmul grad"));
                }
                if self.requires_grad(*b) {
                    let db = matmul_tn(ta.data(), g.data(), m, k, n);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db).expect("matmul grad"));
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.requires_grad(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            d.extend_from_slice(&g.row(i)[offset..offset + w]);
                        }
                        self.accumulate(grads, p, Tensor::matrix(rows, w, d).expect("concat grad"));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    if self.requires_grad(p) {
                        let d = g.data()[offset * cols..(offset + r) * cols].to_vec();
                        self.accumulate(grads, p, Tensor::matrix(r, cols, d).expect("concat grad"));
                    }
                    offset += r;
                }
            }
            Op::Relu(a) => {
                let d = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::Ln(a) => {
                let d = g.zip_map(self.value(*a), |gv, x| gv / x);
                self.accumulate(grads, *a, d);
            }
            Op::Square(a) => {
                let d = g.zip_map(self.value(*a), |gv, x| 2.0 * gv * x);
                self.accumulate(grads, *a, d);
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                let s = g.item() / t.len() as f64;
                self.accumulate(grads, *a, Tensor::full(t.shape(), s));
            }
            Op::Sum(a) => {
                let t = self.value(*a);
                self.accumulate(grads, *a, Tensor::full(t.shape(), g.item()));
            }
            Op::FrobeniusSq(a) => {
                let s = 2.0 * g.item();
                self.accumulate(grads, *a, self.value(*a).map(|x| s * x));
            }
            Op::FrobeniusNorm(a) => {
                let norm = out.item();
                let t = self.value(*a);
                if norm > 0.0 {
                    let s = g.item() / norm;
                    self.accumulate(grads, *a, t.map(|x| s * x));
                } else {
                    self.accumulate(grads, *a, Tensor::zeros(t.shape()));
                }
            }
            Op::DivScalar(a, s) => {
                let d = self.item(*s);
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.map(|x| x / d));
                }
                if self.requires_grad(*s) {
                    let dot: f64 = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(x, y)| x * y)
                        .sum();
                    let shape = self.value(*s).shape().to_vec();
                    let ds = Tensor::new(shape, vec![-dot / (d * d)]).expect("scalar");
                    self.accumulate(grads, *s, ds);
                }
            }
            Op::Sigmoid(a) => {
                let d = g.zip_map(out, |gv, y| gv * y * (1.0 - y));
                self.accumulate(grads, *a, d);
            }
            Op::SoftmaxRows(a, tau) => {
                let (m, n) = (out.rows(), out.cols());
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    let (y, gy) = (out.row(i), g.row(i));
                    let dot: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                    for j in 0..n {
                        d[i * n + j] = y[j] * (gy[j] - dot) / tau;
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(m, n, d).expect("softmax grad"));
            }
            Op::L2NormalizeRows(a, eps) => {
                let x = self.value(*a);
                let (m, n) = (x.rows(), x.cols());
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    let xr = x.row(i);
                    let (y, gy) = (out.row(i), g.row(i));
                    let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dr = &mut d[i * n..(i + 1) * n];
                    if norm > *eps {
                        let dot: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                        for j in 0..n {
                            dr[j] = (gy[j] - y[j] * dot) / norm;
                        }
                    } else {
                        for j in 0..n {
                            dr[j] = gy[j] / eps;
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(m, n, d).expect("normalize grad"));
            }
            Op::GatherRows(table, idx) => {
                let t = self.value(*table);
                let c = t.cols();
                let mut d = Tensor::zeros(t.shape());
                let dd = d.data_mut();
                for (r, &i) in idx.iter().enumerate() {
                    for (dst, src) in dd[i * c..(i + 1) * c].iter_mut().zip(g.row(r)) {
                        *dst += src;
                    }
                }
                self.accumulate(grads, *table, d);
            }
            Op::OuterDiff(a, b) => {
                let (n, m) = (out.rows(), out.cols());
                if self.requires_grad(*a) {
                    let da: Vec<f64> = (0..n).map(|i| g.row(i).iter().sum()).collect();
                    self.accumulate(grads, *a, Tensor::column(da));
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; m];
                    for i in 0..n {
                        for (s, v) in db.iter_mut().zip(g.row(i)) {
                            *s -= v;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::column(db));
                }
            }
            Op::Bce(logits, labels) => {
                let z = self.value(*logits);
                let scale = g.item() / labels.len() as f64;
                let d: Vec<f64> = z
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&zv, &y)| {
                        let (p, clamped) = clamp_prob(sigmoid_scalar(zv));
                        if clamped {
                            0.0
                        } else {
                            scale * (p - y)
                        }
                    })
                    .collect();
                self.accumulate(grads, *logits, Tensor::column(d));
            }
            Op::KlBernoulli(pa, qa) => {
                let (tp, tq) = (self.value(*pa), self.value(*qa));
                let scale = g.item() / tp.len() as f64;
                let mut dp = Vec::with_capacity(tp.len());
                let mut dq = Vec::with_capacity(tp.len());
                for (&a, &b) in tp.data().iter().zip(tq.data()) {
                    let (p, pc) = clamp_prob(sigmoid_scalar(a));
                    let (q, qc) = clamp_prob(sigmoid_scalar(b));
                    let dkl_dp = (p / q).ln() - ((1.0 - p) / (1.0 - q)).ln();
                    let dkl_dq = -p / q + (1.0 - p) / (1.0 - q);
                    dp.push(if pc { 0.0 } else { scale * dkl_dp * p * (1.0 - p) });
                    dq.push(if qc { 0.0 } else { scale * dkl_dq * q * (1.0 - q) });
                }
                if self.requires_grad(*pa) {
                    self.accumulate(grads, *pa, Tensor::column(dp));
                }
                if self.requires_grad(*qa) {
                    self.accumulate(grads, *qa, Tensor::column(dq));
                }
            }
        }
    }
}

/// Gradients produced by a reverse pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, if `v` was reached.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `v` when the root does not depend on it.
    pub fn get_or_zeros(&self, graph: &Graph, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.value(v).shape()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
