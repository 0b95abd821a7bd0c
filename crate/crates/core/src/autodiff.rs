//! Dense-tensor math with reverse-mode differentiation.
//!
//! A [`Graph`] is an eager tape: every op computes its value immediately and
//! records parents, so the node order is already topological and backward is
//! a single reverse scan. Graphs are rebuilt per training step, which keeps
//! variable turn counts and sentence lengths trivial.
//!
//! All values are 64-bit floats. Shape mismatches and non-finite results
//! panic: both are contract violations in graph-building code, not
//! recoverable runtime states.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A row-major dense tensor of `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        let count: usize = shape.iter().product();
        assert_eq!(
            count,
            values.len(),
            "tensor shape {shape:?} does not match value count {}",
            values.len()
        );
        Tensor { shape, values }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let count = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; count],
        }
    }

    pub fn scalar(x: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            values: vec![x],
        }
    }

    pub fn vector(values: Vec<f64>) -> Tensor {
        Tensor {
            shape: vec![values.len()],
            values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Tensor {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on a non-scalar tensor");
        self.values[0]
    }

    fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "expected a matrix");
        self.shape[0]
    }

    fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "expected a matrix");
        self.shape[1]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Sqrt(NodeId),
    Concat(Vec<NodeId>),
    SoftmaxRows(NodeId),
    Row(NodeId, usize),
    Col(NodeId, usize),
    Element(NodeId, usize),
    Dot(NodeId, NodeId),
    Sum(NodeId),
    CrossEntropy(NodeId, usize),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Recorded computation with reverse-mode gradients.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

fn check_finite(t: &Tensor, op: &str) {
    assert!(t.is_finite(), "non-finite value produced by {op}");
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the loss w.r.t. a node, available after [`backward`].
    /// Leaves unreachable from the loss get exact-zero gradients.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// A differentiable leaf (parameter or input).
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        check_finite(&t, "leaf");
        self.push(Op::Leaf, t)
    }

    /// A non-differentiable constant.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        check_finite(&t, "constant");
        self.push(Op::Constant, t)
    }

    pub fn scalar(&mut self, x: f64) -> NodeId {
        self.constant(Tensor::scalar(x))
    }

    /// `[m,k] × [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = (av.rows(), av.cols());
        let (k2, n) = (bv.rows(), bv.cols());
        assert_eq!(k, k2, "matmul inner dimensions disagree: {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a_ip = av.values[i * k + p];
                if a_ip == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a_ip * bv.values[p * n + j];
                }
            }
        }
        let t = Tensor::matrix(m, n, out);
        check_finite(&t, "matmul");
        self.push(Op::MatMul(a, b), t)
    }

    /// `[m,n] × [n] -> [m]`.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let (wv, xv) = (&self.nodes[w.0].value, &self.nodes[x.0].value);
        let (m, n) = (wv.rows(), wv.cols());
        assert_eq!(
            xv.shape(),
            [n],
            "matvec: matrix cols {n} vs vector shape {:?}",
            xv.shape()
        );
        let mut out = vec![0.0; m];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &wv.values[i * n..(i + 1) * n];
            *o = row.iter().zip(&xv.values).map(|(a, b)| a * b).sum();
        }
        let t = Tensor::vector(out);
        check_finite(&t, "matvec");
        self.push(Op::MatVec(w, x), t)
    }

    fn binary_same_shape(&self, a: NodeId, b: NodeId, op: &str) {
        assert_eq!(
            self.nodes[a.0].value.shape(),
            self.nodes[b.0].value.shape(),
            "{op}: shape mismatch"
        );
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(a, b, "add");
        let values = self.nodes[a.0]
            .value
            .values
            .iter()
            .zip(&self.nodes[b.0].value.values)
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.nodes[a.0].value.shape.clone(), values);
        check_finite(&t, "add");
        self.push(Op::Add(a, b), t)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(a, b, "sub");
        let values = self.nodes[a.0]
            .value
            .values
            .iter()
            .zip(&self.nodes[b.0].value.values)
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::new(self.nodes[a.0].value.shape.clone(), values);
        check_finite(&t, "sub");
        self.push(Op::Sub(a, b), t)
    }

    /// Elementwise product. One operand may be a scalar, which broadcasts.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let t = if av.is_scalar() && !bv.is_scalar() {
            let s = av.values[0];
            Tensor::new(bv.shape.clone(), bv.values.iter().map(|y| s * y).collect())
        } else if bv.is_scalar() && !av.is_scalar() {
            let s = bv.values[0];
            Tensor::new(av.shape.clone(), av.values.iter().map(|x| x * s).collect())
        } else {
            assert_eq!(av.shape(), bv.shape(), "mul: shape mismatch");
            Tensor::new(
                av.shape.clone(),
                av.values.iter().zip(&bv.values).map(|(x, y)| x * y).collect(),
            )
        };
        check_finite(&t, "mul");
        self.push(Op::Mul(a, b), t)
    }

    /// Elementwise quotient. The divisor may be a scalar, which broadcasts.
    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let t = if bv.is_scalar() && !av.is_scalar() {
            let s = bv.values[0];
            Tensor::new(av.shape.clone(), av.values.iter().map(|x| x / s).collect())
        } else {
            assert_eq!(av.shape(), bv.shape(), "div: shape mismatch");
            Tensor::new(
                av.shape.clone(),
                av.values.iter().zip(&bv.values).map(|(x, y)| x / y).collect(),
            )
        };
        check_finite(&t, "div");
        self.push(Op::Div(a, b), t)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let av = &self.nodes[a.0].value;
        let t = Tensor::new(av.shape.clone(), av.values.iter().map(|x| x * c).collect());
        check_finite(&t, "scale");
        self.push(Op::Scale(a, c), t)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let t = Tensor::new(av.shape.clone(), av.values.iter().map(|x| x.tanh()).collect());
        check_finite(&t, "tanh");
        self.push(Op::Tanh(a), t)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let t = Tensor::new(
            av.shape.clone(),
            av.values.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect(),
        );
        check_finite(&t, "sigmoid");
        self.push(Op::Sigmoid(a), t)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let t = Tensor::new(av.shape.clone(), av.values.iter().map(|x| x.sqrt()).collect());
        check_finite(&t, "sqrt");
        self.push(Op::Sqrt(a), t)
    }

    /// Concatenate 1-D tensors.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let mut values = Vec::new();
        for &p in parts {
            let pv = &self.nodes[p.0].value;
            assert_eq!(pv.shape.len(), 1, "concat expects 1-D tensors");
            values.extend_from_slice(&pv.values);
        }
        let t = Tensor::vector(values);
        check_finite(&t, "concat");
        self.push(Op::Concat(parts.to_vec()), t)
    }

    /// Max-shifted softmax over each row of a matrix, or over a 1-D tensor
    /// treated as a single row.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let (rows, cols) = match av.shape.len() {
            1 => (1, av.shape[0]),
            2 => (av.shape[0], av.shape[1]),
            _ => panic!("softmax_rows expects a vector or matrix"),
        };
        let mut values = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &av.values[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                values[r * cols + j] = e;
                sum += e;
            }
            for j in 0..cols {
                values[r * cols + j] /= sum;
            }
        }
        let t = Tensor::new(av.shape.clone(), values);
        check_finite(&t, "softmax_rows");
        self.push(Op::SoftmaxRows(a), t)
    }

    /// Select row `i` of a matrix; the standard embedding lookup.
    pub fn row(&mut self, m: NodeId, i: usize) -> NodeId {
        let mv = &self.nodes[m.0].value;
        let (rows, cols) = (mv.rows(), mv.cols());
        assert!(i < rows, "row index {i} out of range for {rows} rows");
        let t = Tensor::vector(mv.values[i * cols..(i + 1) * cols].to_vec());
        self.push(Op::Row(m, i), t)
    }

    /// Select column `j` of a matrix.
    pub fn col(&mut self, m: NodeId, j: usize) -> NodeId {
        let mv = &self.nodes[m.0].value;
        let (rows, cols) = (mv.rows(), mv.cols());
        assert!(j < cols, "col index {j} out of range for {cols} cols");
        let t = Tensor::vector((0..rows).map(|r| mv.values[r * cols + j]).collect());
        self.push(Op::Col(m, j), t)
    }

    /// Select one element of a 1-D tensor as a scalar.
    pub fn element(&mut self, v: NodeId, i: usize) -> NodeId {
        let vv = &self.nodes[v.0].value;
        assert_eq!(vv.shape.len(), 1, "element expects a 1-D tensor");
        assert!(i < vv.values.len(), "element index out of range");
        let t = Tensor::scalar(vv.values[i]);
        self.push(Op::Element(v, i), t)
    }

    /// Dot product of two equal-length 1-D tensors, as a scalar.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(a, b, "dot");
        let av = &self.nodes[a.0].value;
        assert_eq!(av.shape.len(), 1, "dot expects 1-D tensors");
        let s: f64 = av
            .values
            .iter()
            .zip(&self.nodes[b.0].value.values)
            .map(|(x, y)| x * y)
            .sum();
        let t = Tensor::scalar(s);
        check_finite(&t, "dot");
        self.push(Op::Dot(a, b), t)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.values.iter().sum();
        let t = Tensor::scalar(s);
        check_finite(&t, "sum");
        self.push(Op::Sum(a), t)
    }

    /// Cross-entropy between `logits` (1-D over the vocabulary) and a target
    /// id: `logsumexp(logits) - logits[target]`, fused for stability.
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> NodeId {
        let lv = &self.nodes[logits.0].value;
        assert_eq!(lv.shape.len(), 1, "cross_entropy expects 1-D logits");
        assert!(target < lv.values.len(), "cross_entropy target out of range");
        let max = lv.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.values.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let t = Tensor::scalar(lse - lv.values[target]);
        check_finite(&t, "cross_entropy");
        self.push(Op::CrossEntropy(logits, target), t)
    }

    fn accumulate(&mut self, id: NodeId, delta: &Tensor) {
        let slot = &mut self.grads[id.0];
        match slot {
            Some(g) => {
                for (gi, di) in g.values.iter_mut().zip(&delta.values) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.clone()),
        }
    }

    /// Reverse-mode sweep from a scalar loss. Populates gradients for every
    /// node reachable from the loss; unreachable leaves get exact zeros.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::Graph(
                "backward already run on this graph; build a fresh graph".into(),
            ));
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Graph("backward requires a scalar loss".into()));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(grad) = self.grads[idx].clone() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf | Op::Constant => {}
                Op::MatMul(a, b) => {
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    let (m, k) = (av.rows(), av.cols());
                    let n = bv.cols();
                    // dA = dC·Bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += grad.values[i * n + j] * bv.values[p * n + j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    // dB = Aᵀ·dC
                    let mut db = vec![0.0; k * n];
                    for p in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += av.values[i * k + p] * grad.values[i * n + j];
                            }
                            db[p * n + j] = s;
                        }
                    }
                    self.accumulate(a, &Tensor::matrix(m, k, da));
                    self.accumulate(b, &Tensor::matrix(k, n, db));
                }
                Op::MatVec(w, x) => {
                    let wv = self.nodes[w.0].value.clone();
                    let xv = self.nodes[x.0].value.clone();
                    let (m, n) = (wv.rows(), wv.cols());
                    // dW = dy ⊗ x
                    let mut dw = vec![0.0; m * n];
                    for i in 0..m {
                        let g = grad.values[i];
                        if g == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            dw[i * n + j] = g * xv.values[j];
                        }
                    }
                    // dx = Wᵀ dy
                    let mut dx = vec![0.0; n];
                    for i in 0..m {
                        let g = grad.values[i];
                        if g == 0.0 {
                            continue;
                        }
                        for (j, d) in dx.iter_mut().enumerate() {
                            *d += wv.values[i * n + j] * g;
                        }
                    }
                    self.accumulate(w, &Tensor::matrix(m, n, dw));
                    self.accumulate(x, &Tensor::vector(dx));
                }
                Op::Add(a, b) => {
                    self.accumulate(a, &grad);
                    self.accumulate(b, &grad);
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, &grad);
                    let neg = Tensor::new(
                        grad.shape.clone(),
                        grad.values.iter().map(|g| -g).collect(),
                    );
                    self.accumulate(b, &neg);
                }
                Op::Mul(a, b) => {
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    if av.is_scalar() && !bv.is_scalar() {
                        // d a = Σ grad ⊙ b ; d b = a · grad
                        let da: f64 = grad.values.iter().zip(&bv.values).map(|(g, y)| g * y).sum();
                        self.accumulate(a, &Tensor::scalar(da));
                        let s = av.values[0];
                        let db = Tensor::new(
                            grad.shape.clone(),
                            grad.values.iter().map(|g| g * s).collect(),
                        );
                        self.accumulate(b, &db);
                    } else if bv.is_scalar() && !av.is_scalar() {
                        let db: f64 = grad.values.iter().zip(&av.values).map(|(g, x)| g * x).sum();
                        self.accumulate(b, &Tensor::scalar(db));
                        let s = bv.values[0];
                        let da = Tensor::new(
                            grad.shape.clone(),
                            grad.values.iter().map(|g| g * s).collect(),
                        );
                        self.accumulate(a, &da);
                    } else {
                        let da = Tensor::new(
                            grad.shape.clone(),
                            grad.values.iter().zip(&bv.values).map(|(g, y)| g * y).collect(),
                        );
                        let db = Tensor::new(
                            grad.shape.clone(),
                            grad.values.iter().zip(&av.values).map(|(g, x)| g * x).collect(),
                        );
                        self.accumulate(a, &da);
                        self.accumulate(b, &db);
                    }
                }
                Op::Div(a, b) => {
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    if bv.is_scalar() && !av.is_scalar() {
                        let s = bv.values[0];
                        let da = Tensor::new(
                            grad.shape.clone(),
                            grad.values.iter().map(|g| g / s).collect(),
                        );
                        let db: f64 = grad
                            .values
                            .iter()
                            .zip(&av.values)
                            .map(|(g, x)| -g * x / (s * s))
                            .sum();
                        self.accumulate(a, &da);
                        self.accumulate(b, &Tensor::scalar(db));
                    } else {
                        let da = Tensor::new(
                            grad.shape.clone(),
                            grad.values.iter().zip(&bv.values).map(|(g, y)| g / y).collect(),
                        );
                        let db_vals: Vec<f64> = grad
                            .values
                            .iter()
                            .zip(av.values.iter().zip(&bv.values))
                            .map(|(g, (x, y))| -g * x / (y * y))
                            .collect();
                        self.accumulate(a, &da);
                        self.accumulate(b, &Tensor::new(grad.shape.clone(), db_vals));
                    }
                }
                Op::Scale(a, c) => {
                    let da = Tensor::new(
                        grad.shape.clone(),
                        grad.values.iter().map(|g| g * c).collect(),
                    );
                    self.accumulate(a, &da);
                }
                Op::Tanh(a) => {
                    let yv = self.nodes[idx].value.clone();
                    let da = Tensor::new(
                        grad.shape.clone(),
                        grad.values
                            .iter()
                            .zip(&yv.values)
                            .map(|(g, y)| g * (1.0 - y * y))
                            .collect(),
                    );
                    self.accumulate(a, &da);
                }
                Op::Sigmoid(a) => {
                    let yv = self.nodes[idx].value.clone();
                    let da = Tensor::new(
                        grad.shape.clone(),
                        grad.values
                            .iter()
                            .zip(&yv.values)
                            .map(|(g, y)| g * y * (1.0 - y))
                            .collect(),
                    );
                    self.accumulate(a, &da);
                }
                Op::Sqrt(a) => {
                    let yv = self.nodes[idx].value.clone();
                    let da = Tensor::new(
                        grad.shape.clone(),
                        grad.values
                            .iter()
                            .zip(&yv.values)
                            .map(|(g, y)| g * 0.5 / y)
                            .collect(),
                    );
                    self.accumulate(a, &da);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        let slice = Tensor::vector(grad.values[offset..offset + len].to_vec());
                        self.accumulate(p, &slice);
                        offset += len;
                    }
                }
                Op::SoftmaxRows(a) => {
                    let yv = self.nodes[idx].value.clone();
                    let (rows, cols) = match yv.shape.len() {
                        1 => (1, yv.shape[0]),
                        _ => (yv.shape[0], yv.shape[1]),
                    };
                    let mut da = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let y = &yv.values[r * cols..(r + 1) * cols];
                        let g = &grad.values[r * cols..(r + 1) * cols];
                        let dot: f64 = y.iter().zip(g).map(|(yi, gi)| yi * gi).sum();
                        for j in 0..cols {
                            da[r * cols + j] = y[j] * (g[j] - dot);
                        }
                    }
                    self.accumulate(a, &Tensor::new(yv.shape.clone(), da));
                }
                Op::Row(m, i) => {
                    let mv_shape = self.nodes[m.0].value.shape.clone();
                    let cols = mv_shape[1];
                    let mut dm = Tensor::zeros(mv_shape);
                    dm.values[i * cols..(i + 1) * cols].copy_from_slice(&grad.values);
                    self.accumulate(m, &dm);
                }
                Op::Col(m, j) => {
                    let mv_shape = self.nodes[m.0].value.shape.clone();
                    let (rows, cols) = (mv_shape[0], mv_shape[1]);
                    let mut dm = Tensor::zeros(mv_shape);
                    for r in 0..rows {
                        dm.values[r * cols + j] = grad.values[r];
                    }
                    self.accumulate(m, &dm);
                }
                Op::Element(v, i) => {
                    let mut dv = Tensor::zeros(self.nodes[v.0].value.shape.clone());
                    dv.values[i] = grad.values[0];
                    self.accumulate(v, &dv);
                }
                Op::Dot(a, b) => {
                    let g = grad.values[0];
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    let da = Tensor::vector(bv.values.iter().map(|y| g * y).collect());
                    let db = Tensor::vector(av.values.iter().map(|x| g * x).collect());
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Sum(a) => {
                    let g = grad.values[0];
                    let shape = self.nodes[a.0].value.shape.clone();
                    let count = self.nodes[a.0].value.len();
                    self.accumulate(a, &Tensor::new(shape, vec![g; count]));
                }
                Op::CrossEntropy(logits, target) => {
                    let g = grad.values[0];
                    let lv = self.nodes[logits.0].value.clone();
                    let max = lv.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = lv.values.iter().map(|x| (x - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    let mut dl: Vec<f64> = exps.iter().map(|e| g * e / sum).collect();
                    dl[target] -= g;
                    self.accumulate(logits, &Tensor::vector(dl));
                }
            }
        }

        // Unreachable leaves still own a gradient: exactly zero.
        for idx in 0..self.nodes.len() {
            if matches!(self.nodes[idx].op, Op::Leaf) && self.grads[idx].is_none() {
                self.grads[idx] = Some(Tensor::zeros(self.nodes[idx].value.shape.clone()));
            }
        }
        Ok(())
    }
}

/// Result of comparing analytic gradients against central finite differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, element index) of the worst element.
    pub worst: (usize, usize),
    pub pass: bool,
}

/// Compare the analytic gradient of `build`'s scalar output against central
/// finite differences over every element of every parameter.
///
/// `build` must construct the same computation each call from the leaves it
/// is handed; determinism is on the caller.
pub fn gradient_check<F>(params: &[Tensor], build: F, step: f64, tolerance: f64) -> GradCheckReport
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let eval = |tensors: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let leaves: Vec<NodeId> = tensors.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = build(&mut g, &leaves);
        g.value(loss).item()
    };

    // analytic pass
    let mut g = Graph::new();
    let leaves: Vec<NodeId> = params.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &leaves);
    g.backward(loss).expect("gradient_check backward failed");
    let analytic: Vec<Tensor> = leaves
        .iter()
        .map(|&l| g.grad(l).expect("missing leaf gradient").clone())
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        pass: true,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for p in 0..params.len() {
        for e in 0..params[p].len() {
            let orig = work[p].values()[e];
            work[p].values_mut()[e] = orig + step;
            let up = eval(&work);
            work[p].values_mut()[e] = orig - step;
            let down = eval(&work);
            work[p].values_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[p].values()[e];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (p, e);
            }
        }
    }
    report.pass = report.max_rel_error < tolerance;
    report
}
