//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! Every forward op records one node holding its output value; `backward`
//! walks the nodes in exact reverse order and pushes adjoints to the
//! inputs. Gradients accumulate into per-leaf buffers so that a second
//! backward pass without zeroing doubles them.

use std::sync::Arc;

use thiserror::Error;

use super::tensor::{ShapeError, Tensor};

#[derive(Debug, Error)]
pub enum AdError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("backward requires a scalar loss node, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Piecewise scalar function table used by the speed-likelihood lookup.
///
/// In step mode the lookup returns the bin value with zero local slope; in
/// interpolation mode it is piecewise linear between bin centers.
#[derive(Debug, Clone)]
pub struct LookupTable {
    pub bin_width: f64,
    pub values: Vec<f64>,
    pub interpolate: bool,
}

impl LookupTable {
    /// Returns (value, local slope) at `v >= 0`.
    pub fn eval(&self, v: f64) -> (f64, f64) {
        let n = self.values.len();
        debug_assert!(n > 0 && self.bin_width > 0.0);
        let v = v.max(0.0);
        if !self.interpolate {
            let idx = ((v / self.bin_width) as usize).min(n - 1);
            return (self.values[idx], 0.0);
        }
        // Linear between bin centers, flat outside the first/last center.
        let pos = v / self.bin_width - 0.5;
        if pos <= 0.0 {
            return (self.values[0], 0.0);
        }
        let lo = pos.floor() as usize;
        if lo + 1 >= n {
            return (self.values[n - 1], 0.0);
        }
        let frac = pos - lo as f64;
        let (a, b) = (self.values[lo], self.values[lo + 1]);
        (a + frac * (b - a), (b - a) / self.bin_width)
    }
}

const LOG_FLOOR: f64 = 1e-12;
const EXP_CEIL: f64 = 700.0;
const SQRT_GRAD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Affine { w: NodeId, x: NodeId, b: NodeId },
    Slice { x: NodeId, start: usize, len: usize },
    Conv1dFh { w: NodeId, x: NodeId, b: NodeId },
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    Concat(Vec<NodeId>),
    Col { x: NodeId, col: usize },
    Reshape(NodeId),
    SumAxis { x: NodeId, axis: usize },
    SumAll(NodeId),
    LogGuarded(NodeId),
    ExpGuarded(NodeId),
    SqrtGuarded(NodeId),
    Scale { x: NodeId, c: f64 },
    AddScalar(NodeId),
    ScaleByScalar { x: NodeId, s: NodeId },
    Pick { x: NodeId, index: usize },
    Dot(NodeId, NodeId),
    Lookup { x: NodeId, table: Arc<LookupTable> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Persistent gradient slot: only leaves created via `param` or `input`
/// carry one.
enum LeafGrad {
    None,
    Tracked(Tensor),
}

pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<LeafGrad>,
    bindings: Vec<(NodeId, String)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), leaf_grads: Vec::new(), bindings: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite forward value out of {op:?}");
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op, needs_grad });
        self.leaf_grads.push(LeafGrad::None);
        id
    }

    /// Leaf bound to a parameter name; its gradient is exported by
    /// [`param_grads`](Self::param_grads).
    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        let id = self.push(value, Op::Leaf, true);
        self.leaf_grads[id.0] = LeafGrad::Tracked(Tensor::zeros(&shape));
        self.bindings.push((id, name.to_string()));
        id
    }

    /// Gradient-tracked leaf without a parameter binding (model inputs).
    pub fn input(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        let id = self.push(value, Op::Leaf, true);
        self.leaf_grads[id.0] = LeafGrad::Tracked(Tensor::zeros(&shape));
        id
    }

    /// Untracked constant leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    pub fn zeros(&mut self, shape: &[usize]) -> NodeId {
        self.constant(Tensor::zeros(shape))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a `param`/`input` leaf, if any backward pass
    /// has run. Constants and interior nodes return `None`.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        match &self.leaf_grads[id.0] {
            LeafGrad::Tracked(g) => Some(g),
            LeafGrad::None => None,
        }
    }

    /// (name, gradient) for every parameter-bound leaf.
    pub fn param_grads(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.bindings.iter().map(|(id, name)| {
            let g = match &self.leaf_grads[id.0] {
                LeafGrad::Tracked(g) => g,
                LeafGrad::None => unreachable!("bound leaf without grad slot"),
            };
            (name.as_str(), g)
        })
    }

    pub fn zero_grads(&mut self) {
        for slot in &mut self.leaf_grads {
            if let LeafGrad::Tracked(g) = slot {
                g.fill(0.0);
            }
        }
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ---- forward ops ---------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ShapeError> {
        self.value(a).check_same_shape(self.value(b), "add")?;
        let v = {
            let mut v = self.value(a).clone();
            v.axpy(1.0, self.value(b));
            v
        };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ShapeError> {
        self.value(a).check_same_shape(self.value(b), "sub")?;
        let v = {
            let mut v = self.value(a).clone();
            v.axpy(-1.0, self.value(b));
            v
        };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ShapeError> {
        self.value(a).check_same_shape(self.value(b), "mul")?;
        let v = Tensor::new(
            self.value(a).shape().to_vec(),
            self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect(),
        );
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ShapeError> {
        let v = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::MatMul(a, b), ng))
    }

    /// Fused w x + b for a vector x.
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId, ShapeError> {
        let (wv, xv, bv) = (self.value(w), self.value(x), self.value(b));
        if xv.rank() != 1 || wv.cols() != xv.len() || bv.len() != wv.rows() {
            return Err(ShapeError::Mismatch {
                op: "affine",
                left: wv.shape().to_vec(),
                right: xv.shape().to_vec(),
            });
        }
        let mut v = wv.matmul(xv)?;
        v.axpy(1.0, bv);
        let ng = self.needs(w) || self.needs(x) || self.needs(b);
        Ok(self.push(v, Op::Affine { w, x, b }, ng))
    }

    /// Contiguous sub-vector view as its own node.
    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, ShapeError> {
        let xv = self.value(x);
        if xv.rank() != 1 || start + len > xv.len() {
            return Err(ShapeError::Mismatch {
                op: "slice",
                left: xv.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let v = Tensor::vector(xv.data()[start..start + len].to_vec());
        let ng = self.needs(x);
        Ok(self.push(v, Op::Slice { x, start, len }, ng))
    }

    /// Full-height 1-D convolution: filters `w` of shape (K, F) slide over
    /// the columns of `x` (F, N) with stride 1, bias per filter, so the
    /// output is (K, N).
    pub fn conv1d_full_height(
        &mut self,
        w: NodeId,
        x: NodeId,
        b: NodeId,
    ) -> Result<NodeId, ShapeError> {
        let (wv, xv, bv) = (self.value(w), self.value(x), self.value(b));
        if wv.cols() != xv.rows() || bv.len() != wv.rows() {
            return Err(ShapeError::Mismatch {
                op: "conv1d_full_height",
                left: wv.shape().to_vec(),
                right: xv.shape().to_vec(),
            });
        }
        let mut v = wv.matmul(xv)?;
        let (k, n) = (v.rows(), v.cols());
        {
            let data = v.data_mut();
            for row in 0..k {
                let bias = bv.data()[row];
                for item in data[row * n..(row + 1) * n].iter_mut() {
                    *item += bias;
                }
            }
        }
        let ng = self.needs(w) || self.needs(x) || self.needs(b);
        Ok(self.push(v, Op::Conv1dFh { w, x, b }, ng))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| a.max(0.0));
        let ng = self.needs(x);
        self.push(v, Op::Relu(x), ng)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::tanh);
        let ng = self.needs(x);
        self.push(v, Op::Tanh(x), ng)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| 1.0 / (1.0 + (-a).exp()));
        let ng = self.needs(x);
        self.push(v, Op::Sigmoid(x), ng)
    }

    /// Softmax along the last dimension (each row of a matrix, the whole
    /// vector for rank 1), with the usual max-shift for stability.
    pub fn softmax_lastdim(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let cols = if xv.rank() >= 2 { xv.cols() } else { xv.len() };
        let mut out = xv.clone();
        {
            let data = out.data_mut();
            for row in data.chunks_mut(cols) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::SoftmaxRows(x), ng)
    }

    /// Concatenate tensors into one vector, in argument order.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut data = Vec::with_capacity(parts.iter().map(|p| self.value(*p).len()).sum());
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), ng)
    }

    /// Extract column `col` of a matrix as a vector.
    pub fn col(&mut self, x: NodeId, col: usize) -> NodeId {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        debug_assert!(col < cols);
        let data = (0..rows).map(|r| xv.at(r, col)).collect();
        let ng = self.needs(x);
        self.push(Tensor::vector(data), Op::Col { x, col }, ng)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, ShapeError> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != xv.len() {
            return Err(ShapeError::Mismatch {
                op: "reshape",
                left: xv.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        let v = Tensor::new(shape.to_vec(), xv.data().to_vec());
        let ng = self.needs(x);
        Ok(self.push(v, Op::Reshape(x), ng))
    }

    /// Sum a matrix along `axis` (0 sums over rows, producing a (cols,)
    /// vector; 1 the transpose of that).
    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> NodeId {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let v = match axis {
            0 => {
                let mut out = vec![0.0; cols];
                for r in 0..rows {
                    for (c, o) in out.iter_mut().enumerate() {
                        *o += xv.at(r, c);
                    }
                }
                Tensor::vector(out)
            }
            _ => {
                let mut out = vec![0.0; rows];
                for (r, o) in out.iter_mut().enumerate() {
                    for c in 0..cols {
                        *o += xv.at(r, c);
                    }
                }
                Tensor::vector(out)
            }
        };
        let ng = self.needs(x);
        self.push(v, Op::SumAxis { x, axis }, ng)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).sum());
        let ng = self.needs(x);
        self.push(v, Op::SumAll(x), ng)
    }

    /// Elementwise natural log of max(x, 1e-12).
    pub fn log_guarded(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| a.max(LOG_FLOOR).ln());
        let ng = self.needs(x);
        self.push(v, Op::LogGuarded(x), ng)
    }

    /// Elementwise exp with the argument clamped to 700.
    pub fn exp_guarded(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| a.min(EXP_CEIL).exp());
        let ng = self.needs(x);
        self.push(v, Op::ExpGuarded(x), ng)
    }

    /// Elementwise sqrt of max(x, 0); the gradient uses a floored
    /// denominator so it stays finite at 0.
    pub fn sqrt_guarded(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| a.max(0.0).sqrt());
        let ng = self.needs(x);
        self.push(v, Op::SqrtGuarded(x), ng)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).map(|a| a * c);
        let ng = self.needs(x);
        self.push(v, Op::Scale { x, c }, ng)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).map(|a| a + c);
        let ng = self.needs(x);
        self.push(v, Op::AddScalar(x), ng)
    }

    /// 1 - x, elementwise.
    pub fn one_minus(&mut self, x: NodeId) -> NodeId {
        let neg = self.scale(x, -1.0);
        self.add_scalar(neg, 1.0)
    }

    /// Multiply a tensor by a scalar node.
    pub fn scale_by(&mut self, x: NodeId, s: NodeId) -> Result<NodeId, ShapeError> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(ShapeError::Mismatch {
                op: "scale_by",
                left: self.value(x).shape().to_vec(),
                right: sv.shape().to_vec(),
            });
        }
        let c = sv.item();
        let v = self.value(x).map(|a| a * c);
        let ng = self.needs(x) || self.needs(s);
        Ok(self.push(v, Op::ScaleByScalar { x, s }, ng))
    }

    /// Extract one element as a scalar node.
    pub fn pick(&mut self, x: NodeId, index: usize) -> NodeId {
        let v = Tensor::scalar(self.value(x).data()[index]);
        let ng = self.needs(x);
        self.push(v, Op::Pick { x, index }, ng)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ShapeError> {
        self.value(a).check_same_shape(self.value(b), "dot")?;
        let v = Tensor::scalar(self.value(a).dot(self.value(b)));
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Dot(a, b), ng))
    }

    /// Scalar piecewise table lookup (histogram or interpolated).
    pub fn lookup(&mut self, x: NodeId, table: Arc<LookupTable>) -> Result<NodeId, ShapeError> {
        let xv = self.value(x);
        if xv.len() != 1 {
            return Err(ShapeError::Mismatch {
                op: "lookup",
                left: xv.shape().to_vec(),
                right: vec![1],
            });
        }
        let (val, _) = table.eval(xv.item());
        let ng = self.needs(x);
        Ok(self.push(Tensor::scalar(val), Op::Lookup { x, table }, ng))
    }

    // ---- backward ------------------------------------------------------

    /// Reverse sweep from a scalar loss. Adjoints of interior nodes are
    /// fresh per call; leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), AdError> {
        if self.value(loss).len() != 1 {
            return Err(AdError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut adj: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(up) = adj[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            // Leaves: fold into the persistent accumulator.
            if let Op::Leaf = self.nodes[idx].op {
                if let LeafGrad::Tracked(g) = &mut self.leaf_grads[idx] {
                    g.axpy(1.0, &up);
                }
                continue;
            }
            let op = self.nodes[idx].op.clone();
            self.propagate(idx, &op, &up, &mut adj);
        }
        Ok(())
    }

    fn bump(&self, adj: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
        if !self.needs(id) {
            return;
        }
        match &mut adj[id.0] {
            Some(g) => g.axpy(1.0, &delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, idx: usize, op: &Op, up: &Tensor, adj: &mut [Option<Tensor>]) {
        match op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) => {
                self.bump(adj, *a, up.clone());
                self.bump(adj, *b, up.clone());
            }
            Op::Sub(a, b) => {
                self.bump(adj, *a, up.clone());
                self.bump(adj, *b, up.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let mut d = up.clone();
                    for (x, y) in d.data_mut().iter_mut().zip(self.value(*b).data()) {
                        *x *= y;
                    }
                    self.bump(adj, *a, d);
                }
                if self.needs(*b) {
                    let mut d = up.clone();
                    for (x, y) in d.data_mut().iter_mut().zip(self.value(*a).data()) {
                        *x *= y;
                    }
                    self.bump(adj, *b, d);
                }
            }
            Op::MatMul(a, b) => {
                // y = A B: dA = dY B^T, dB = A^T dY.
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = if bv.rank() == 1 {
                        up.outer(bv)
                    } else {
                        up.matmul_t(bv).expect("matmul backward shape")
                    };
                    self.bump(adj, *a, d);
                }
                if self.needs(*b) {
                    let d = av.t_matmul(up).expect("matmul backward shape");
                    self.bump(adj, *b, d);
                }
            }
            Op::Affine { w, x, b } => {
                let (wv, xv) = (self.value(*w), self.value(*x));
                if self.needs(*w) {
                    self.bump(adj, *w, up.outer(xv));
                }
                if self.needs(*x) {
                    self.bump(adj, *x, wv.t_matmul(up).expect("affine backward shape"));
                }
                if self.needs(*b) {
                    self.bump(adj, *b, up.clone());
                }
            }
            Op::Slice { x, start, len } => {
                let mut d = Tensor::zeros(self.value(*x).shape());
                d.data_mut()[*start..*start + *len].copy_from_slice(up.data());
                self.bump(adj, *x, d);
            }
            Op::Conv1dFh { w, x, b } => {
                let (wv, xv) = (self.value(*w), self.value(*x));
                if self.needs(*w) {
                    self.bump(adj, *w, up.matmul_t(xv).expect("conv backward shape"));
                }
                if self.needs(*x) {
                    self.bump(adj, *x, wv.t_matmul(up).expect("conv backward shape"));
                }
                if self.needs(*b) {
                    let (k, n) = (up.rows(), up.cols());
                    let mut db = vec![0.0; k];
                    for (row, slot) in db.iter_mut().enumerate() {
                        *slot = up.data()[row * n..(row + 1) * n].iter().sum();
                    }
                    self.bump(adj, *b, Tensor::vector(db));
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let mut d = up.clone();
                for (g, &v) in d.data_mut().iter_mut().zip(xv.data()) {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                }
                self.bump(adj, *x, d);
            }
            Op::Tanh(x) => {
                let yv = &self.nodes[idx].value;
                let mut d = up.clone();
                for (g, &y) in d.data_mut().iter_mut().zip(yv.data()) {
                    *g *= 1.0 - y * y;
                }
                self.bump(adj, *x, d);
            }
            Op::Sigmoid(x) => {
                let yv = &self.nodes[idx].value;
                let mut d = up.clone();
                for (g, &y) in d.data_mut().iter_mut().zip(yv.data()) {
                    *g *= y * (1.0 - y);
                }
                self.bump(adj, *x, d);
            }
            Op::SoftmaxRows(x) => {
                let yv = &self.nodes[idx].value;
                let cols = if yv.rank() >= 2 { yv.cols() } else { yv.len() };
                let mut d = up.clone();
                {
                    let dd = d.data_mut();
                    for (drow, yrow) in dd.chunks_mut(cols).zip(yv.data().chunks(cols)) {
                        let inner: f64 = drow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                        for (g, y) in drow.iter_mut().zip(yrow) {
                            *g = y * (*g - inner);
                        }
                    }
                }
                self.bump(adj, *x, d);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if self.needs(*p) {
                        let d = Tensor::new(
                            self.value(*p).shape().to_vec(),
                            up.data()[offset..offset + len].to_vec(),
                        );
                        self.bump(adj, *p, d);
                    }
                    offset += len;
                }
            }
            Op::Col { x, col } => {
                let xv = self.value(*x);
                let (rows, cols) = (xv.rows(), xv.cols());
                let mut d = Tensor::zeros(xv.shape());
                for r in 0..rows {
                    d.data_mut()[r * cols + col] = up.data()[r];
                }
                self.bump(adj, *x, d);
            }
            Op::Reshape(x) => {
                let d = Tensor::new(self.value(*x).shape().to_vec(), up.data().to_vec());
                self.bump(adj, *x, d);
            }
            Op::SumAxis { x, axis } => {
                let xv = self.value(*x);
                let (rows, cols) = (xv.rows(), xv.cols());
                let mut d = Tensor::zeros(xv.shape());
                match axis {
                    0 => {
                        for r in 0..rows {
                            for c in 0..cols {
                                d.data_mut()[r * cols + c] = up.data()[c];
                            }
                        }
                    }
                    _ => {
                        for r in 0..rows {
                            for c in 0..cols {
                                d.data_mut()[r * cols + c] = up.data()[r];
                            }
                        }
                    }
                }
                self.bump(adj, *x, d);
            }
            Op::SumAll(x) => {
                let g = up.item();
                let d = self.value(*x).map(|_| g);
                self.bump(adj, *x, d);
            }
            Op::LogGuarded(x) => {
                let xv = self.value(*x);
                let mut d = up.clone();
                for (g, &v) in d.data_mut().iter_mut().zip(xv.data()) {
                    *g /= v.max(LOG_FLOOR);
                }
                self.bump(adj, *x, d);
            }
            Op::ExpGuarded(x) => {
                let yv = &self.nodes[idx].value;
                let mut d = up.clone();
                for (g, &y) in d.data_mut().iter_mut().zip(yv.data()) {
                    *g *= y;
                }
                self.bump(adj, *x, d);
            }
            Op::SqrtGuarded(x) => {
                let yv = &self.nodes[idx].value;
                let mut d = up.clone();
                for (g, &y) in d.data_mut().iter_mut().zip(yv.data()) {
                    *g *= 0.5 / y.max(SQRT_GRAD_FLOOR);
                }
                self.bump(adj, *x, d);
            }
            Op::Scale { x, c } => {
                self.bump(adj, *x, up.map(|v| v * c));
            }
            Op::AddScalar(x) => {
                self.bump(adj, *x, up.clone());
            }
            Op::ScaleByScalar { x, s } => {
                let sv = self.value(*s).item();
                if self.needs(*x) {
                    self.bump(adj, *x, up.map(|v| v * sv));
                }
                if self.needs(*s) {
                    let d = up.dot(self.value(*x));
                    self.bump(adj, *s, Tensor::scalar(d));
                }
            }
            Op::Pick { x, index } => {
                let mut d = Tensor::zeros(self.value(*x).shape());
                d.data_mut()[*index] = up.item();
                self.bump(adj, *x, d);
            }
            Op::Dot(a, b) => {
                let g = up.item();
                if self.needs(*a) {
                    self.bump(adj, *a, self.value(*b).map(|v| v * g));
                }
                if self.needs(*b) {
                    self.bump(adj, *b, self.value(*a).map(|v| v * g));
                }
            }
            Op::Lookup { x, table } => {
                let (_, slope) = table.eval(self.value(*x).item());
                self.bump(adj, *x, Tensor::scalar(up.item() * slope));
            }
        }
    }
}
