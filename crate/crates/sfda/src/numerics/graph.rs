//! Tape-based reverse-mode differentiation over [`Tensor2D`] values.
//!
//! Forward values are computed eagerly as nodes are recorded; `backward`
//! replays the recorded order in reverse and accumulates gradients.
//! A recording can be differentiated exactly once.

use crate::error::SfdaError;
use crate::numerics::{Parameter, Tensor2D};
use crate::Result;

/// Handle to a node in a [`DiffGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Probabilities are clamped at this floor inside logarithms. This is a
/// numerical tolerance, not a behavior change: desk-scale softmax outputs
/// never get near it unless logits diverge.
pub(crate) const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    /// Constant input; receives no gradient.
    Leaf,
    /// Trainable leaf; gradient is collected under the given parameter id.
    Param(usize),
    MatMul(NodeId, NodeId),
    /// Matrix (n x c) plus a bias row (1 x c) broadcast over rows.
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Relu(NodeId),
    Abs(NodeId),
    Exp(NodeId),
    /// `ln(max(x, LOG_FLOOR))`.
    LogClamped(NodeId),
    /// Row-wise log-softmax with max subtraction.
    LogSoftmax(NodeId),
    /// n x c -> n x 1, sum across each row.
    RowSum(NodeId),
    /// n x c -> 1 x c, average down each column.
    MeanRows(NodeId),
    /// n x c -> 1 x 1, mean of all entries.
    MeanAll(NodeId),
    /// n x c -> 1 x 1, sum of all entries.
    SumAll(NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
}

struct Node {
    op: Op,
    value: Tensor2D,
}

/// A recording of primitive operations, differentiable once.
#[derive(Default)]
pub struct DiffGraph {
    nodes: Vec<Node>,
    grads: Vec<Tensor2D>,
    backward_done: bool,
}

impl DiffGraph {
    pub fn new() -> Self {
        DiffGraph {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    fn push(&mut self, op: Op, value: Tensor2D) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite value recorded on graph");
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor2D {
        &self.nodes[id.0].value
    }

    /// Gradient of the loss with respect to a node. Only meaningful after
    /// [`DiffGraph::backward`].
    pub fn grad(&self, id: NodeId) -> &Tensor2D {
        assert!(self.backward_done, "grad queried before backward");
        &self.grads[id.0]
    }

    /// Record a constant input.
    pub fn leaf(&mut self, value: Tensor2D) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Record a trainable leaf holding a copy of the parameter value.
    /// `param_id` is the caller's index for the parameter; gradients are
    /// later collected per id by [`DiffGraph::accumulate_grads`].
    pub fn param(&mut self, param_id: usize, p: &Parameter) -> NodeId {
        self.push(Op::Param(param_id), p.value().clone())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.matmul(&self.nodes[b.0].value);
        self.push(Op::MatMul(a, b), v)
    }

    /// Broadcast-add a 1 x c bias row to every row of an n x c matrix.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let xm = &self.nodes[x.0].value;
        let bm = &self.nodes[bias.0].value;
        assert_eq!(bm.rows(), 1, "bias must be a single row");
        assert_eq!(xm.cols(), bm.cols(), "bias width mismatch");
        let mut out = xm.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                let v = out.get(r, c) + bm.get(0, c);
                out.set(r, c, v);
            }
        }
        self.push(Op::AddBias(x, bias), out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = map(&self.nodes[x.0].value, |a| a.max(0.0));
        self.push(Op::Relu(x), v)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let v = map(&self.nodes[x.0].value, f64::abs);
        self.push(Op::Abs(x), v)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = map(&self.nodes[x.0].value, f64::exp);
        self.push(Op::Exp(x), v)
    }

    /// `ln(max(x, 1e-12))`; the clamp keeps exact zeros out of the log.
    pub fn log_clamped(&mut self, x: NodeId) -> NodeId {
        let v = map(&self.nodes[x.0].value, |a| a.max(LOG_FLOOR).ln());
        self.push(Op::LogClamped(x), v)
    }

    /// Row-wise log-softmax with the max-subtraction trick.
    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        let xm = &self.nodes[x.0].value;
        let mut out = xm.clone();
        for r in 0..xm.rows() {
            let row = xm.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for c in 0..xm.cols() {
                out.set(r, c, xm.get(r, c) - lse);
            }
        }
        self.push(Op::LogSoftmax(x), out)
    }

    /// n x c -> n x 1 row sums.
    pub fn row_sum(&mut self, x: NodeId) -> NodeId {
        let xm = &self.nodes[x.0].value;
        let mut out = Tensor2D::zeros(xm.rows(), 1);
        for r in 0..xm.rows() {
            out.set(r, 0, xm.row(r).iter().sum());
        }
        self.push(Op::RowSum(x), out)
    }

    /// n x c -> 1 x c column means.
    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let xm = &self.nodes[x.0].value;
        let n = xm.rows() as f64;
        let mut out = Tensor2D::zeros(1, xm.cols());
        for c in 0..xm.cols() {
            let mut s = 0.0;
            for r in 0..xm.rows() {
                s += xm.get(r, c);
            }
            out.set(0, c, s / n);
        }
        self.push(Op::MeanRows(x), out)
    }

    /// Mean of every entry, as a 1x1 node.
    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let xm = &self.nodes[x.0].value;
        let n = (xm.rows() * xm.cols()) as f64;
        let s: f64 = xm.data().iter().sum();
        self.push(Op::MeanAll(x), Tensor2D::scalar(s / n))
    }

    /// Sum of every entry, as a 1x1 node.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x.0].value.data().iter().sum();
        self.push(Op::SumAll(x), Tensor2D::scalar(s))
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let v = map(&self.nodes[x.0].value, |a| a * k);
        self.push(Op::Scale(x, k), v)
    }

    pub fn add_const(&mut self, x: NodeId, k: f64) -> NodeId {
        let v = map(&self.nodes[x.0].value, |a| a + k);
        self.push(Op::AddConst(x), v)
    }

    /// Propagate gradients from a scalar loss node back to every leaf.
    /// Rejects non-scalar losses and a second run on the same recording.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(SfdaError::BackwardTwice);
        }
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(SfdaError::NonScalarLoss {
                rows: lv.rows(),
                cols: lv.cols(),
            });
        }
        self.grads = self
            .nodes
            .iter()
            .map(|n| {
                let (r, c) = n.value.shape();
                Tensor2D::zeros(r, c)
            })
            .collect();
        self.grads[loss.0].set(0, 0, 1.0);

        for i in (0..self.nodes.len()).rev() {
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let go = self.grads[i].clone();
                    let da = go.matmul_t(&self.nodes[b.0].value);
                    let db = self.nodes[a.0].value.t_matmul(&go);
                    self.grads[a.0].add_assign(&da);
                    self.grads[b.0].add_assign(&db);
                }
                Op::AddBias(x, bias) => {
                    let go = self.grads[i].clone();
                    self.grads[x.0].add_assign(&go);
                    let mut db = Tensor2D::zeros(1, go.cols());
                    for r in 0..go.rows() {
                        for c in 0..go.cols() {
                            db.set(0, c, db.get(0, c) + go.get(r, c));
                        }
                    }
                    self.grads[bias.0].add_assign(&db);
                }
                Op::Add(a, b) => {
                    let go = self.grads[i].clone();
                    self.grads[a.0].add_assign(&go);
                    self.grads[b.0].add_assign(&go);
                }
                Op::Sub(a, b) => {
                    let go = self.grads[i].clone();
                    self.grads[a.0].add_assign(&go);
                    let neg = map(&go, |v| -v);
                    self.grads[b.0].add_assign(&neg);
                }
                Op::Mul(a, b) => {
                    let go = self.grads[i].clone();
                    let da = zip_map(&go, &self.nodes[b.0].value, |g, y| g * y);
                    let db = zip_map(&go, &self.nodes[a.0].value, |g, x| g * x);
                    self.grads[a.0].add_assign(&da);
                    self.grads[b.0].add_assign(&db);
                }
                Op::Relu(x) => {
                    // subgradient 0 at exactly 0
                    let dx = zip_map(&self.grads[i], &self.nodes[x.0].value, |g, v| {
                        if v > 0.0 {
                            g
                        } else {
                            0.0
                        }
                    });
                    self.grads[x.0].add_assign(&dx);
                }
                Op::Abs(x) => {
                    // sign(0) = 0
                    let dx = zip_map(&self.grads[i], &self.nodes[x.0].value, |g, v| {
                        if v > 0.0 {
                            g
                        } else if v < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    });
                    self.grads[x.0].add_assign(&dx);
                }
                Op::Exp(x) => {
                    let dx = zip_map(&self.grads[i], &self.nodes[i].value, |g, y| g * y);
                    self.grads[x.0].add_assign(&dx);
                }
                Op::LogClamped(x) => {
                    // constant below the floor, so zero gradient there
                    let dx = zip_map(&self.grads[i], &self.nodes[x.0].value, |g, v| {
                        if v > LOG_FLOOR {
                            g / v
                        } else {
                            0.0
                        }
                    });
                    self.grads[x.0].add_assign(&dx);
                }
                Op::LogSoftmax(x) => {
                    // dx = g - softmax(x) * rowsum(g)
                    let go = &self.grads[i];
                    let y = &self.nodes[i].value;
                    let mut dx = Tensor2D::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let gs: f64 = go.row(r).iter().sum();
                        for c in 0..y.cols() {
                            dx.set(r, c, go.get(r, c) - y.get(r, c).exp() * gs);
                        }
                    }
                    self.grads[x.0].add_assign(&dx);
                }
                Op::RowSum(x) => {
                    let go = self.grads[i].clone();
                    let xm = self.nodes[x.0].value.shape();
                    let mut dx = Tensor2D::zeros(xm.0, xm.1);
                    for r in 0..xm.0 {
                        let g = go.get(r, 0);
                        for c in 0..xm.1 {
                            dx.set(r, c, g);
                        }
                    }
                    self.grads[x.0].add_assign(&dx);
                }
                Op::MeanRows(x) => {
                    let go = self.grads[i].clone();
                    let (rows, cols) = self.nodes[x.0].value.shape();
                    let inv = 1.0 / rows as f64;
                    let mut dx = Tensor2D::zeros(rows, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            dx.set(r, c, go.get(0, c) * inv);
                        }
                    }
                    self.grads[x.0].add_assign(&dx);
                }
                Op::MeanAll(x) => {
                    let g = self.grads[i].item();
                    let (rows, cols) = self.nodes[x.0].value.shape();
                    let v = g / (rows * cols) as f64;
                    let dx = Tensor2D::from_vec(rows, cols, vec![v; rows * cols]).unwrap();
                    self.grads[x.0].add_assign(&dx);
                }
                Op::SumAll(x) => {
                    let g = self.grads[i].item();
                    let (rows, cols) = self.nodes[x.0].value.shape();
                    let dx = Tensor2D::from_vec(rows, cols, vec![g; rows * cols]).unwrap();
                    self.grads[x.0].add_assign(&dx);
                }
                Op::Scale(x, k) => {
                    let dx = map(&self.grads[i], |g| g * k);
                    self.grads[x.0].add_assign(&dx);
                }
                Op::AddConst(x) => {
                    let go = self.grads[i].clone();
                    self.grads[x.0].add_assign(&go);
                }
            }
        }
        self.backward_done = true;
        Ok(())
    }

    /// Accumulate the gradients of all `Param` leaves into the matching
    /// entries of `params` (`param_id` indexes the slice). Call after
    /// [`DiffGraph::backward`].
    pub fn accumulate_grads(&self, params: &mut [Parameter]) {
        assert!(self.backward_done, "accumulate_grads before backward");
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(pid) = node.op {
                params[pid].accumulate_grad(&self.grads[i]);
            }
        }
    }
}

fn map(t: &Tensor2D, f: impl Fn(f64) -> f64) -> Tensor2D {
    let (r, c) = t.shape();
    Tensor2D::from_vec(r, c, t.data().iter().map(|&v| f(v)).collect()).unwrap()
}

fn zip_map(a: &Tensor2D, b: &Tensor2D, f: impl Fn(f64, f64) -> f64) -> Tensor2D {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    let (r, c) = a.shape();
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor2D::from_vec(r, c, data).unwrap()
}
