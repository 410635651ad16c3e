use std::cell::{Cell, RefCell};
use std::fmt;

use super::{kernels, Result, Tensor, TensorError};

/// Index of a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    ScaleBy(NodeId, NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Clamp(NodeId, f64, f64),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    LayerNorm(NodeId, Vec<f64>),
    L2Normalize(NodeId, Vec<f64>),
    ConcatCols(NodeId, NodeId),
    ConcatRows(NodeId, NodeId),
    SliceCols(NodeId, usize),
    Sum(NodeId),
    MeanRows(NodeId),
    GatherRows(NodeId, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
struct Tape {
    nodes: Vec<Node>,
}

/// Append-only operation tape.
///
/// Node ids are assigned in creation order, which is also a topological order.
/// [`Graph::reset`] clears the tape and bumps the epoch so that variables
/// created before the reset are rejected.
#[derive(Default)]
pub struct Graph {
    tape: RefCell<Tape>,
    epoch: Cell<u64>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.tape.borrow().nodes.len())
            .field("epoch", &self.epoch.get())
            .finish()
    }
}

/// Handle to a node on a particular graph and epoch.
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: NodeId,
    epoch: u64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({}, epoch {})", self.id.0, self.epoch)
    }
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    epoch: u64,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `id`; zeros when the node did not influence the output.
    pub fn get(&self, id: NodeId) -> Tensor {
        let shape = self.shapes[id.0].clone();
        match &self.grads[id.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape is tracked"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn wrt(&self, var: &Var<'_>) -> Result<Tensor> {
        if var.epoch != self.epoch {
            return Err(TensorError::StaleTape {
                var: var.epoch,
                graph: self.epoch,
            });
        }
        Ok(self.get(var.id))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch.get()
    }

    pub fn len(&self) -> usize {
        self.tape.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop every node. Variables from earlier epochs become unusable.
    pub fn reset(&self) {
        self.tape.borrow_mut().nodes.clear();
        self.epoch.set(self.epoch.get() + 1);
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let id = self.push(value, Op::Leaf, requires_grad);
        self.var(id)
    }

    fn var(&self, id: NodeId) -> Var<'_> {
        Var {
            graph: self,
            id,
            epoch: self.epoch.get(),
        }
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        let mut tape = self.tape.borrow_mut();
        tape.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(tape.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> Tensor {
        self.tape.borrow().nodes[id.0].value.clone()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.tape.borrow().nodes[id.0].requires_grad
    }

    fn check(&self, v: &Var<'_>) -> Result<()> {
        if !std::ptr::eq(self, v.graph) {
            return Err(TensorError::Invalid {
                op: "graph",
                detail: "variable belongs to a different graph".into(),
            });
        }
        if v.epoch != self.epoch.get() {
            return Err(TensorError::StaleTape {
                var: v.epoch,
                graph: self.epoch.get(),
            });
        }
        Ok(())
    }

    /// Reverse-mode pass from a scalar output.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        self.check(&loss)?;
        let value = self.value(loss.id);
        if value.len() != 1 {
            return Err(TensorError::NonScalar(value.shape().to_vec()));
        }
        let seed = Tensor::filled(value.shape(), 1.0);
        self.backward_from(&[(loss.id, seed)])
    }

    /// Vector-Jacobian product: propagate the given output cotangents.
    pub fn backward_from(&self, seeds: &[(NodeId, Tensor)]) -> Result<Gradients> {
        let tape = self.tape.borrow();
        let nodes = &tape.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        for (id, seed) in seeds {
            let node = nodes.get(id.0).ok_or_else(|| TensorError::Invalid {
                op: "backward",
                detail: format!("node {} is not on the tape", id.0),
            })?;
            if node.value.shape() != seed.shape() {
                return Err(TensorError::Shape {
                    op: "backward",
                    lhs: node.value.shape().to_vec(),
                    rhs: seed.shape().to_vec(),
                });
            }
            if node.requires_grad {
                accumulate(&mut grads, nodes, *id, seed.data().to_vec());
            }
        }

        for idx in (0..nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            propagate(&mut grads, nodes, node, &g);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            epoch: self.epoch.get(),
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }

    fn unary<F>(&self, a: &Var<'_>, f: F) -> Result<Var<'_>>
    where
        F: FnOnce(&Tensor) -> Result<(Tensor, Op)>,
    {
        self.check(a)?;
        let (value, op, rg) = {
            let tape = self.tape.borrow();
            let node = &tape.nodes[a.id.0];
            let (value, op) = f(&node.value)?;
            (value, op, node.requires_grad)
        };
        Ok(self.var(self.push(value, op, rg)))
    }

    fn binary<F>(&self, a: &Var<'_>, b: &Var<'_>, f: F) -> Result<Var<'_>>
    where
        F: FnOnce(&Tensor, &Tensor) -> Result<(Tensor, Op)>,
    {
        self.check(a)?;
        self.check(b)?;
        let (value, op, rg) = {
            let tape = self.tape.borrow();
            let na = &tape.nodes[a.id.0];
            let nb = &tape.nodes[b.id.0];
            let (value, op) = f(&na.value, &nb.value)?;
            (value, op, na.requires_grad || nb.requires_grad)
        };
        Ok(self.var(self.push(value, op, rg)))
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: NodeId, contrib: Vec<f64>) {
    if !nodes[id.0].requires_grad {
        return;
    }
    match &mut grads[id.0] {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(&contrib) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn propagate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], node: &Node, g: &[f64]) {
    let y = node.value.data();
    let val = |id: NodeId| &nodes[id.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
            let n = val(*b).shape()[1];
            if nodes[a.0].requires_grad {
                // dA = dC · Bᵀ
                let da = kernels::matmul_bt(g, val(*b).data(), m, n, k);
                accumulate(grads, nodes, *a, da);
            }
            if nodes[b.0].requires_grad {
                // dB = Aᵀ · dC
                let db = kernels::matmul_at(val(*a).data(), g, m, k, n);
                accumulate(grads, nodes, *b, db);
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (val(*a).shape()[0], val(*a).shape()[1]);
            accumulate(grads, nodes, *a, kernels::transpose(g, c, r));
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.to_vec());
            accumulate(grads, nodes, *b, g.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.to_vec());
            accumulate(grads, nodes, *b, g.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            if nodes[a.0].requires_grad {
                accumulate(grads, nodes, *a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
            }
            if nodes[b.0].requires_grad {
                accumulate(grads, nodes, *b, g.iter().zip(av).map(|(g, a)| g * a).collect());
            }
        }
        Op::Scale(a, s) => {
            accumulate(grads, nodes, *a, g.iter().map(|v| v * s).collect());
        }
        Op::ScaleBy(a, s) => {
            let sv = val(*s).item();
            if nodes[a.0].requires_grad {
                accumulate(grads, nodes, *a, g.iter().map(|v| v * sv).collect());
            }
            if nodes[s.0].requires_grad {
                let ds: f64 = g.iter().zip(val(*a).data()).map(|(g, x)| g * x).sum();
                accumulate(grads, nodes, *s, vec![ds]);
            }
        }
        Op::Tanh(a) => {
            let d = g.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect();
            accumulate(grads, nodes, *a, d);
        }
        Op::Exp(a) => {
            accumulate(grads, nodes, *a, g.iter().zip(y).map(|(g, e)| g * e).collect());
        }
        Op::Log(a) => {
            let d = g.iter().zip(val(*a).data()).map(|(g, x)| g / x).collect();
            accumulate(grads, nodes, *a, d);
        }
        Op::Clamp(a, lo, hi) => {
            let d = g
                .iter()
                .zip(val(*a).data())
                .map(|(g, x)| if *x >= *lo && *x <= *hi { *g } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *a, d);
        }
        Op::SoftmaxRows(a) => {
            let cols = node.value.cols();
            let mut d = vec![0.0; g.len()];
            for ((drow, grow), yrow) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                for ((dv, gv), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                    *dv = yv * (gv - dot);
                }
            }
            accumulate(grads, nodes, *a, d);
        }
        Op::LogSoftmaxRows(a) => {
            let cols = node.value.cols();
            let mut d = vec![0.0; g.len()];
            for ((drow, grow), yrow) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                let total: f64 = grow.iter().sum();
                for ((dv, gv), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                    *dv = gv - yv.exp() * total;
                }
            }
            accumulate(grads, nodes, *a, d);
        }
        Op::LayerNorm(a, inv_std) => {
            let cols = node.value.cols();
            let n = cols as f64;
            let mut d = vec![0.0; g.len()];
            for (((drow, grow), yrow), r) in d
                .chunks_mut(cols)
                .zip(g.chunks(cols))
                .zip(y.chunks(cols))
                .zip(inv_std)
            {
                let mean_g = grow.iter().sum::<f64>() / n;
                let mean_gy = grow.iter().zip(yrow).map(|(g, y)| g * y).sum::<f64>() / n;
                for ((dv, gv), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                    *dv = r * (gv - mean_g - yv * mean_gy);
                }
            }
            accumulate(grads, nodes, *a, d);
        }
        Op::L2Normalize(a, norms) => {
            let cols = node.value.cols();
            let mut d = vec![0.0; g.len()];
            for (((drow, grow), yrow), nrm) in d
                .chunks_mut(cols)
                .zip(g.chunks(cols))
                .zip(y.chunks(cols))
                .zip(norms)
            {
                let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                for ((dv, gv), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                    *dv = (gv - yv * dot) / nrm;
                }
            }
            accumulate(grads, nodes, *a, d);
        }
        Op::ConcatCols(a, b) => {
            let rows = node.value.shape()[0];
            let ca = val(*a).shape()[1];
            let cb = val(*b).shape()[1];
            let mut da = Vec::with_capacity(rows * ca);
            let mut db = Vec::with_capacity(rows * cb);
            for grow in g.chunks(ca + cb) {
                da.extend_from_slice(&grow[..ca]);
                db.extend_from_slice(&grow[ca..]);
            }
            accumulate(grads, nodes, *a, da);
            accumulate(grads, nodes, *b, db);
        }
        Op::ConcatRows(a, b) => {
            let split = val(*a).len();
            accumulate(grads, nodes, *a, g[..split].to_vec());
            accumulate(grads, nodes, *b, g[split..].to_vec());
        }
        Op::SliceCols(a, start) => {
            let src_cols = val(*a).shape()[1];
            let width = node.value.shape()[1];
            let mut d = vec![0.0; val(*a).len()];
            for (drow, grow) in d.chunks_mut(src_cols).zip(g.chunks(width.max(1))) {
                drow[*start..*start + width].copy_from_slice(&grow[..width]);
            }
            accumulate(grads, nodes, *a, d);
        }
        Op::Sum(a) => {
            accumulate(grads, nodes, *a, vec![g[0]; val(*a).len()]);
        }
        Op::MeanRows(a) => {
            let (r, c) = (val(*a).shape()[0], val(*a).shape()[1]);
            let scale = 1.0 / r as f64;
            let mut d = Vec::with_capacity(r * c);
            for _ in 0..r {
                d.extend(g.iter().map(|v| v * scale));
            }
            accumulate(grads, nodes, *a, d);
        }
        Op::GatherRows(table, ids) => {
            let cols = val(*table).shape()[1];
            let mut d = vec![0.0; val(*table).len()];
            for (grow, &id) in g.chunks(cols).zip(ids) {
                for (dv, gv) in d[id * cols..(id + 1) * cols].iter_mut().zip(grow) {
                    *dv += gv;
                }
            }
            accumulate(grads, nodes, *table, d);
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
        .expect("shape preserved")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

fn last_dim(op: &'static str, t: &Tensor) -> Result<usize> {
    match t.shape().len() {
        1 | 2 => Ok(t.cols()),
        _ => Err(TensorError::Invalid {
            op,
            detail: format!("expected rank 1 or 2, got shape {:?}", t.shape()),
        }),
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Tensor {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.tape.borrow().nodes[self.id.0].value.shape().to_vec()
    }

    pub fn matmul(&self, other: &Var<'g>) -> Result<Var<'g>> {
        self.graph.binary(self, other, |a, b| {
            let out = a.matmul(b)?;
            Ok((out, Op::MatMul(self.id, other.id)))
        })
    }

    pub fn t(&self) -> Result<Var<'g>> {
        self.graph
            .unary(self, |a| Ok((a.transpose()?, Op::Transpose(self.id))))
    }

    pub fn add(&self, other: &Var<'g>) -> Result<Var<'g>> {
        self.graph.binary(self, other, |a, b| {
            same_shape("add", a, b)?;
            Ok((zip(a, b, |x, y| x + y), Op::Add(self.id, other.id)))
        })
    }

    pub fn sub(&self, other: &Var<'g>) -> Result<Var<'g>> {
        self.graph.binary(self, other, |a, b| {
            same_shape("sub", a, b)?;
            Ok((zip(a, b, |x, y| x - y), Op::Sub(self.id, other.id)))
        })
    }

    pub fn mul(&self, other: &Var<'g>) -> Result<Var<'g>> {
        self.graph.binary(self, other, |a, b| {
            same_shape("mul", a, b)?;
            Ok((zip(a, b, |x, y| x * y), Op::Mul(self.id, other.id)))
        })
    }

    pub fn scale(&self, s: f64) -> Result<Var<'g>> {
        self.graph
            .unary(self, |a| Ok((map(a, |v| v * s), Op::Scale(self.id, s))))
    }

    /// Multiply every element by a scalar node.
    pub fn scale_by(&self, s: &Var<'g>) -> Result<Var<'g>> {
        self.graph.binary(self, s, |a, sv| {
            if sv.len() != 1 {
                return Err(TensorError::Shape {
                    op: "scale_by",
                    lhs: a.shape().to_vec(),
                    rhs: sv.shape().to_vec(),
                });
            }
            let k = sv.item();
            Ok((map(a, |v| v * k), Op::ScaleBy(self.id, s.id)))
        })
    }

    pub fn tanh(&self) -> Result<Var<'g>> {
        self.graph
            .unary(self, |a| Ok((map(a, f64::tanh), Op::Tanh(self.id))))
    }

    pub fn exp(&self) -> Result<Var<'g>> {
        self.graph
            .unary(self, |a| Ok((map(a, f64::exp), Op::Exp(self.id))))
    }

    pub fn log(&self) -> Result<Var<'g>> {
        self.graph.unary(self, |a| {
            if let Some(bad) = a.data().iter().find(|v| !(**v > 0.0)) {
                return Err(TensorError::Numeric {
                    op: "log",
                    detail: format!("argument {bad} is not positive"),
                });
            }
            Ok((map(a, f64::ln), Op::Log(self.id)))
        })
    }

    /// Elementwise clamp; gradient passes only inside `[lo, hi]`.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<'g>> {
        self.graph
            .unary(self, |a| Ok((map(a, |v| v.clamp(lo, hi)), Op::Clamp(self.id, lo, hi))))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Result<Var<'g>> {
        self.graph.unary(self, |a| {
            check_no_nan("softmax_rows", a)?;
            let cols = last_dim("softmax_rows", a)?;
            let out = Tensor::new(a.shape().to_vec(), kernels::softmax_rows(a.data(), cols))?;
            Ok((out, Op::SoftmaxRows(self.id)))
        })
    }

    /// Row-wise log-softmax via a stabilized log-sum-exp.
    pub fn log_softmax_rows(&self) -> Result<Var<'g>> {
        self.graph.unary(self, |a| {
            check_no_nan("log_softmax_rows", a)?;
            let cols = last_dim("log_softmax_rows", a)?;
            let out = Tensor::new(a.shape().to_vec(), kernels::log_softmax_rows(a.data(), cols))?;
            Ok((out, Op::LogSoftmaxRows(self.id)))
        })
    }

    /// Standardize each row (last dimension) without a learned affine.
    pub fn layer_norm(&self, eps: f64) -> Result<Var<'g>> {
        self.graph.unary(self, |a| {
            let cols = last_dim("layer_norm", a)?;
            if cols == 0 {
                return Err(TensorError::Invalid {
                    op: "layer_norm",
                    detail: "last dimension is empty".into(),
                });
            }
            let (data, inv_std) = kernels::layer_norm_rows(a.data(), cols, eps);
            Ok((Tensor::new(a.shape().to_vec(), data)?, Op::LayerNorm(self.id, inv_std)))
        })
    }

    /// Scale each row (last dimension) to unit Euclidean norm.
    pub fn l2_normalize(&self) -> Result<Var<'g>> {
        self.graph.unary(self, |a| {
            let cols = last_dim("l2_normalize", a)?;
            let mut data = a.data().to_vec();
            let mut norms = Vec::new();
            for (i, row) in data.chunks_mut(cols.max(1)).enumerate() {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(n > 0.0) || !n.is_finite() {
                    return Err(TensorError::Degenerate {
                        op: "l2_normalize",
                        detail: format!("row {i} has norm {n}"),
                    });
                }
                row.iter_mut().for_each(|v| *v /= n);
                norms.push(n);
            }
            Ok((Tensor::new(a.shape().to_vec(), data)?, Op::L2Normalize(self.id, norms)))
        })
    }

    /// `[a | b]` for matrices with the same number of rows.
    pub fn concat_cols(&self, other: &Var<'g>) -> Result<Var<'g>> {
        self.graph.binary(self, other, |a, b| {
            let (ra, ca) = a.dims2("concat_cols")?;
            let (rb, cb) = b.dims2("concat_cols")?;
            if ra != rb {
                return Err(TensorError::Shape {
                    op: "concat_cols",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut data = Vec::with_capacity(ra * (ca + cb));
            for i in 0..ra {
                data.extend_from_slice(&a.data()[i * ca..(i + 1) * ca]);
                data.extend_from_slice(&b.data()[i * cb..(i + 1) * cb]);
            }
            Ok((Tensor::new(vec![ra, ca + cb], data)?, Op::ConcatCols(self.id, other.id)))
        })
    }

    /// `[a ; b]` for matrices with the same number of columns.
    pub fn concat_rows(&self, other: &Var<'g>) -> Result<Var<'g>> {
        self.graph.binary(self, other, |a, b| {
            let (ra, ca) = a.dims2("concat_rows")?;
            let (rb, cb) = b.dims2("concat_rows")?;
            if ca != cb {
                return Err(TensorError::Shape {
                    op: "concat_rows",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut data = a.data().to_vec();
            data.extend_from_slice(b.data());
            Ok((Tensor::new(vec![ra + rb, ca], data)?, Op::ConcatRows(self.id, other.id)))
        })
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var<'g>> {
        self.graph.unary(self, |a| {
            let (r, c) = a.dims2("slice_cols")?;
            if start > end || end > c {
                return Err(TensorError::Invalid {
                    op: "slice_cols",
                    detail: format!("range {start}..{end} out of bounds for {c} columns"),
                });
            }
            let mut data = Vec::with_capacity(r * (end - start));
            for i in 0..r {
                data.extend_from_slice(&a.data()[i * c + start..i * c + end]);
            }
            Ok((Tensor::new(vec![r, end - start], data)?, Op::SliceCols(self.id, start)))
        })
    }

    pub fn sum(&self) -> Result<Var<'g>> {
        self.graph.unary(self, |a| {
            Ok((Tensor::scalar(a.data().iter().sum()), Op::Sum(self.id)))
        })
    }

    /// Column means of a matrix, as a `1×c` row.
    pub fn mean_rows(&self) -> Result<Var<'g>> {
        self.graph.unary(self, |a| {
            let (r, c) = a.dims2("mean_rows")?;
            if r == 0 {
                return Err(TensorError::Degenerate {
                    op: "mean_rows",
                    detail: "no rows".into(),
                });
            }
            let mut out = vec![0.0; c];
            for row in a.data().chunks(c.max(1)) {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|v| *v /= r as f64);
            Ok((Tensor::new(vec![1, c], out)?, Op::MeanRows(self.id)))
        })
    }

    /// Select rows of a table (embedding lookup).
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Var<'g>> {
        self.graph.unary(self, |a| {
            let (r, c) = a.dims2("gather_rows")?;
            let mut data = Vec::with_capacity(ids.len() * c);
            for &id in ids {
                if id >= r {
                    return Err(TensorError::Invalid {
                        op: "gather_rows",
                        detail: format!("row {id} out of range for {r} rows"),
                    });
                }
                data.extend_from_slice(&a.data()[id * c..(id + 1) * c]);
            }
            Ok((Tensor::new(vec![ids.len(), c], data)?, Op::GatherRows(self.id, ids.to_vec())))
        })
    }
}

fn check_no_nan(op: &'static str, t: &Tensor) -> Result<()> {
    if t.data().iter().any(|v| v.is_nan()) {
        return Err(TensorError::Numeric {
            op,
            detail: "NaN input".into(),
        });
    }
    Ok(())
}
