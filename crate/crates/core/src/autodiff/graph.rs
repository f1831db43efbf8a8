use std::collections::{BTreeMap, HashMap};

use super::kernels as k;
use crate::error::{Error, Result};
use crate::tensor::{split_axis, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Source of values for named leaves.
pub trait Bindings {
    fn lookup(&self, name: &str) -> Option<&Tensor>;
}

impl Bindings for HashMap<String, Tensor> {
    fn lookup(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

impl Bindings for BTreeMap<String, Tensor> {
    fn lookup(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

impl<B: Bindings + ?Sized> Bindings for &B {
    fn lookup(&self, name: &str) -> Option<&Tensor> {
        (**self).lookup(name)
    }
}

/// Looks in the first source, then the second.
impl<A: Bindings, B: Bindings> Bindings for (A, B) {
    fn lookup(&self, name: &str) -> Option<&Tensor> {
        self.0.lookup(name).or_else(|| self.1.lookup(name))
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Param(String),
    Input(String),
    Const(Tensor),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Abs(NodeId),
    Gelu(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    Transpose(NodeId),
    Concat(Vec<NodeId>, usize),
    Slice { x: NodeId, axis: usize, start: usize, len: usize },
    Sum(NodeId, Option<usize>),
    Mean(NodeId, Option<usize>),
    Max(NodeId, usize),
    Softmax(NodeId, usize),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    BroadcastTo(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Input(_) => "input",
            Op::Const(_) => "const",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Abs(_) => "abs",
            Op::Gelu(_) => "gelu",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Transpose(_) => "transpose",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Max(..) => "max",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::BroadcastTo(_) => "broadcast",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    requires_grad: bool,
}

/// A computation graph built op by op, evaluated by [`Graph::forward`] and
/// differentiated by [`Graph::backward`].
///
/// Nodes are appended in topological order, so the graph is acyclic by
/// construction. Shapes are inferred and checked when a node is added.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
    inputs: BTreeMap<String, NodeId>,
    values: Option<Vec<Tensor>>,
}

/// Gradients of a scalar root with respect to every trainable leaf.
pub type Gradients = BTreeMap<String, Tensor>;

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

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Trainable leaves as `(name, node)` in name order.
    pub fn params(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.params.iter().map(|(n, &id)| (n.as_str(), id))
    }

    pub fn param_shape(&self, name: &str) -> Option<&[usize]> {
        self.params.get(name).map(|&id| self.shape(id))
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        let requires_grad = match &op {
            Op::Param(_) => true,
            Op::Input(_) | Op::Const(_) => false,
            other => operands(other).iter().any(|o| self.nodes[o.0].requires_grad),
        };
        self.values = None;
        self.nodes.push(Node {
            op,
            shape,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Declares a trainable leaf. Declaring an existing name again returns the
    /// same node, so weights can be shared between uses.
    pub fn param(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            if self.shape(id) != shape {
                return Err(Error::shape(
                    "param",
                    format!("`{name}` redeclared as {shape:?}, was {:?}", self.shape(id)),
                ));
            }
            return Ok(id);
        }
        let id = self.push(Op::Param(name.to_string()), shape.to_vec());
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    /// Declares a non-trainable leaf that is bound by name at forward time.
    pub fn input(&mut self, name: &str, shape: &[usize]) -> NodeId {
        let id = self.push(Op::Input(name.to_string()), shape.to_vec());
        self.inputs.insert(name.to_string(), id);
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Const(value), shape)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(value))
    }

    /// Matrix product over the last two axes.
    ///
    /// `b` is either a matrix shared by every leading index of `a`, or has the
    /// same leading axes as `a`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let kdim = sa[sa.len() - 1];
        if sb[sb.len() - 2] != kdim || (sb.len() > 2 && sb[..sb.len() - 2] != sa[..sa.len() - 2]) {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let mut out = sa.clone();
        *out.last_mut().unwrap() = sb[sb.len() - 1];
        Ok(self.push(Op::MatMul(a, b), out))
    }

    fn binary_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Vec<usize>> {
        k::broadcast_shape(self.shape(a), self.shape(b)).ok_or_else(|| {
            Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)))
        })
    }

    /// Elementwise sum with trailing-axis broadcasting.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.binary_shape("add", a, b)?;
        Ok(self.push(Op::Add(a, b), s))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.binary_shape("sub", a, b)?;
        Ok(self.push(Op::Sub(a, b), s))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.binary_shape("mul", a, b)?;
        Ok(self.push(Op::Mul(a, b), s))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.binary_shape("div", a, b)?;
        Ok(self.push(Op::Div(a, b), s))
    }

    fn unary(&mut self, op: Op, x: NodeId) -> NodeId {
        let s = self.shape(x).to_vec();
        self.push(op, s)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Neg(x), x)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Exp(x), x)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Log(x), x)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Abs(x), x)
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Gelu(x), x)
    }

    /// Multiplies by a constant scalar.
    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(Op::Scale(x, c), x)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(Op::AddScalar(x, c), x)
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let mut s = self.shape(x).to_vec();
        let r = s.len();
        if r < 2 {
            return Err(Error::shape("transpose", format!("rank {r}")));
        }
        s.swap(r - 2, r - 1);
        Ok(self.push(Op::Transpose(x), s))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = self
            .shape(*parts.first().ok_or_else(|| Error::shape("concat", "no operands"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {first:?}")));
        }
        let mut out = first.clone();
        out[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{first:?} vs {s:?} on axis {axis}")));
            }
            out[axis] += s[axis];
        }
        Ok(self.push(Op::Concat(parts.to_vec(), axis), out))
    }

    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let mut s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::shape(
                "slice",
                format!("[{start}, {}) on axis {axis} of {s:?}", start + len),
            ));
        }
        s[axis] = len;
        Ok(self.push(Op::Slice { x, axis, start, len }, s))
    }

    fn reduced_shape(&self, op: &'static str, x: NodeId, axis: Option<usize>) -> Result<Vec<usize>> {
        match axis {
            None => Ok(Vec::new()),
            Some(a) => {
                let mut s = self.shape(x).to_vec();
                if a >= s.len() {
                    return Err(Error::shape(op, format!("axis {a} for {s:?}")));
                }
                s[a] = 1;
                Ok(s)
            }
        }
    }

    /// Sum over all elements (scalar result).
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum(x, None), Vec::new())
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let s = self.reduced_shape("sum", x, Some(axis))?;
        Ok(self.push(Op::Sum(x, Some(axis)), s))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Mean(x, None), Vec::new())
    }

    pub fn mean(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let s = self.reduced_shape("mean", x, Some(axis))?;
        Ok(self.push(Op::Mean(x, Some(axis)), s))
    }

    /// Maximum along `axis`; the gradient flows to the first maximal entry.
    pub fn max(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let s = self.reduced_shape("max", x, Some(axis))?;
        Ok(self.push(Op::Max(x, axis), s))
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        if axis >= self.shape(x).len() {
            return Err(Error::shape("softmax", format!("axis {axis} for {:?}", self.shape(x))));
        }
        Ok(self.unary(Op::Softmax(x, axis), x))
    }

    /// Normalizes over the last axis, then applies `gamma` and `beta` (both of
    /// the last axis' extent).
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let c = *self.shape(x).last().unwrap_or(&1);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "x {:?}, gamma {:?}, beta {:?}",
                    self.shape(x),
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        Ok(self.unary(Op::LayerNorm { x, gamma, beta, eps }, x))
    }

    pub fn broadcast_to(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        match k::broadcast_shape(self.shape(x), shape) {
            Some(s) if s == shape => Ok(self.push(Op::BroadcastTo(x), s)),
            _ => Err(Error::shape(
                "broadcast",
                format!("{:?} to {shape:?}", self.shape(x)),
            )),
        }
    }

    /// Evaluates every node. Leaves are read from `bindings`.
    pub fn forward(&mut self, bindings: &impl Bindings) -> Result<()> {
        self.values = None;
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            let v = eval_node(node, &values, bindings)?;
            if !v.all_finite() {
                return Err(Error::NonFinite {
                    node: idx,
                    op: node.op.name(),
                });
            }
            values.push(v);
        }
        self.values = Some(values);
        Ok(())
    }

    pub fn is_evaluated(&self) -> bool {
        self.values.is_some()
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        self.values
            .as_ref()
            .map(|v| &v[id.0])
            .ok_or(Error::NotEvaluated)
    }

    /// Reverse-mode pass from a scalar node. Every trainable leaf gets an entry;
    /// leaves the root does not depend on get zeros.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let values = self.values.as_ref().ok_or(Error::NotEvaluated)?;
        let root_shape = self.shape(root);
        if root_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarRoot(root_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Param(_) = node.op {
                grads[idx] = Some(g);
                continue;
            }
            backprop_node(&self.nodes, idx, values, &g, &mut grads);
        }
        let mut out = Gradients::new();
        for (name, &id) in &self.params {
            let shape = self.shape(id).to_vec();
            let data = grads
                .get_mut(id.0)
                .and_then(Option::take)
                .unwrap_or_else(|| vec![0.0; shape.iter().product()]);
            out.insert(name.clone(), Tensor::from_parts(shape, data));
        }
        Ok(out)
    }
}

fn operands(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Param(_) | Op::Input(_) | Op::Const(_) => Vec::new(),
        Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
            vec![*a, *b]
        }
        Op::Neg(x)
        | Op::Exp(x)
        | Op::Log(x)
        | Op::Abs(x)
        | Op::Gelu(x)
        | Op::Scale(x, _)
        | Op::AddScalar(x, _)
        | Op::Transpose(x)
        | Op::Sum(x, _)
        | Op::Mean(x, _)
        | Op::Max(x, _)
        | Op::Softmax(x, _)
        | Op::BroadcastTo(x) => vec![*x],
        Op::Slice { x, .. } => vec![*x],
        Op::Concat(parts, _) => parts.clone(),
        Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
    }
}

fn bind(name: &str, shape: &[usize], bindings: &impl Bindings) -> Result<Tensor> {
    let t = bindings
        .lookup(name)
        .ok_or_else(|| Error::Unbound(name.to_string()))?;
    if t.shape() != shape {
        return Err(Error::shape(
            "bind",
            format!("`{name}` declared {shape:?}, bound {:?}", t.shape()),
        ));
    }
    Ok(t.clone())
}

/// Splits a matmul into `(batches, m, k, n, shared_rhs)`.
fn matmul_dims(sa: &[usize], sb: &[usize]) -> (usize, usize, usize, usize, bool) {
    let kdim = sa[sa.len() - 1];
    let n = sb[sb.len() - 1];
    let rows: usize = sa[..sa.len() - 1].iter().product();
    if sb.len() == 2 {
        (1, rows, kdim, n, true)
    } else {
        let m = sa[sa.len() - 2];
        (rows / m, m, kdim, n, false)
    }
}

fn eval_node(node: &Node, vals: &[Tensor], bindings: &impl Bindings) -> Result<Tensor> {
    let shape = node.shape.clone();
    let v = |id: &NodeId| &vals[id.0];
    let map = |x: &NodeId, f: &dyn Fn(f64) -> f64| -> Tensor {
        Tensor::from_parts(shape.clone(), v(x).data().iter().map(|&a| f(a)).collect())
    };
    let bin = |a: &NodeId, b: &NodeId, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
        let (ta, tb) = (v(a), v(b));
        Tensor::from_parts(
            shape.clone(),
            k::binary(ta.data(), ta.shape(), tb.data(), tb.shape(), &shape, f),
        )
    };
    let out = match &node.op {
        Op::Param(name) | Op::Input(name) => bind(name, &shape, bindings)?,
        Op::Const(t) => t.clone(),
        Op::MatMul(a, b) => {
            let (ta, tb) = (v(a), v(b));
            let (batches, m, kd, n, _) = matmul_dims(ta.shape(), tb.shape());
            let mut c = vec![0.0; batches * m * n];
            let bstride = if tb.rank() == 2 { 0 } else { kd * n };
            for i in 0..batches {
                k::gemm(
                    m,
                    kd,
                    n,
                    &ta.data()[i * m * kd..],
                    false,
                    &tb.data()[i * bstride..],
                    false,
                    &mut c[i * m * n..],
                    false,
                );
            }
            Tensor::from_parts(shape, c)
        }
        Op::Add(a, b) => bin(a, b, &|x, y| x + y),
        Op::Sub(a, b) => bin(a, b, &|x, y| x - y),
        Op::Mul(a, b) => bin(a, b, &|x, y| x * y),
        Op::Div(a, b) => bin(a, b, &|x, y| x / y),
        Op::Neg(x) => map(x, &|a| -a),
        Op::Exp(x) => map(x, &f64::exp),
        Op::Log(x) => map(x, &f64::ln),
        Op::Abs(x) => map(x, &f64::abs),
        Op::Gelu(x) => map(x, &k::gelu),
        Op::Scale(x, c) => map(x, &|a| a * c),
        Op::AddScalar(x, c) => map(x, &|a| a + c),
        Op::Transpose(x) => Tensor::from_parts(shape, k::transpose_last2(v(x).data(), v(x).shape())),
        Op::Concat(parts, axis) => {
            let views: Vec<(&[f64], &[usize])> =
                parts.iter().map(|p| (v(p).data(), v(p).shape())).collect();
            Tensor::from_parts(shape, k::concat_axis(&views, *axis))
        }
        Op::Slice { x, axis, start, len } => Tensor::from_parts(
            shape,
            k::slice_axis(v(x).data(), v(x).shape(), *axis, *start, *len),
        ),
        Op::Sum(x, None) => Tensor::scalar(v(x).data().iter().sum()),
        Op::Sum(x, Some(axis)) => Tensor::from_parts(
            shape,
            k::reduce_axis(v(x).data(), v(x).shape(), *axis, 0.0, |a, b| a + b),
        ),
        Op::Mean(x, None) => {
            let t = v(x);
            Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64)
        }
        Op::Mean(x, Some(axis)) => {
            let t = v(x);
            let len = t.shape()[*axis] as f64;
            let mut r = k::reduce_axis(t.data(), t.shape(), *axis, 0.0, |a, b| a + b);
            r.iter_mut().for_each(|s| *s /= len);
            Tensor::from_parts(shape, r)
        }
        Op::Max(x, axis) => Tensor::from_parts(
            shape,
            k::reduce_axis(v(x).data(), v(x).shape(), *axis, f64::NEG_INFINITY, f64::max),
        ),
        Op::Softmax(x, axis) => {
            Tensor::from_parts(shape, k::softmax_axis(v(x).data(), v(x).shape(), *axis))
        }
        Op::LayerNorm { x, gamma, beta, eps } => Tensor::from_parts(
            shape,
            k::layer_norm(v(x).data(), v(gamma).data(), v(beta).data(), *eps),
        ),
        Op::BroadcastTo(x) => Tensor::from_parts(shape.clone(), k::expand(v(x).data(), v(x).shape(), &shape)),
    };
    Ok(out)
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: NodeId, g: Vec<f64>) {
    if !nodes[id.0].requires_grad {
        return;
    }
    match &mut grads[id.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn backprop_node(
    nodes: &[Node],
    idx: usize,
    vals: &[Tensor],
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let node = &nodes[idx];
    let own = vals[idx].data();
    let out_shape = &node.shape;
    let needs = |id: &NodeId| nodes[id.0].requires_grad;
    let v = |id: &NodeId| &vals[id.0];
    let mut push = |id: NodeId, gi: Vec<f64>| accumulate(nodes, grads, id, gi);
    let elementwise = |x: &NodeId, f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        v(x).data().iter().zip(g).map(|(&a, &gi)| f(a, gi)).collect()
    };
    match &node.op {
        Op::Param(_) | Op::Input(_) | Op::Const(_) => {}
        Op::MatMul(a, b) => {
            let (ta, tb) = (v(a), v(b));
            let (batches, m, kd, n, shared) = matmul_dims(ta.shape(), tb.shape());
            if needs(a) {
                let mut ga = vec![0.0; ta.numel()];
                let bstride = if shared { 0 } else { kd * n };
                for i in 0..batches {
                    k::gemm(
                        m,
                        n,
                        kd,
                        &g[i * m * n..],
                        false,
                        &tb.data()[i * bstride..],
                        true,
                        &mut ga[i * m * kd..],
                        false,
                    );
                }
                push(*a, ga);
            }
            if needs(b) {
                let mut gb = vec![0.0; tb.numel()];
                if shared {
                    k::gemm(kd, m, n, ta.data(), true, g, false, &mut gb, false);
                } else {
                    for i in 0..batches {
                        k::gemm(
                            kd,
                            m,
                            n,
                            &ta.data()[i * m * kd..],
                            true,
                            &g[i * m * n..],
                            false,
                            &mut gb[i * kd * n..],
                            false,
                        );
                    }
                }
                push(*b, gb);
            }
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if needs(a) {
                push(*a, k::reduce_to(g, out_shape, v(a).shape()));
            }
            if needs(b) {
                let mut gb = k::reduce_to(g, out_shape, v(b).shape());
                if sign < 0.0 {
                    gb.iter_mut().for_each(|x| *x = -*x);
                }
                push(*b, gb);
            }
        }
        Op::Mul(a, b) => {
            let (ta, tb) = (v(a), v(b));
            if needs(a) {
                let prod = k::binary(g, out_shape, tb.data(), tb.shape(), out_shape, |x, y| x * y);
                push(*a, k::reduce_to(&prod, out_shape, ta.shape()));
            }
            if needs(b) {
                let prod = k::binary(g, out_shape, ta.data(), ta.shape(), out_shape, |x, y| x * y);
                push(*b, k::reduce_to(&prod, out_shape, tb.shape()));
            }
        }
        Op::Div(a, b) => {
            let (ta, tb) = (v(a), v(b));
            if needs(a) {
                let q = k::binary(g, out_shape, tb.data(), tb.shape(), out_shape, |x, y| x / y);
                push(*a, k::reduce_to(&q, out_shape, ta.shape()));
            }
            if needs(b) {
                // d(a/b)/db = -(a/b)/b
                let gq: Vec<f64> = g.iter().zip(own).map(|(x, y)| -x * y).collect();
                let q = k::binary(&gq, out_shape, tb.data(), tb.shape(), out_shape, |x, y| x / y);
                push(*b, k::reduce_to(&q, out_shape, tb.shape()));
            }
        }
        Op::Neg(x) => push(*x, g.iter().map(|a| -a).collect()),
        Op::Exp(x) => push(*x, own.iter().zip(g).map(|(y, gi)| gi * y).collect()),
        Op::Log(x) => {
            let gx = elementwise(x, &|a, gi| gi / a);
            push(*x, gx)
        }
        Op::Abs(x) => {
            let gx = elementwise(x, &|a, gi| if a > 0.0 { gi } else if a < 0.0 { -gi } else { 0.0 });
            push(*x, gx)
        }
        Op::Gelu(x) => {
            let gx = elementwise(x, &|a, gi| gi * k::gelu_grad(a));
            push(*x, gx)
        }
        Op::Scale(x, c) => push(*x, g.iter().map(|a| a * c).collect()),
        Op::AddScalar(x, _) | Op::BroadcastTo(x) => {
            push(*x, k::reduce_to(g, out_shape, v(x).shape()))
        }
        Op::Transpose(x) => push(*x, k::transpose_last2(g, out_shape)),
        Op::Concat(parts, axis) => {
            let mut start = 0;
            for p in parts {
                let len = v(p).shape()[*axis];
                if needs(p) {
                    push(*p, k::slice_axis(g, out_shape, *axis, start, len));
                }
                start += len;
            }
        }
        Op::Slice { x, axis, start, len } => {
            push(*x, k::unslice_axis(g, v(x).shape(), *axis, *start, *len))
        }
        Op::Sum(x, None) => push(*x, vec![g[0]; v(x).numel()]),
        Op::Sum(x, Some(axis)) => push(*x, k::spread_axis(g, v(x).shape(), *axis, 1.0)),
        Op::Mean(x, None) => {
            let n = v(x).numel();
            push(*x, vec![g[0] / n as f64; n])
        }
        Op::Mean(x, Some(axis)) => {
            let len = v(x).shape()[*axis] as f64;
            push(*x, k::spread_axis(g, v(x).shape(), *axis, 1.0 / len))
        }
        Op::Max(x, axis) => {
            let t = v(x);
            let arg = k::argmax_axis(t.data(), t.shape(), *axis);
            let (outer, len, inner) = split_axis(t.shape(), *axis);
            let mut gx = vec![0.0; t.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let slot = o * inner + i;
                    gx[(o * len + arg[slot]) * inner + i] = g[slot];
                }
            }
            push(*x, gx)
        }
        Op::Softmax(x, axis) => {
            push(*x, k::softmax_backward(own, g, out_shape, *axis))
        }
        Op::LayerNorm { x, gamma, beta, eps } => {
            let (dx, dg, db) = k::layer_norm_backward(v(x).data(), v(gamma).data(), g, *eps);
            push(*x, dx);
            push(*gamma, dg);
            push(*beta, db);
        }
    }
}
