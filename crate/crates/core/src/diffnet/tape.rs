//! Vector-valued reverse-mode tape.
//!
//! Every node holds a dense `f64` vector. Nodes are appended in evaluation
//! order, so insertion order is a topological order and the backward pass is
//! a single reverse sweep.

use crate::diffnet::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatVec { w: ParamId, x: NodeId },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    Concat(Vec<NodeId>),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Sum(NodeId),
    Pick(NodeId, usize),
}

/// Primitive kinds, used to inject faults into backward rules when testing
/// the gradient checker itself.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    MatVec,
    Mul,
    Sigmoid,
    Tanh,
    LogSoftmax,
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_same(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch(format!(
            "{what}: lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose backward rule for `kind` is deliberately wrong.
    #[doc(hidden)]
    pub fn with_fault(kind: OpKind) -> Self {
        Tape {
            nodes: Vec::new(),
            fault: Some(kind),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1);
        v[0]
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant input; no gradient flows past it.
    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// A constant copy of `x`'s current value, cutting the graph.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).to_vec();
        self.input(v)
    }

    /// The whole parameter `id`, flattened row-major.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(Op::Param(id), store.value(id).to_vec())
    }

    /// `W · x` for a `rows × cols` parameter `W`.
    pub fn matvec(&mut self, store: &ParamStore, w: ParamId, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = store.shape(w);
        let xv = self.value(x);
        if xv.len() != cols {
            return Err(Error::DimMismatch(format!(
                "`{}` is {rows}x{cols} but input has length {}",
                store.name(w),
                xv.len()
            )));
        }
        let wv = store.value(w);
        let out = wv.chunks_exact(cols).map(|row| dot(row, xv)).collect();
        Ok(self.push(Op::MatVec { w, x }, out))
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same(av, bv, what)?;
        let out = av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.push(op, out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.value(a).iter().map(|x| c * x).collect();
        self.push(Op::Scale(a, c), out)
    }

    /// `a + c` elementwise.
    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.value(a).iter().map(|x| x + c).collect();
        self.push(Op::Offset(a), out)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut out = Vec::with_capacity(parts.iter().map(|&p| self.value(p).len()).sum());
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        self.push(Op::Concat(parts.to_vec()), out)
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(op, out)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::ln, Op::Log(a))
    }

    /// Softmax with max-subtraction.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let out = softmax(self.value(a));
        self.push(Op::Softmax(a), out)
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let out = x.iter().map(|v| v - lse).collect();
        self.push(Op::LogSoftmax(a), out)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).iter().sum();
        self.push(Op::Sum(a), vec![s])
    }

    /// Element `i` of `a` as a length-1 node.
    pub fn pick(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        let v = *self.value(a).get(i).ok_or_else(|| {
            Error::DimMismatch(format!("index {i} out of range {}", self.value(a).len()))
        })?;
        Ok(self.push(Op::Pick(a, i), vec![v]))
    }

    /// Gradients of scalar node `loss` with respect to every parameter it
    /// reaches.
    pub fn gradients(&self, loss: NodeId, store: &ParamStore) -> Result<Gradients> {
        let n_out = self.value(loss).len();
        if n_out != 1 {
            return Err(Error::NonScalarLoss(n_out));
        }
        let mut grads = Gradients::with_capacity(store.len());
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        fn acc(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut [f64] {
            adj[id.0].get_or_insert_with(|| vec![0.0; len])
        }

        let fault = |k: OpKind| if self.fault == Some(k) { 1.5 } else { 1.0 };

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => {
                    for (a, b) in grads.slot_mut(*p, g.len()).iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::MatVec { w, x } => {
                    let (rows, cols) = store.shape(*w);
                    let xv = &self.nodes[x.0].value;
                    let wv = store.value(*w);
                    let k = fault(OpKind::MatVec);
                    let gw = grads.slot_mut(*w, rows * cols);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == 0.0 {
                            continue;
                        }
                        let row = &mut gw[r * cols..(r + 1) * cols];
                        for (a, &b) in row.iter_mut().zip(xv) {
                            *a += k * gr * b;
                        }
                    }
                    if !matches!(self.nodes[x.0].op, Op::Leaf) {
                        let gx = acc(&mut adj, *x, cols);
                        for (r, &gr) in g.iter().enumerate() {
                            if gr == 0.0 {
                                continue;
                            }
                            let row = &wv[r * cols..(r + 1) * cols];
                            for (a, &b) in gx.iter_mut().zip(row) {
                                *a += gr * b;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for id in [*a, *b] {
                        for (s, d) in acc(&mut adj, id, g.len()).iter_mut().zip(&g) {
                            *s += d;
                        }
                    }
                }
                Op::Sub(a, b) => {
                    for (s, d) in acc(&mut adj, *a, g.len()).iter_mut().zip(&g) {
                        *s += d;
                    }
                    for (s, d) in acc(&mut adj, *b, g.len()).iter_mut().zip(&g) {
                        *s -= d;
                    }
                }
                Op::Mul(a, b) => {
                    let k = fault(OpKind::Mul);
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    for (i, s) in acc(&mut adj, *a, g.len()).iter_mut().enumerate() {
                        *s += k * g[i] * bv[i];
                    }
                    for (i, s) in acc(&mut adj, *b, g.len()).iter_mut().enumerate() {
                        *s += g[i] * av[i];
                    }
                }
                Op::Div(a, b) => {
                    let bv = &self.nodes[b.0].value;
                    let ga: Vec<f64> = g.iter().zip(bv).map(|(d, y)| d / y).collect();
                    let gb: Vec<f64> = g
                        .iter()
                        .zip(bv)
                        .zip(out)
                        .map(|((d, y), q)| -d * q / y)
                        .collect();
                    for (s, d) in acc(&mut adj, *a, g.len()).iter_mut().zip(&ga) {
                        *s += d;
                    }
                    for (s, d) in acc(&mut adj, *b, g.len()).iter_mut().zip(&gb) {
                        *s += d;
                    }
                }
                Op::Scale(a, c) => {
                    for (s, d) in acc(&mut adj, *a, g.len()).iter_mut().zip(&g) {
                        *s += c * d;
                    }
                }
                Op::Offset(a) => {
                    for (s, d) in acc(&mut adj, *a, g.len()).iter_mut().zip(&g) {
                        *s += d;
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].value.len();
                        for (s, d) in acc(&mut adj, p, len).iter_mut().zip(&g[off..off + len]) {
                            *s += d;
                        }
                        off += len;
                    }
                }
                Op::Relu(a) => {
                    for (i, s) in acc(&mut adj, *a, g.len()).iter_mut().enumerate() {
                        if out[i] > 0.0 {
                            *s += g[i];
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let k = fault(OpKind::Sigmoid);
                    for (i, s) in acc(&mut adj, *a, g.len()).iter_mut().enumerate() {
                        *s += k * g[i] * out[i] * (1.0 - out[i]);
                    }
                }
                Op::Tanh(a) => {
                    let k = fault(OpKind::Tanh);
                    for (i, s) in acc(&mut adj, *a, g.len()).iter_mut().enumerate() {
                        *s += k * g[i] * (1.0 - out[i] * out[i]);
                    }
                }
                Op::Exp(a) => {
                    for (i, s) in acc(&mut adj, *a, g.len()).iter_mut().enumerate() {
                        *s += g[i] * out[i];
                    }
                }
                Op::Log(a) => {
                    let av = &self.nodes[a.0].value;
                    let ga: Vec<f64> = g.iter().zip(av).map(|(d, x)| d / x).collect();
                    for (s, d) in acc(&mut adj, *a, g.len()).iter_mut().zip(&ga) {
                        *s += d;
                    }
                }
                Op::Softmax(a) => {
                    let dot: f64 = g.iter().zip(out).map(|(d, y)| d * y).sum();
                    for (i, s) in acc(&mut adj, *a, g.len()).iter_mut().enumerate() {
                        *s += out[i] * (g[i] - dot);
                    }
                }
                Op::LogSoftmax(a) => {
                    let k = fault(OpKind::LogSoftmax);
                    let total: f64 = g.iter().sum();
                    for (i, s) in acc(&mut adj, *a, g.len()).iter_mut().enumerate() {
                        *s += g[i] - k * out[i].exp() * total;
                    }
                }
                Op::Sum(a) => {
                    let len = self.nodes[a.0].value.len();
                    for s in acc(&mut adj, *a, len).iter_mut() {
                        *s += g[0];
                    }
                }
                Op::Pick(a, i) => {
                    let len = self.nodes[a.0].value.len();
                    acc(&mut adj, *a, len)[*i] += g[0];
                }
            }
        }
        Ok(grads)
    }

    /// Accumulates d`loss`/dθ into the store's gradient slots.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss, store)?;
        store.accumulate(&grads, 1.0);
        Ok(())
    }
}

/// Dot product with four partial sums.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, ar) = a.split_at(a.len() / 4 * 4);
    let (bc, br) = b.split_at(ac.len());
    for (x, y) in ac.chunks_exact(4).zip(bc.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_gradient() {
        let mut store = ParamStore::new();
        let w = store.zeros("w", 1, 1);
        store.value_mut(w)[0] = 3.0;
        let mut tape = Tape::new();
        let x = tape.input(vec![2.0]);
        let loss = tape.matvec(&store, w, x).unwrap();
        let g = tape.gradients(loss, &store).unwrap();
        assert_eq!(g.get(w).unwrap(), &[2.0]);
    }

    #[test]
    fn inactive_relu_has_zero_gradient() {
        let mut store = ParamStore::new();
        let w = store.zeros("w", 1, 1);
        store.value_mut(w)[0] = 0.7;
        let mut tape = Tape::new();
        let x = tape.input(vec![-1.0]);
        let y = tape.matvec(&store, w, x).unwrap();
        let loss = tape.relu(y);
        let g = tape.gradients(loss, &store).unwrap();
        assert_eq!(g.get(w).unwrap(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.input(vec![1.0, 2.0]);
        assert!(matches!(
            tape.gradients(x, &store),
            Err(Error::NonScalarLoss(2))
        ));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut store = ParamStore::new();
        let w = store.zeros("w", 1, 1);
        store.value_mut(w)[0] = 1.5;
        let mut tape = Tape::new();
        let p = tape.param(&store, w);
        let d = tape.detach(p);
        let loss = tape.mul(d, p).unwrap();
        let g = tape.gradients(loss, &store).unwrap();
        assert_eq!(g.get(w).unwrap(), &[1.5]);
    }

    #[test]
    fn softmax_is_normalized_and_positive() {
        let s = softmax(&[1000.0, -1000.0, 3.0]);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(s.iter().all(|&p| p >= 0.0));
        let s = softmax(&[0.3, -0.2, 0.1]);
        assert!(s.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let mut tape = Tape::new();
        let a = tape.input(vec![1.0]);
        let b = tape.input(vec![1.0, 2.0]);
        assert!(matches!(tape.add(a, b), Err(Error::DimMismatch(_))));
    }
}
