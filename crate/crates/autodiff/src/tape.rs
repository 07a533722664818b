//! The operation record and reverse sweep.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and the backward pass is a single reverse scan.

use std::cell::{Ref, RefCell};
use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{matmul_nt, matmul_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Value {
    pub(crate) id: usize,
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul(Value, Value),
    Add(Value, Value),
    Mul(Value, Value),
    AddRow(Value, Value),
    Affine(Value, f64),
    Sigmoid(Value),
    Tanh(Value),
    Relu(Value),
    Gelu(Value),
    Softmax(Value),
    LogSoftmax(Value),
    LayerNorm {
        x: Value,
        gain: Value,
        bias: Value,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    GatherRows(Value, Vec<usize>),
    ConcatRows(Vec<Value>),
    SliceRows(Value, usize),
    Attention {
        q: Value,
        k: Value,
        v: Value,
        heads: usize,
        /// per head, `L × S` row-major
        probs: Vec<Vec<f64>>,
    },
    Mean(Value),
    Sum(Value),
    CrossEntropy {
        logits: Value,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    /// Scalar output whose input gradients were computed externally.
    External(Vec<(Value, Tensor)>),
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Single-owner operation record. Build a forward pass by calling op
/// methods, then call [`Tape::backward`] on a scalar result.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
    params: RefCell<BTreeMap<String, Value>>,
    param_ids: RefCell<HashMap<usize, String>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Value {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Value { id: nodes.len() - 1 }
    }

    pub(crate) fn needs_grad(&self, vs: &[Value]) -> bool {
        let nodes = self.nodes.borrow();
        vs.iter().any(|v| nodes[v.id].requires_grad)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&self, t: Tensor) -> Value {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives a gradient, addressable by [`Gradients::get_value`].
    pub fn variable(&self, t: Tensor) -> Value {
        self.push(t, Op::Leaf, true)
    }

    /// Registers a named trainable parameter. Repeated calls with the same
    /// name return the same node.
    pub fn param(&self, store: &ParamStore, name: &str) -> Result<Value> {
        self.named_leaf(store, name, true)
    }

    /// Registers a parameter as a constant: it is read from the store but
    /// excluded from gradient computation.
    pub fn frozen_param(&self, store: &ParamStore, name: &str) -> Result<Value> {
        self.named_leaf(store, name, false)
    }

    fn named_leaf(&self, store: &ParamStore, name: &str, trainable: bool) -> Result<Value> {
        if let Some(&v) = self.params.borrow().get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?
            .clone();
        let v = self.push(t, Op::Leaf, trainable);
        self.params.borrow_mut().insert(name.to_string(), v);
        if trainable {
            self.param_ids.borrow_mut().insert(v.id, name.to_string());
        }
        Ok(v)
    }

    pub fn value(&self, v: Value) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.id].value)
    }

    pub fn tensor(&self, v: Value) -> Tensor {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn scalar(&self, v: Value) -> f64 {
        self.nodes.borrow()[v.id].value.data()[0]
    }

    pub fn shape(&self, v: Value) -> [usize; 2] {
        self.nodes.borrow()[v.id].value.shape()
    }

    pub fn requires_grad(&self, v: Value) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    /// Per-head attention weights recorded by a `scaled_dot_attention` node.
    pub fn attention_weights(&self, v: Value) -> Option<Vec<Tensor>> {
        let nodes = self.nodes.borrow();
        match &nodes[v.id].op {
            Op::Attention { probs, q, k, .. } => {
                let l = nodes[q.id].value.rows();
                let s = nodes[k.id].value.rows();
                Some(
                    probs
                        .iter()
                        .map(|p| Tensor::new(l, s, p.clone()).expect("consistent shape"))
                        .collect(),
                )
            }
            _ => None,
        }
    }

    /// Reverse sweep from a `1 × 1` root.
    pub fn backward(&self, root: Value) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.shape() != [1, 1] {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                nodes[root.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.id + 1];
        grads[root.id] = Some(vec![1.0]);
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            backward_node(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let mut by_name = BTreeMap::new();
        for (id, name) in self.param_ids.borrow().iter() {
            let shape = nodes[*id].value.shape();
            let data = grads
                .get(*id)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| vec![0.0; shape[0] * shape[1]]);
            by_name.insert(
                name.clone(),
                Tensor::new(shape[0], shape[1], data).expect("gradient matches value shape"),
            );
        }
        Ok(Gradients {
            by_name,
            by_id: grads,
        })
    }
}

/// Gradients of a backward pass: per registered parameter name (zero for
/// parameters on the tape that the root does not depend on), and per node.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_name: BTreeMap<String, Tensor>,
    by_id: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Name-keyed gradients not tied to any tape.
    pub fn from_map(by_name: BTreeMap<String, Tensor>) -> Self {
        Self {
            by_name,
            by_id: Vec::new(),
        }
    }

    /// Adds `other`'s named gradients into this map (union of names).
    pub fn accumulate(&mut self, other: &Gradients) {
        for (name, g) in &other.by_name {
            match self.by_name.get_mut(name) {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.by_name.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.by_name.values_mut() {
            for x in g.data_mut() {
                *x *= factor;
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    /// Gradient of any node; `None` if it did not influence the root or
    /// does not require gradients.
    pub fn get_value(&self, v: Value) -> Option<&[f64]> {
        self.by_id.get(v.id).and_then(|g| g.as_deref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.by_name.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.by_name.keys()
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor> {
        self.by_name
    }

    /// Global L2 norm over all named gradients.
    pub fn norm(&self) -> f64 {
        self.by_name
            .values()
            .flat_map(|t| t.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Value, contrib: &[f64]) {
    if !nodes[v.id].requires_grad {
        return;
    }
    match &mut grads[v.id] {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(contrib) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(contrib.to_vec()),
    }
}

fn backward_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Value| &nodes[v.id].value;
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
            if nodes[a.id].requires_grad {
                accumulate(nodes, grads, *a, &matmul_nt(g, tb.data(), n, m, k));
            }
            if nodes[b.id].requires_grad {
                accumulate(nodes, grads, *b, &matmul_tn(ta.data(), g, n, k, m));
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g);
            accumulate(nodes, grads, *b, g);
        }
        Op::Mul(a, b) => {
            let (ta, tb) = (val(*a).data(), val(*b).data());
            let ga: Vec<f64> = g.iter().zip(tb).map(|(g, y)| g * y).collect();
            let gb: Vec<f64> = g.iter().zip(ta).map(|(g, x)| g * x).collect();
            accumulate(nodes, grads, *a, &ga);
            accumulate(nodes, grads, *b, &gb);
        }
        Op::AddRow(a, bias) => {
            accumulate(nodes, grads, *a, g);
            let cols = val(*bias).cols();
            let mut gb = vec![0.0; cols];
            for row in g.chunks(cols) {
                for (s, x) in gb.iter_mut().zip(row) {
                    *s += x;
                }
            }
            accumulate(nodes, grads, *bias, &gb);
        }
        Op::Affine(a, scale) => {
            let ga: Vec<f64> = g.iter().map(|x| x * scale).collect();
            accumulate(nodes, grads, *a, &ga);
        }
        Op::Sigmoid(a) => {
            let ga: Vec<f64> = g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect();
            accumulate(nodes, grads, *a, &ga);
        }
        Op::Tanh(a) => {
            let ga: Vec<f64> = g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect();
            accumulate(nodes, grads, *a, &ga);
        }
        Op::Relu(a) => {
            let ga: Vec<f64> = g
                .iter()
                .zip(val(*a).data())
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect();
            accumulate(nodes, grads, *a, &ga);
        }
        Op::Gelu(a) => {
            let ga: Vec<f64> = g
                .iter()
                .zip(val(*a).data())
                .map(|(g, &x)| g * crate::ops::gelu_grad(x))
                .collect();
            accumulate(nodes, grads, *a, &ga);
        }
        Op::Softmax(a) => {
            let cols = node.value.cols();
            let mut ga = vec![0.0; g.len()];
            for ((gr, yr), out_r) in g.chunks(cols).zip(out.chunks(cols)).zip(ga.chunks_mut(cols)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for j in 0..cols {
                    out_r[j] = yr[j] * (gr[j] - dot);
                }
            }
            accumulate(nodes, grads, *a, &ga);
        }
        Op::LogSoftmax(a) => {
            let cols = node.value.cols();
            let mut ga = vec![0.0; g.len()];
            for ((gr, yr), out_r) in g.chunks(cols).zip(out.chunks(cols)).zip(ga.chunks_mut(cols)) {
                let total: f64 = gr.iter().sum();
                for j in 0..cols {
                    out_r[j] = gr[j] - yr[j].exp() * total;
                }
            }
            accumulate(nodes, grads, *a, &ga);
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let cols = node.value.cols();
            let gain_v = val(*gain).data();
            let mut gx = vec![0.0; g.len()];
            let mut gg = vec![0.0; cols];
            let mut gbias = vec![0.0; cols];
            for (r, (gr, xr)) in g.chunks(cols).zip(xhat.chunks(cols)).enumerate() {
                let mut sum_d = 0.0;
                let mut sum_dx = 0.0;
                for j in 0..cols {
                    let d = gr[j] * gain_v[j];
                    sum_d += d;
                    sum_dx += d * xr[j];
                    gg[j] += gr[j] * xr[j];
                    gbias[j] += gr[j];
                }
                let n = cols as f64;
                let out_r = &mut gx[r * cols..(r + 1) * cols];
                for j in 0..cols {
                    let d = gr[j] * gain_v[j];
                    out_r[j] = rstd[r] / n * (n * d - sum_d - xr[j] * sum_dx);
                }
            }
            accumulate(nodes, grads, *x, &gx);
            accumulate(nodes, grads, *gain, &gg);
            accumulate(nodes, grads, *bias, &gbias);
        }
        Op::GatherRows(a, idx) => {
            if nodes[a.id].requires_grad {
                let src = val(*a);
                let cols = src.cols();
                let mut ga = vec![0.0; src.len()];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..cols {
                        ga[i * cols + j] += g[r * cols + j];
                    }
                }
                accumulate(nodes, grads, *a, &ga);
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for p in parts {
                let len = val(*p).len();
                accumulate(nodes, grads, *p, &g[offset..offset + len]);
                offset += len;
            }
        }
        Op::SliceRows(a, start) => {
            if nodes[a.id].requires_grad {
                let src = val(*a);
                let cols = src.cols();
                let mut ga = vec![0.0; src.len()];
                ga[start * cols..start * cols + g.len()].copy_from_slice(g);
                accumulate(nodes, grads, *a, &ga);
            }
        }
        Op::Attention {
            q,
            k,
            v,
            heads,
            probs,
        } => {
            let (tq, tk, tv) = (val(*q), val(*k), val(*v));
            let (l, s, d) = (tq.rows(), tk.rows(), tq.cols());
            let dh = d / heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let mut gq = vec![0.0; l * d];
            let mut gk = vec![0.0; s * d];
            let mut gv = vec![0.0; s * d];
            for (h, p) in probs.iter().enumerate() {
                let off = h * dh;
                for i in 0..l {
                    let go = &g[i * d + off..i * d + off + dh];
                    let prow = &p[i * s..(i + 1) * s];
                    // dP_ij = go · v_j ; dV_j += P_ij go
                    let mut dp = vec![0.0; s];
                    for j in 0..s {
                        let vj = &tv.data()[j * d + off..j * d + off + dh];
                        dp[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                        if prow[j] != 0.0 {
                            for c in 0..dh {
                                gv[j * d + off + c] += prow[j] * go[c];
                            }
                        }
                    }
                    let dot: f64 = dp.iter().zip(prow).map(|(a, b)| a * b).sum();
                    for j in 0..s {
                        let ds = prow[j] * (dp[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for c in 0..dh {
                            gq[i * d + off + c] += ds * tk.data()[j * d + off + c];
                            gk[j * d + off + c] += ds * tq.data()[i * d + off + c];
                        }
                    }
                }
            }
            accumulate(nodes, grads, *q, &gq);
            accumulate(nodes, grads, *k, &gk);
            accumulate(nodes, grads, *v, &gv);
        }
        Op::Mean(a) => {
            let n = val(*a).len() as f64;
            let ga = vec![g[0] / n; val(*a).len()];
            accumulate(nodes, grads, *a, &ga);
        }
        Op::Sum(a) => {
            let ga = vec![g[0]; val(*a).len()];
            accumulate(nodes, grads, *a, &ga);
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let cols = val(*logits).cols();
            let rows = targets.len() as f64;
            let mut ga: Vec<f64> = probs.iter().map(|p| p * g[0] / rows).collect();
            for (r, &t) in targets.iter().enumerate() {
                ga[r * cols + t] -= g[0] / rows;
            }
            accumulate(nodes, grads, *logits, &ga);
        }
        Op::External(parts) => {
            for (v, local) in parts {
                let ga: Vec<f64> = local.data().iter().map(|x| x * g[0]).collect();
                accumulate(nodes, grads, *v, &ga);
            }
        }
    }
}
