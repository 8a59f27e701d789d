//! Eagerly evaluated compute graph with reverse-mode gradient accumulation.
//!
//! Every op computes its value at construction time and records itself on a
//! tape, so `forward` is a cached read and `backward` is a single reverse
//! sweep. The op set is fixed: add, mul (broadcast on trailing axes), matmul,
//! sum over an axis, softmax, log-softmax, exp, log, concatenate, embedding
//! lookup, logsumexp over an axis, tanh, relu, 2-D transpose, reshape and
//! inverted dropout. Everything else in the crate is composed from these.
//!
//! Values are validated for finiteness after every op; a NaN or Inf anywhere
//! is reported as an error rather than silently propagated.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

use super::params::ParameterStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Whether dropout is live. Training graphs carry their own mask stream so a
/// fixed seed reproduces the exact same masks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunMode {
    Train { dropout: f64 },
    Eval,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    SumAxis(NodeId, usize),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Concat(Vec<NodeId>, usize),
    Lookup(NodeId, Vec<usize>),
    LogSumExp(NodeId, usize),
    Tanh(NodeId),
    Relu(NodeId),
    Transpose2(NodeId),
    Reshape(NodeId),
    Dropout(NodeId, Tensor),
}

struct ComputeNode {
    op: Op,
    value: Tensor,
}

pub struct Graph {
    nodes: Vec<ComputeNode>,
    mode: RunMode,
    dropout_rng: ChaCha8Rng,
    param_leaves: HashMap<String, NodeId>,
}

impl Graph {
    pub fn new(mode: RunMode) -> Self {
        Self::with_seed(mode, 0)
    }

    /// `seed` only matters in training mode, where it drives dropout masks.
    pub fn with_seed(mode: RunMode, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            mode,
            dropout_rng: ChaCha8Rng::seed_from_u64(seed),
            param_leaves: HashMap::new(),
        }
    }

    pub fn mode(&self) -> RunMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite {
                op: op_name(&op).to_string(),
            });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(ComputeNode { op, value });
        Ok(id)
    }

    // ---- leaves ----

    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(Op::Constant, value)
    }

    pub fn scalar(&mut self, value: f64) -> Result<NodeId> {
        self.constant(Tensor::scalar(value))
    }

    pub fn vector(&mut self, values: Vec<f64>) -> Result<NodeId> {
        self.constant(Tensor::vector(values))
    }

    /// Binds a named parameter as a leaf. Repeated binds of the same name
    /// return the same node so its gradient accumulates in one slot.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.param_leaves.get(name) {
            return Ok(id);
        }
        let value = store.value(name)?.clone();
        let id = self.push(Op::Param, value)?;
        self.param_leaves.insert(name.to_string(), id);
        Ok(id)
    }

    // ---- ops ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = broadcast_binary(self.value(a), self.value(b), |x, y| x + y)?;
        self.push(Op::Add(a, b), value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = broadcast_binary(self.value(a), self.value(b), |x, y| x * y)?;
        self.push(Op::Mul(a, b), value)
    }

    /// Scales by a constant; convenience over `mul` with a scalar constant.
    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let c = self.scalar(factor)?;
        self.mul(a, c)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let value = matmul_forward(va, vb)?;
        self.push(Op::MatMul(a, b), value)
    }

    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let va = self.value(a);
        if axis >= va.shape().len() {
            return Err(Error::Shape(format!(
                "sum axis {} out of range for shape {:?}",
                axis,
                va.shape()
            )));
        }
        let value = sum_axis_forward(va, axis);
        self.push(Op::SumAxis(a, axis), value)
    }

    /// Sums every element down to a scalar.
    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let mut id = a;
        while !self.value(id).shape().is_empty() {
            id = self.sum_axis(id, 0)?;
        }
        Ok(id)
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let value = rowwise(self.value(a), |row, out| {
            let s = super::tensor::softmax_slice(row);
            out.copy_from_slice(&s);
        })?;
        self.push(Op::Softmax(a), value)
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let value = rowwise(self.value(a), |row, out| {
            let lse = super::tensor::logsumexp_slice(row).expect("non-empty row");
            for (o, &x) in out.iter_mut().zip(row) {
                *o = x - lse;
            }
        })?;
        self.push(Op::LogSoftmax(a), value)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let value = map_unary(self.value(a), f64::exp);
        self.push(Op::Exp(a), value)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let value = map_unary(self.value(a), f64::ln);
        self.push(Op::Log(a), value)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let value = map_unary(self.value(a), f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = map_unary(self.value(a), |x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a), value)
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of zero tensors".into()));
        }
        let value = concat_forward(
            &parts.iter().map(|&p| self.value(p)).collect::<Vec<_>>(),
            axis,
        )?;
        self.push(Op::Concat(parts.to_vec(), axis), value)
    }

    /// Gathers rows of a 2-D table: `out[i] = table[indices[i]]`.
    pub fn lookup(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let vt = self.value(table);
        if vt.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "lookup table must be 2-D, got {:?}",
                vt.shape()
            )));
        }
        let (rows, cols) = (vt.shape()[0], vt.shape()[1]);
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &ix in indices {
            if ix >= rows {
                return Err(Error::Shape(format!(
                    "lookup index {} out of range for {} rows",
                    ix, rows
                )));
            }
            data.extend_from_slice(vt.row(ix));
        }
        let value = Tensor::new(vec![indices.len(), cols], data)?;
        self.push(Op::Lookup(table, indices.to_vec()), value)
    }

    pub fn logsumexp(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let va = self.value(a);
        if axis >= va.shape().len() {
            return Err(Error::Shape(format!(
                "logsumexp axis {} out of range for shape {:?}",
                axis,
                va.shape()
            )));
        }
        let value = reduce_axis(va, axis, |lane| {
            super::tensor::logsumexp_slice(lane).expect("non-empty lane")
        });
        self.push(Op::LogSumExp(a, axis), value)
    }

    pub fn transpose2(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "transpose expects 2-D, got {:?}",
                va.shape()
            )));
        }
        let (r, c) = (va.shape()[0], va.shape()[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = va.data()[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], data)?;
        self.push(Op::Transpose2(a), value)
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let value = self.value(a).reshaped(shape)?;
        self.push(Op::Reshape(a), value)
    }

    /// Inverted dropout on `a`. In eval mode, or at rate 0, this is the
    /// identity and adds no node.
    pub fn dropout(&mut self, a: NodeId) -> Result<NodeId> {
        let rate = match self.mode {
            RunMode::Train { dropout } => dropout,
            RunMode::Eval => return Ok(a),
        };
        if rate <= 0.0 {
            return Ok(a);
        }
        if rate >= 1.0 {
            return Err(Error::Graph(format!("dropout rate {} out of range", rate)));
        }
        let keep = 1.0 - rate;
        let shape = self.value(a).shape().to_vec();
        let n = self.value(a).len();
        let mask_data: Vec<f64> = (0..n)
            .map(|_| {
                if self.dropout_rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let mask = Tensor::new(shape.clone(), mask_data)?;
        let mut data = Vec::with_capacity(n);
        for (x, m) in self.value(a).data().iter().zip(mask.data()) {
            data.push(x * m);
        }
        let value = Tensor::new(shape, data)?;
        self.push(Op::Dropout(a, mask), value)
    }

    // ---- reads ----

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// The cached forward value of `root`; values are computed eagerly at
    /// construction, so this is a read.
    pub fn forward(&self, root: NodeId) -> Result<&Tensor> {
        if root.0 >= self.nodes.len() {
            return Err(Error::Graph("forward on unknown node".into()));
        }
        Ok(self.value(root))
    }

    // ---- backward ----

    /// Reverse accumulation from a scalar root. Returns per-node gradients;
    /// use [`Gradients::param_grads`] or [`Graph::accumulate_param_grads`]
    /// to read parameter gradients out.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_val = self.value(root);
        if root_val.len() != 1 {
            return Err(Error::Graph(format!(
                "backward root must be scalar, got shape {:?}",
                root_val.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::new(root_val.shape().to_vec(), vec![1.0])?);

        for idx in (0..=root.0).rev() {
            let go = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.backpropagate(idx, &go, &mut grads)?;
            grads[idx] = Some(go);
        }
        Ok(Gradients { grads })
    }

    /// Runs backward and adds every parameter leaf's gradient (scaled by
    /// `scale`) into the store's gradient slots.
    pub fn accumulate_param_grads(
        &self,
        root: NodeId,
        store: &mut ParameterStore,
        scale: f64,
    ) -> Result<()> {
        let grads = self.backward(root)?;
        for (name, &leaf) in &self.param_leaves {
            if let Some(g) = grads.get(leaf) {
                store.add_grad(name, g, scale)?;
            }
        }
        Ok(())
    }

    pub fn param_leaf(&self, name: &str) -> Option<NodeId> {
        self.param_leaves.get(name).copied()
    }

    fn backpropagate(&self, idx: usize, go: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let send = |target: NodeId, contribution: Tensor, grads: &mut [Option<Tensor>]| {
            match &mut grads[target.0] {
                Some(existing) => {
                    for (e, c) in existing.data_mut().iter_mut().zip(contribution.data()) {
                        *e += c;
                    }
                }
                slot @ None => *slot = Some(contribution),
            }
        };
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::Add(a, b) => {
                send(*a, reduce_to_shape(go, self.value(*a).shape())?, grads);
                send(*b, reduce_to_shape(go, self.value(*b).shape())?, grads);
            }
            Op::Mul(a, b) => {
                let ga = broadcast_binary(go, self.value(*b), |g, y| g * y)?;
                let gb = broadcast_binary(go, self.value(*a), |g, x| g * x)?;
                send(*a, reduce_to_shape(&ga, self.value(*a).shape())?, grads);
                send(*b, reduce_to_shape(&gb, self.value(*b).shape())?, grads);
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                send(*a, matmul_grad_left(go, vb)?, grads);
                send(*b, matmul_grad_right(va, go)?, grads);
            }
            Op::SumAxis(a, axis) => {
                let va = self.value(*a);
                send(*a, broadcast_along_axis(go, va.shape(), *axis), grads);
            }
            Op::Softmax(a) => {
                // d/dx softmax: s * (go - sum(go * s)) per row
                let s = &node.value;
                let g = rowwise_paired(s, go, |srow, grow, out| {
                    let dot: f64 = srow.iter().zip(grow).map(|(si, gi)| si * gi).sum();
                    for ((o, &si), &gi) in out.iter_mut().zip(srow).zip(grow) {
                        *o = si * (gi - dot);
                    }
                })?;
                send(*a, g, grads);
            }
            Op::LogSoftmax(a) => {
                // d/dx log_softmax: go - softmax(x) * sum(go) per row
                let ls = &node.value;
                let g = rowwise_paired(ls, go, |lsrow, grow, out| {
                    let total: f64 = grow.iter().sum();
                    for ((o, &li), &gi) in out.iter_mut().zip(lsrow).zip(grow) {
                        *o = gi - li.exp() * total;
                    }
                })?;
                send(*a, g, grads);
            }
            Op::Exp(a) => {
                let mut g = go.clone();
                for (gi, vi) in g.data_mut().iter_mut().zip(node.value.data()) {
                    *gi *= vi;
                }
                send(*a, g, grads);
            }
            Op::Log(a) => {
                let va = self.value(*a);
                let mut g = go.clone();
                for (gi, xi) in g.data_mut().iter_mut().zip(va.data()) {
                    *gi /= xi;
                }
                send(*a, g, grads);
            }
            Op::Tanh(a) => {
                let mut g = go.clone();
                for (gi, yi) in g.data_mut().iter_mut().zip(node.value.data()) {
                    *gi *= 1.0 - yi * yi;
                }
                send(*a, g, grads);
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                let mut g = go.clone();
                for (gi, xi) in g.data_mut().iter_mut().zip(va.data()) {
                    if *xi <= 0.0 {
                        *gi = 0.0;
                    }
                }
                send(*a, g, grads);
            }
            Op::Concat(parts, axis) => {
                let shapes: Vec<&[usize]> =
                    parts.iter().map(|&p| self.value(p).shape()).collect();
                let pieces = concat_backward(go, &shapes, *axis)?;
                for (&p, piece) in parts.iter().zip(pieces) {
                    send(p, piece, grads);
                }
            }
            Op::Lookup(table, indices) => {
                let vt = self.value(*table);
                let cols = vt.shape()[1];
                let mut g = Tensor::zeros(vt.shape());
                for (i, &ix) in indices.iter().enumerate() {
                    let src = &go.data()[i * cols..(i + 1) * cols];
                    let dst = &mut g.data_mut()[ix * cols..(ix + 1) * cols];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
                send(*table, g, grads);
            }
            Op::LogSumExp(a, axis) => {
                // d/dx logsumexp = softmax along the reduced axis
                let va = self.value(*a);
                let g = logsumexp_backward(va, &node.value, go, *axis);
                send(*a, g, grads);
            }
            Op::Transpose2(a) => {
                let (r, c) = (go.shape()[0], go.shape()[1]);
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        data[j * r + i] = go.data()[i * c + j];
                    }
                }
                send(*a, Tensor::new(vec![c, r], data)?, grads);
            }
            Op::Reshape(a) => {
                let g = go.reshaped(self.value(*a).shape().to_vec())?;
                send(*a, g, grads);
            }
            Op::Dropout(a, mask) => {
                let mut g = go.clone();
                for (gi, mi) in g.data_mut().iter_mut().zip(mask.data()) {
                    *gi *= mi;
                }
                send(*a, g, grads);
            }
        }
        Ok(())
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Constant => "constant",
        Op::Param => "param",
        Op::Add(..) => "add",
        Op::Mul(..) => "mul",
        Op::MatMul(..) => "matmul",
        Op::SumAxis(..) => "sum_axis",
        Op::Softmax(..) => "softmax",
        Op::LogSoftmax(..) => "log_softmax",
        Op::Exp(..) => "exp",
        Op::Log(..) => "log",
        Op::Concat(..) => "concat",
        Op::Lookup(..) => "lookup",
        Op::LogSumExp(..) => "logsumexp",
        Op::Tanh(..) => "tanh",
        Op::Relu(..) => "relu",
        Op::Transpose2(..) => "transpose",
        Op::Reshape(..) => "reshape",
        Op::Dropout(..) => "dropout",
    }
}

// ---- shape plumbing ----

fn broadcast_out_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return Err(Error::Shape(format!(
                "cannot broadcast {:?} with {:?}",
                a, b
            )));
        }
    }
    Ok(out)
}

/// Strides of `shape` embedded in the broadcast space `out`, with stride 0
/// where the input dimension is broadcast.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; out.len()];
    let offset = out.len() - shape.len();
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[offset + i] = acc;
        }
        acc *= shape[i];
    }
    strides
}

fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data: Vec<f64> = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    let out_shape = broadcast_out_shape(a.shape(), b.shape())?;
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let total: usize = out_shape.iter().product();
    let mut data = Vec::with_capacity(total);
    let mut index = vec![0usize; out_shape.len()];
    let mut ia = 0usize;
    let mut ib = 0usize;
    for _ in 0..total {
        data.push(f(a.data()[ia], b.data()[ib]));
        for d in (0..out_shape.len()).rev() {
            index[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if index[d] < out_shape[d] {
                break;
            }
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
            index[d] = 0;
        }
    }
    Tensor::new(out_shape, data)
}

/// Sums `grad` down to `target` by collapsing broadcast axes.
fn reduce_to_shape(grad: &Tensor, target: &[usize]) -> Result<Tensor> {
    if grad.shape() == target {
        return Ok(grad.clone());
    }
    let strides = broadcast_strides(target, grad.shape());
    let target_len: usize = target.iter().product();
    let mut out = vec![0.0; target_len];
    let mut index = vec![0usize; grad.shape().len()];
    let mut it = 0usize;
    for g in grad.data() {
        out[it] += g;
        for d in (0..grad.shape().len()).rev() {
            index[d] += 1;
            it += strides[d];
            if index[d] < grad.shape()[d] {
                break;
            }
            it -= strides[d] * grad.shape()[d];
            index[d] = 0;
        }
    }
    Tensor::new(target.to_vec(), out)
}

fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "matmul expects 2-D inputs, got {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dims differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for l in 0..k {
            let ail = a.data()[i * k + l];
            if ail == 0.0 {
                continue;
            }
            let brow = &b.data()[l * n..(l + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += ail * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// grad_a = go . b^T
fn matmul_grad_left(go: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, n) = (go.shape()[0], go.shape()[1]);
    let k = b.shape()[0];
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        for l in 0..k {
            let brow = &b.data()[l * n..(l + 1) * n];
            let grow = &go.data()[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (&g, &bv) in grow.iter().zip(brow) {
                acc += g * bv;
            }
            out[i * k + l] = acc;
        }
    }
    Tensor::new(vec![m, k], out)
}

/// grad_b = a^T . go
fn matmul_grad_right(a: &Tensor, go: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = go.shape()[1];
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        for l in 0..k {
            let ail = a.data()[i * k + l];
            if ail == 0.0 {
                continue;
            }
            let grow = &go.data()[i * n..(i + 1) * n];
            let orow = &mut out[l * n..(l + 1) * n];
            for (o, &g) in orow.iter_mut().zip(grow) {
                *o += ail * g;
            }
        }
    }
    Tensor::new(vec![k, n], out)
}

fn sum_axis_forward(a: &Tensor, axis: usize) -> Tensor {
    reduce_axis(a, axis, |lane| lane.iter().sum())
}

/// Applies `f` over every lane along `axis`; output drops that axis.
fn reduce_axis(a: &Tensor, axis: usize, f: impl Fn(&[f64]) -> f64) -> Tensor {
    let shape = a.shape();
    let axis_len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out_shape: Vec<usize> = shape[..axis].to_vec();
    out_shape.extend_from_slice(&shape[axis + 1..]);
    let mut out = Vec::with_capacity(outer * inner);
    let mut lane = vec![0.0; axis_len];
    for o in 0..outer {
        for i in 0..inner {
            for (x, l) in lane.iter_mut().enumerate() {
                *l = a.data()[(o * axis_len + x) * inner + i];
            }
            out.push(f(&lane));
        }
    }
    Tensor::new(out_shape, out).expect("reduce shape is consistent")
}

/// Spreads `grad` (shape without `axis`) back across `axis` of `shape`.
fn broadcast_along_axis(grad: &Tensor, shape: &[usize], axis: usize) -> Tensor {
    let axis_len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * axis_len * inner];
    for o in 0..outer {
        for x in 0..axis_len {
            for i in 0..inner {
                out[(o * axis_len + x) * inner + i] = grad.data()[o * inner + i];
            }
        }
    }
    Tensor::new(shape.to_vec(), out).expect("broadcast shape is consistent")
}

fn logsumexp_backward(input: &Tensor, output: &Tensor, go: &Tensor, axis: usize) -> Tensor {
    let shape = input.shape();
    let axis_len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; input.len()];
    for o in 0..outer {
        for i in 0..inner {
            let lse = output.data()[o * inner + i];
            let g = go.data()[o * inner + i];
            for x in 0..axis_len {
                let idx = (o * axis_len + x) * inner + i;
                out[idx] = g * (input.data()[idx] - lse).exp();
            }
        }
    }
    Tensor::new(shape.to_vec(), out).expect("shape preserved")
}

fn map_unary(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data: Vec<f64> = a.data().iter().map(|&x| f(x)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

/// Applies `f` to each trailing-axis row independently.
fn rowwise(a: &Tensor, f: impl Fn(&[f64], &mut [f64])) -> Result<Tensor> {
    if a.shape().is_empty() {
        return Err(Error::Shape("rowwise op needs at least 1-D input".into()));
    }
    let cols = *a.shape().last().unwrap();
    if cols == 0 {
        return Err(Error::Shape("rowwise op on zero-width rows".into()));
    }
    let mut data = vec![0.0; a.len()];
    for (src, dst) in a.data().chunks(cols).zip(data.chunks_mut(cols)) {
        f(src, dst);
    }
    Tensor::new(a.shape().to_vec(), data)
}

fn rowwise_paired(a: &Tensor, b: &Tensor, f: impl Fn(&[f64], &[f64], &mut [f64])) -> Result<Tensor> {
    let cols = *a.shape().last().unwrap();
    let mut data = vec![0.0; a.len()];
    for ((ra, rb), dst) in a
        .data()
        .chunks(cols)
        .zip(b.data().chunks(cols))
        .zip(data.chunks_mut(cols))
    {
        f(ra, rb, dst);
    }
    Tensor::new(a.shape().to_vec(), data)
}

fn concat_forward(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts[0].shape();
    if axis >= first.len() {
        return Err(Error::Shape(format!(
            "concat axis {} out of range for shape {:?}",
            axis, first
        )));
    }
    let mut axis_total = 0;
    for p in parts {
        let s = p.shape();
        if s.len() != first.len()
            || s.iter()
                .enumerate()
                .any(|(i, &d)| i != axis && d != first[i])
        {
            return Err(Error::Shape(format!(
                "concat shape mismatch: {:?} vs {:?}",
                s, first
            )));
        }
        axis_total += s[axis];
    }
    let mut out_shape = first.to_vec();
    out_shape[axis] = axis_total;
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let alen = p.shape()[axis];
            let start = o * alen * inner;
            data.extend_from_slice(&p.data()[start..start + alen * inner]);
        }
    }
    Tensor::new(out_shape, data)
}

fn concat_backward(go: &Tensor, shapes: &[&[usize]], axis: usize) -> Result<Vec<Tensor>> {
    let outer: usize = shapes[0][..axis].iter().product();
    let inner: usize = shapes[0][axis + 1..].iter().product();
    let mut pieces: Vec<Vec<f64>> = shapes
        .iter()
        .map(|s| Vec::with_capacity(s.iter().product()))
        .collect();
    let mut cursor = 0usize;
    for _ in 0..outer {
        for (pi, s) in shapes.iter().enumerate() {
            let take = s[axis] * inner;
            pieces[pi].extend_from_slice(&go.data()[cursor..cursor + take]);
            cursor += take;
        }
    }
    shapes
        .iter()
        .zip(pieces)
        .map(|(s, d)| Tensor::new(s.to_vec(), d))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_graph() -> Graph {
        Graph::new(RunMode::Eval)
    }

    #[test]
    fn elementwise_product_matches_definition() {
        let mut g = eval_graph();
        let a = g.vector(vec![2.0, 3.0]).unwrap();
        let b = g.vector(vec![4.0, 5.0]).unwrap();
        let c = g.mul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[8.0, 15.0]);
    }

    #[test]
    fn softmax_of_zeros_is_half_half() {
        let mut g = eval_graph();
        let a = g.vector(vec![0.0, 0.0]).unwrap();
        let s = g.softmax(a).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn sum_reduce_vector() {
        let mut g = eval_graph();
        let a = g.vector(vec![1.0, 2.0, 3.0]).unwrap();
        let s = g.sum_axis(a, 0).unwrap();
        assert_eq!(g.value(s).scalar_value().unwrap(), 6.0);
    }

    #[test]
    fn square_gradient_at_three_is_six() {
        let mut g = eval_graph();
        let x = g.vector(vec![3.0]).unwrap();
        let y = g.mul(x, x).unwrap();
        let y = g.sum_all(y).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn softmax_pick_gradient_matches_jacobian() {
        // f(x) = softmax(x)[0] at x=[0,0]: grad = [0.25, -0.25]
        let mut g = eval_graph();
        let x = g.vector(vec![0.0, 0.0]).unwrap();
        let s = g.softmax(x).unwrap();
        let pick = g.vector(vec![1.0, 0.0]).unwrap();
        let picked = g.mul(s, pick).unwrap();
        let y = g.sum_all(picked).unwrap();
        let grads = g.backward(y).unwrap();
        let gx = grads.get(x).unwrap();
        assert!((gx.data()[0] - 0.25).abs() < 1e-12);
        assert!((gx.data()[1] + 0.25).abs() < 1e-12);
    }

    #[test]
    fn broadcast_add_bias_over_rows() {
        let mut g = eval_graph();
        let m = g
            .constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let b = g.vector(vec![10.0, 20.0]).unwrap();
        let s = g.add(m, b).unwrap();
        assert_eq!(g.value(s).data(), &[11.0, 22.0, 13.0, 24.0]);
        let total = g.sum_all(s).unwrap();
        let grads = g.backward(total).unwrap();
        // bias grad collapses the broadcast axis
        assert_eq!(grads.get(b).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn middle_axis_broadcast_via_reshape() {
        let mut g = eval_graph();
        let a = g
            .constant(Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let b = g
            .constant(Tensor::matrix(3, 2, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap())
            .unwrap();
        let c = g.mul(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 3, 2]);
        assert_eq!(g.value(c).get(&[1, 2, 1]), 4.0 * 3.0);
    }

    #[test]
    fn matmul_and_gradients() {
        let mut g = eval_graph();
        let a = g
            .constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap())
            .unwrap();
        let b = g
            .constant(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap())
            .unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[13.0, 16.0]);
        let total = g.sum_all(c).unwrap();
        let grads = g.backward(total).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[7.0, 11.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn lookup_scatters_gradients_back() {
        let mut g = eval_graph();
        let table = g
            .constant(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap())
            .unwrap();
        let rows = g.lookup(table, &[2, 0, 2]).unwrap();
        assert_eq!(g.value(rows).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let total = g.sum_all(rows).unwrap();
        let grads = g.backward(total).unwrap();
        assert_eq!(
            grads.get(table).unwrap().data(),
            &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]
        );
    }

    #[test]
    fn logsumexp_axis_is_shift_invariant() {
        let mut g = eval_graph();
        let a = g.vector(vec![1.0, 2.0, 3.0]).unwrap();
        let l1 = g.logsumexp(a, 0).unwrap();
        let c = g.vector(vec![7.5, 7.5, 7.5]).unwrap();
        let shifted = g.add(a, c).unwrap();
        let l2 = g.logsumexp(shifted, 0).unwrap();
        let v1 = g.value(l1).scalar_value().unwrap();
        let v2 = g.value(l2).scalar_value().unwrap();
        assert!((v2 - v1 - 7.5).abs() < 1e-12);
    }

    #[test]
    fn non_finite_intermediate_is_an_error() {
        let mut g = eval_graph();
        let a = g.vector(vec![1000.0]).unwrap();
        let e = g.exp(a);
        assert!(matches!(e, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = eval_graph();
        let a = g.vector(vec![1.0, 2.0]).unwrap();
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn dropout_is_identity_in_eval_mode() {
        let mut g = eval_graph();
        let a = g.vector(vec![1.0, 2.0]).unwrap();
        let d = g.dropout(a).unwrap();
        assert_eq!(d, a);
    }

    #[test]
    fn dropout_masks_are_seed_deterministic() {
        let run = |seed| {
            let mut g = Graph::with_seed(RunMode::Train { dropout: 0.4 }, seed);
            let a = g.vector(vec![1.0; 32]).unwrap();
            let d = g.dropout(a).unwrap();
            g.value(d).data().to_vec()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn concat_splits_gradient() {
        let mut g = eval_graph();
        let a = g.vector(vec![1.0, 2.0]).unwrap();
        let b = g.vector(vec![3.0]).unwrap();
        let c = g.concat(&[a, b], 0).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0]);
        let w = g.vector(vec![1.0, 10.0, 100.0]).unwrap();
        let p = g.mul(c, w).unwrap();
        let t = g.sum_all(p).unwrap();
        let grads = g.backward(t).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 10.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[100.0]);
    }
}
