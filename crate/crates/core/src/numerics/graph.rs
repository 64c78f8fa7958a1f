//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every operation is evaluated as soon as it is recorded, so the graph
//! always holds the forward values needed by its backward rules. Nodes are
//! appended in evaluation order, which is therefore a valid topological order.

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>, Axis),
    Slice { input: Var, axis: Axis, start: usize },
    Reshape(Var),
    Embedding { table: Var, ids: Vec<usize> },
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Tensor },
    SquaredError(Var, Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Parameter leaves of one [`ParamStore`] bound into a graph.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.index()]
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::with_capacity(1024) }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Adds one leaf per parameter of `store`.
    pub fn bind(&mut self, store: &ParamStore, trainable: bool) -> Bound {
        let vars = store
            .values()
            .iter()
            .map(|t| self.leaf(t.clone(), trainable))
            .collect();
        Bound { vars }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(Error::Shape(format!(
                "matmul {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        matmul_into(ta.data(), tb.data(), m, k, n, &mut out);
        let value = Tensor::new(m, n, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(Error::Shape(format!(
                "matmul_nt {:?} x {:?}ᵀ",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        let mut out = vec![0.0; m * n];
        matmul_nt_into(ta.data(), tb.data(), m, k, n, &mut out);
        let value = Tensor::new(m, n, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMulNt(a, b), rg))
    }

    fn broadcast_check(&self, name: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let ok = sa == sb || (sb[0] == 1 && sb[1] == sa[1]) || sb == [1, 1];
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("{name} {sa:?} with {sb:?}")))
        }
    }

    /// Elementwise sum; `b` may be a `[1, n]` row or a `[1, 1]` scalar broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("add", a, b)?;
        let value = broadcast_apply(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Elementwise product with the same broadcasting rule as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("mul", a, b)?;
        let value = broadcast_apply(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let c = self.constant(Tensor::scalar(factor));
        self.mul(a, c)
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let s0 = self.value(first).shape();
        let value = match axis {
            Axis::Rows => {
                let refs: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
                Tensor::vstack(&refs)?
            }
            Axis::Cols => {
                let mut cols = 0;
                for &p in parts {
                    let s = self.value(p).shape();
                    if s[0] != s0[0] {
                        return Err(Error::Shape(format!("concat cols {s0:?} with {s:?}")));
                    }
                    cols += s[1];
                }
                let rows = s0[0];
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(r));
                    }
                }
                Tensor::new(rows, cols, data)?
            }
        };
        let rg = self.rg(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&mut self, input: Var, axis: Axis, start: usize, end: usize) -> Result<Var> {
        let t = self.value(input);
        let extent = match axis {
            Axis::Rows => t.rows(),
            Axis::Cols => t.cols(),
        };
        if start >= end || end > extent {
            return Err(Error::Shape(format!(
                "slice [{start}, {end}) of {:?} along {axis:?}",
                t.shape()
            )));
        }
        let value = match axis {
            Axis::Rows => t.slice_rows(start, end),
            Axis::Cols => {
                let w = end - start;
                let mut data = Vec::with_capacity(t.rows() * w);
                for r in 0..t.rows() {
                    data.extend_from_slice(&t.row_slice(r)[start..end]);
                }
                Tensor::new(t.rows(), w, data)?
            }
        };
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Slice { input, axis, start }, rg))
    }

    /// Reinterprets the row-major buffer with a new shape. Reshaping
    /// `[2m, d]` to `[m, 2d]` concatenates consecutive row pairs.
    pub fn reshape(&mut self, input: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(input);
        if rows * cols != t.len() {
            return Err(Error::Shape(format!(
                "reshape {:?} to [{rows}, {cols}]",
                t.shape()
            )));
        }
        let value = Tensor::new(rows, cols, t.data().to_vec())?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Reshape(input), rg))
    }

    /// Gathers rows of `table` for each id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if ids.is_empty() {
            return Err(Error::Shape("embedding lookup with no ids".into()));
        }
        if let Some((pos, &bad)) = ids.iter().enumerate().find(|(_, &i)| i >= t.rows()) {
            return Err(Error::Shape(format!(
                "embedding id {bad} at position {pos} exceeds table {:?}",
                t.shape()
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &i in ids {
            data.extend_from_slice(t.row_slice(i));
        }
        let value = Tensor::new(ids.len(), t.cols(), data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(&[a]);
        self.push(value, Op::LeakyRelu(a, slope), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = row_softmax(self.value(a));
        let rg = self.rg(&[a]);
        self.push(value, Op::Softmax(a), rg)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(t.cols()) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let value = Tensor::new(t.rows(), t.cols(), data).expect("shape preserved");
        let rg = self.rg(&[a]);
        self.push(value, Op::LogSoftmax(a), rg)
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if targets.len() != t.rows() {
            return Err(Error::Shape(format!(
                "cross_entropy logits {:?} with {} targets",
                t.shape(),
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&c| c >= t.cols()) {
            return Err(Error::Shape(format!(
                "cross_entropy target class {bad} outside {} classes",
                t.cols()
            )));
        }
        let probs = row_softmax(t);
        let mut nll = 0.0;
        for (r, &c) in targets.iter().enumerate() {
            let row = t.row_slice(r);
            nll += log_sum_exp(row) - row[c];
        }
        let value = Tensor::scalar(nll / targets.len() as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Sum of squared differences divided by the row count: the mean over
    /// frames of the squared Euclidean distance between paired rows.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "squared_error {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let sse: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let value = Tensor::scalar(sse / ta.rows() as f64);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::SquaredError(a, b), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    /// Reverse pass from `output` seeded with `seed`.
    pub fn backward(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        let Some(out_node) = self.nodes.get(output.0) else {
            return Err(Error::State(format!(
                "backward requested for node {} but the graph has only {} forward records",
                output.0,
                self.nodes.len()
            )));
        };
        if out_node.value.shape() != seed.shape() {
            return Err(Error::Shape(format!(
                "seed {:?} does not match output {:?}",
                seed.shape(),
                out_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(output.0 + 1);
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(seed.clone());

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Convenience for scalar losses.
    pub fn backward_scalar(&self, loss: Var) -> Result<Gradients> {
        self.backward(loss, &Tensor::scalar(1.0))
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if wants(*a) {
                    let ga = slot(grads, *a, ta);
                    matmul_nt_into(g.data(), tb.data(), m, n, k, ga.data_mut());
                }
                if wants(*b) {
                    let gb = slot(grads, *b, tb);
                    matmul_tn_into(ta.data(), g.data(), m, k, n, gb.data_mut());
                }
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                if wants(*a) {
                    let ga = slot(grads, *a, ta);
                    let mut tmp = vec![0.0; m * k];
                    matmul_into(g.data(), tb.data(), m, n, k, &mut tmp);
                    ga.data_mut().iter_mut().zip(tmp).for_each(|(x, y)| *x += y);
                }
                if wants(*b) {
                    let gb = slot(grads, *b, tb);
                    matmul_tn_into(g.data(), ta.data(), m, n, k, gb.data_mut());
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    slot(grads, *a, val(*a)).add_assign(g);
                }
                if wants(*b) {
                    let tb = val(*b);
                    reduce_into(slot(grads, *b, tb), g.data(), g.cols());
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if wants(*a) {
                    let ga = broadcast_apply(g, tb, |x, y| x * y);
                    slot(grads, *a, ta).add_assign(&ga);
                }
                if wants(*b) {
                    let prod: Vec<f64> = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    reduce_into(slot(grads, *b, tb), &prod, g.cols());
                }
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let tp = val(p);
                    match axis {
                        Axis::Rows => {
                            if wants(p) {
                                let n = tp.len();
                                let src = &g.data()[offset..offset + n];
                                add_slice(slot(grads, p, tp).data_mut(), src);
                            }
                            offset += tp.len();
                        }
                        Axis::Cols => {
                            if wants(p) {
                                let w = tp.cols();
                                let gp = slot(grads, p, tp);
                                for r in 0..tp.rows() {
                                    let src = &g.row_slice(r)[offset..offset + w];
                                    add_slice(&mut gp.data_mut()[r * w..(r + 1) * w], src);
                                }
                            }
                            offset += tp.cols();
                        }
                    }
                }
            }
            Op::Slice { input, axis, start } => {
                let ti = val(*input);
                let gi = slot(grads, *input, ti);
                match axis {
                    Axis::Rows => {
                        let from = start * ti.cols();
                        add_slice(&mut gi.data_mut()[from..from + g.len()], g.data());
                    }
                    Axis::Cols => {
                        let cols = ti.cols();
                        for r in 0..g.rows() {
                            let dst = &mut gi.data_mut()[r * cols + start..r * cols + start + g.cols()];
                            add_slice(dst, g.row_slice(r));
                        }
                    }
                }
            }
            Op::Reshape(input) => {
                add_slice(slot(grads, *input, val(*input)).data_mut(), g.data());
            }
            Op::Embedding { table, ids } => {
                let tt = val(*table);
                let d = tt.cols();
                let gt = slot(grads, *table, tt);
                for (r, &id) in ids.iter().enumerate() {
                    add_slice(&mut gt.data_mut()[id * d..(id + 1) * d], g.row_slice(r));
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let gi = slot(grads, *a, val(*a));
                for ((o, &gv), &yv) in gi.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o += gv * yv * (1.0 - yv);
                }
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let gi = slot(grads, *a, val(*a));
                for ((o, &gv), &yv) in gi.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o += gv * (1.0 - yv * yv);
                }
            }
            Op::LeakyRelu(a, slope) => {
                let x = val(*a);
                let gi = slot(grads, *a, x);
                for ((o, &gv), &xv) in gi.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                    *o += if xv > 0.0 { gv } else { slope * gv };
                }
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let cols = y.cols();
                let gi = slot(grads, *a, val(*a));
                for r in 0..y.rows() {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    let dst = &mut gi.data_mut()[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        dst[c] += yr[c] * (gr[c] - dot);
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let y = &node.value;
                let cols = y.cols();
                let gi = slot(grads, *a, val(*a));
                for r in 0..y.rows() {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let total: f64 = gr.iter().sum();
                    let dst = &mut gi.data_mut()[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        dst[c] += gr[c] - yr[c].exp() * total;
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let scale = g.item() / targets.len() as f64;
                let cols = probs.cols();
                let gi = slot(grads, *logits, val(*logits));
                for (r, &t) in targets.iter().enumerate() {
                    let pr = probs.row_slice(r);
                    let dst = &mut gi.data_mut()[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        let onehot = if c == t { 1.0 } else { 0.0 };
                        dst[c] += scale * (pr[c] - onehot);
                    }
                }
            }
            Op::SquaredError(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let scale = 2.0 * g.item() / ta.rows() as f64;
                if wants(*a) {
                    let ga = slot(grads, *a, ta);
                    for ((o, x), y) in ga.data_mut().iter_mut().zip(ta.data()).zip(tb.data()) {
                        *o += scale * (x - y);
                    }
                }
                if wants(*b) {
                    let gb = slot(grads, *b, tb);
                    for ((o, x), y) in gb.data_mut().iter_mut().zip(ta.data()).zip(tb.data()) {
                        *o -= scale * (x - y);
                    }
                }
            }
            Op::Sum(a) => {
                let gv = g.item();
                let gi = slot(grads, *a, val(*a));
                gi.data_mut().iter_mut().for_each(|o| *o += gv);
            }
        }
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// One gradient per parameter of `store`, zero-filled where the
    /// parameter did not influence the output.
    pub fn for_params(&self, store: &ParamStore, bound: &Bound) -> Vec<Tensor> {
        store
            .values()
            .iter()
            .zip(&bound.vars)
            .map(|(p, &v)| {
                self.get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()))
            })
            .collect()
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, like: &Tensor) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.rows(), like.cols()))
}

fn add_slice(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Sums a `[m, cols]` buffer down to the shape of `target` (same shape, `[1, cols]` or `[1, 1]`).
fn reduce_into(target: &mut Tensor, src: &[f64], cols: usize) {
    if target.len() == src.len() {
        add_slice(target.data_mut(), src);
    } else if target.len() == 1 {
        target.data_mut()[0] += src.iter().sum::<f64>();
    } else {
        for row in src.chunks(cols) {
            add_slice(target.data_mut(), row);
        }
    }
}

fn broadcast_apply(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let cols = a.cols();
    let data: Vec<f64> = if a.shape() == b.shape() {
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
    } else if b.len() == 1 {
        let y = b.data()[0];
        a.data().iter().map(|&x| f(x, y)).collect()
    } else {
        a.data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data()[i % cols]))
            .collect()
    };
    Tensor::new(a.rows(), cols, data).expect("broadcast keeps lhs shape")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn row_softmax(t: &Tensor) -> Tensor {
    let mut data = t.data().to_vec();
    for row in data.chunks_mut(t.cols()) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Tensor::new(t.rows(), t.cols(), data).expect("shape preserved")
}
