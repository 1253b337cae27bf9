//! Reverse-mode differentiation over a linear record of matrix operations.
//!
//! Every op appends a node holding its forward value. [`Tape::backward`]
//! walks the record once in reverse, accumulating gradients additively at
//! shared inputs, and returns the gradients of the trainable parameters
//! that were loaded onto the tape.

use std::collections::{HashMap, HashSet};

use super::params::{Gradients, ParamId, ParamStore};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Relu(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Transpose(Var),
    Embedding { table: Var, ids: Vec<u32> },
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<S>, rstd: Vec<S> },
    CrossEntropy { logits: Var, targets: Vec<u32>, probs: Vec<S> },
    MeanRows(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    param: Option<ParamId>,
    needs_grad: bool,
}

/// A single-threaded operation record.
#[derive(Debug)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    loaded: HashMap<ParamId, Var>,
    frozen: HashSet<ParamId>,
    n_params: usize,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_str(s: [usize; 2]) -> String {
    format!("[{}, {}]", s[0], s[1])
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            loaded: HashMap::new(),
            frozen: HashSet::new(),
            n_params: 0,
        }
    }

    /// Parameters loaded after this call are treated as constants.
    pub fn freeze(&mut self, ids: impl IntoIterator<Item = ParamId>) {
        self.frozen.extend(ids);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Position to [`rewind`](Self::rewind) back to.
    pub fn mark(&self) -> usize {
        self.nodes.len()
    }

    /// Drop every node recorded after `mark`.
    pub fn rewind(&mut self, mark: usize) {
        self.nodes.truncate(mark);
        self.loaded.retain(|_, v| v.0 < mark);
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Load a parameter (once per tape). Frozen parameters become constants.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        if let Some(&v) = self.loaded.get(&id) {
            return v;
        }
        let trainable = !self.frozen.contains(&id);
        let v = self.push(store.get(id).clone(), Op::Leaf, trainable);
        if trainable {
            self.nodes[v.0].param = Some(id);
            self.n_params = self.n_params.max(id.0 + 1);
        }
        self.loaded.insert(id, v);
        v
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) * op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let [ar, ac] = self.shape(a);
        let [br, bc] = self.shape(b);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{} x {} (transposes {ta}, {tb})", shape_str([ar, ac]), shape_str([br, bc])),
            ));
        }
        let mut out = Tensor::zeros(m, n);
        S::gemm(m, k, n, self.value(a).data(), ta, self.value(b).data(), tb, S::zero(), out.data_mut());
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }, ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{} vs {}", shape_str(self.shape(a)), shape_str(self.shape(b))),
            ));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.rows(), x.cols(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(S) -> S) -> Tensor<S> {
        let x = self.value(a);
        Tensor::new(x.rows(), x.cols(), x.data().iter().map(|&p| f(p)).collect()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip(a, b, |p, q| p + q);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    /// Add a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let [r, c] = self.shape(a);
        if self.shape(row) != [1, c] {
            return Err(Error::shape(
                "add_row",
                format!("{} + {}", shape_str([r, c]), shape_str(self.shape(row))),
            ));
        }
        let b = self.value(row).data().to_vec();
        let mut out = self.value(a).clone();
        for rr in 0..r {
            for (x, &y) in out.data_mut()[rr * c..(rr + 1) * c].iter_mut().zip(&b) {
                *x = *x + y;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip(a, b, |p, q| p * q);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = S::of(s);
        let out = self.map(a, |p| p * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |p| if p > S::zero() { p } else { S::zero() });
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, |p| p.tanh());
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    /// Row-wise softmax. `-inf` entries receive zero probability.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = x.cols();
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(c) {
            let max = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
            let mut sum = S::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum = sum + *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::Softmax(a), ng)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = x.cols();
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(c) {
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v = *v - lse;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::LogSoftmax(a), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Tensor::from_fn(x.cols(), x.rows(), |r, c| x.get(c, r));
        let ng = self.ng(a);
        self.push(out, Op::Transpose(a), ng)
    }

    /// Gather rows of `table` by id.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = (t.rows(), t.cols());
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= v) {
            return Err(Error::shape("embedding", format!("id {bad} outside table of {v} rows")));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(t.row(i as usize));
        }
        let out = Tensor::new(ids.len(), d, data)?;
        let ng = self.ng(table);
        Ok(self.push(out, Op::Embedding { table, ids: ids.to_vec() }, ng))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [r, c] = self.shape(x);
        if start + len > r {
            return Err(Error::shape("slice_rows", format!("rows {start}..{} of {}", start + len, shape_str([r, c]))));
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let out = Tensor::new(len, c, data)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::SliceRows { x, start }, ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [r, c] = self.shape(x);
        if start + len > c {
            return Err(Error::shape("slice_cols", format!("cols {start}..{} of {}", start + len, shape_str([r, c]))));
        }
        let src = self.value(x);
        let out = Tensor::from_fn(r, len, |i, j| src.get(i, start + j));
        let ng = self.ng(x);
        Ok(self.push(out, Op::SliceCols { x, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.shape(p)[0]).unwrap_or(0);
        if parts.iter().any(|&p| self.shape(p)[0] != rows) {
            let shapes: Vec<String> = parts.iter().map(|&p| shape_str(self.shape(p))).collect();
            return Err(Error::shape("concat_cols", shapes.join(", ")));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map(|&p| self.shape(p)[1]).unwrap_or(0);
        if parts.iter().any(|&p| self.shape(p)[1] != cols) {
            let shapes: Vec<String> = parts.iter().map(|&p| shape_str(self.shape(p))).collect();
            return Err(Error::shape("concat_rows", shapes.join(", ")));
        }
        let rows: usize = parts.iter().map(|&p| self.shape(p)[0]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(rows, cols, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Per-row normalization to zero mean / unit variance, then `* gain + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let [r, c] = self.shape(x);
        if self.shape(gain) != [1, c] || self.shape(bias) != [1, c] {
            return Err(Error::shape(
                "layer_norm",
                format!("input {} with gain {} and bias {}", shape_str([r, c]), shape_str(self.shape(gain)), shape_str(self.shape(bias))),
            ));
        }
        let eps = S::of(1e-5);
        let n = S::of(c as f64);
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = Vec::with_capacity(r * c);
        let mut rstd = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in self.value(x).data().chunks(c) {
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let rs = S::one() / (var + eps).sqrt();
            rstd.push(rs);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * rs;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let out = Tensor::new(r, c, out)?;
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, rstd }, ng))
    }

    /// Mean over rows of `-log softmax(logits[row])[targets[row]]`, as `1 x 1`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32]) -> Result<Var> {
        let [r, c] = self.shape(logits);
        if targets.len() != r || r == 0 {
            return Err(Error::shape("cross_entropy", format!("logits {} with {} targets", shape_str([r, c]), targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t as usize >= c) {
            return Err(Error::shape("cross_entropy", format!("target {bad} outside {c} classes")));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = S::zero();
        for (row, &t) in probs.chunks_mut(c).zip(targets) {
            let lse = log_sum_exp(row);
            loss = loss + lse - row[t as usize];
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let out = Tensor::scalar(loss / S::of(r as f64));
        let ng = self.ng(logits);
        Ok(self.push(out, Op::CrossEntropy { logits, targets: targets.to_vec(), probs }, ng))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (r, c) = (x.rows(), x.cols());
        let inv = S::one() / S::of(r as f64);
        let out = Tensor::from_fn(1, c, |_, j| (0..r).map(|i| x.get(i, j)).sum::<S>() * inv);
        let ng = self.ng(a);
        self.push(out, Op::MeanRows(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<S>();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Sum of `1 x 1` terms weighted by `weights`.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(v, w) in terms {
            if self.shape(v) != [1, 1] {
                return Err(Error::shape("weighted_sum", format!("term of shape {}", shape_str(self.shape(v)))));
            }
            let s = self.scale(v, w);
            acc = Some(match acc {
                None => s,
                Some(a) => self.add(a, s)?,
            });
        }
        Ok(acc.unwrap_or_else(|| self.constant(Tensor::scalar(S::zero()))))
    }

    /// Scaled dot-product attention `softmax(q k^T / sqrt(d) + mask) v`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: Option<Var>) -> Result<Var> {
        let d = self.shape(q)[1];
        let scores = self.matmul_t(q, false, k, true)?;
        let mut scores = self.scale(scores, 1.0 / (d as f64).sqrt());
        if let Some(m) = mask {
            scores = self.add(scores, m)?;
        }
        let weights = self.softmax(scores);
        self.matmul(weights, v)
    }

    /// Gradients of the `1 x 1` node `loss` with respect to every trainable
    /// parameter loaded onto this tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.shape(loss) != [1, 1] {
            return Err(Error::shape("backward", format!("loss has shape {}", shape_str(self.shape(loss)))));
        }
        let mut out = Gradients::empty(self.n_params);
        let mut grads: Vec<Option<Vec<S>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Some(id) = node.param {
                out.accumulate(id, node.value.rows(), node.value.cols(), &g);
            }
            self.propagate(node, &g, &mut grads);
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let nodes = &self.nodes;
        macro_rules! slot {
            ($v:expr) => {
                grad_slot(nodes, grads, $v)
            };
        }
        let [rows, cols] = node.value.shape();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, n) = (rows, cols);
                let k = if *ta { av.rows() } else { av.cols() };
                if let Some(da) = slot!(*a) {
                    if !ta {
                        S::gemm(m, n, k, g, false, bv.data(), !tb, S::one(), da);
                    } else {
                        S::gemm(k, n, m, bv.data(), *tb, g, true, S::one(), da);
                    }
                }
                if let Some(db) = slot!(*b) {
                    if !tb {
                        S::gemm(k, m, n, av.data(), !ta, g, false, S::one(), db);
                    } else {
                        S::gemm(n, m, k, g, true, av.data(), *ta, S::one(), db);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(d) = slot!(*v) {
                        add_into(d, g);
                    }
                }
            }
            Op::AddRow(a, r) => {
                if let Some(d) = slot!(*a) {
                    add_into(d, g);
                }
                if let Some(d) = slot!(*r) {
                    for row in g.chunks(cols) {
                        add_into(d, row);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if let Some(d) = slot!(*a) {
                    for ((x, &gi), &y) in d.iter_mut().zip(g).zip(bv) {
                        *x = *x + gi * y;
                    }
                }
                if let Some(d) = slot!(*b) {
                    for ((x, &gi), &y) in d.iter_mut().zip(g).zip(av) {
                        *x = *x + gi * y;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(d) = slot!(*a) {
                    for (x, &gi) in d.iter_mut().zip(g) {
                        *x = *x + gi * *s;
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(d) = slot!(*a) {
                    for ((x, &gi), &y) in d.iter_mut().zip(g).zip(node.value.data()) {
                        if y > S::zero() {
                            *x = *x + gi;
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(d) = slot!(*a) {
                    for ((x, &gi), &y) in d.iter_mut().zip(g).zip(node.value.data()) {
                        *x = *x + gi * (S::one() - y * y);
                    }
                }
            }
            Op::Softmax(a) => {
                if let Some(d) = slot!(*a) {
                    for ((dr, gr), yr) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(node.value.data().chunks(cols)) {
                        let dot = gr.iter().zip(yr).map(|(&p, &q)| p * q).sum::<S>();
                        for ((x, &gi), &y) in dr.iter_mut().zip(gr).zip(yr) {
                            *x = *x + y * (gi - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if let Some(d) = slot!(*a) {
                    for ((dr, gr), yr) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(node.value.data().chunks(cols)) {
                        let total = gr.iter().copied().sum::<S>();
                        for ((x, &gi), &y) in dr.iter_mut().zip(gr).zip(yr) {
                            *x = *x + gi - y.exp() * total;
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                if let Some(d) = slot!(*a) {
                    // input is cols x rows
                    for r in 0..rows {
                        for c in 0..cols {
                            d[c * rows + r] = d[c * rows + r] + g[r * cols + c];
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(d) = slot!(*table) {
                    for (r, &id) in ids.iter().enumerate() {
                        let id = id as usize;
                        add_into(&mut d[id * cols..(id + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    }
                }
            }
            Op::SliceRows { x, start } => {
                if let Some(d) = slot!(*x) {
                    add_into(&mut d[start * cols..(start + rows) * cols], g);
                }
            }
            Op::SliceCols { x, start } => {
                let src_cols = nodes[x.0].value.cols();
                if let Some(d) = slot!(*x) {
                    for r in 0..rows {
                        add_into(&mut d[r * src_cols + start..r * src_cols + start + cols], &g[r * cols..(r + 1) * cols]);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pc = nodes[p.0].value.cols();
                    if let Some(d) = slot!(*p) {
                        for r in 0..rows {
                            add_into(&mut d[r * pc..(r + 1) * pc], &g[r * cols + offset..r * cols + offset + pc]);
                        }
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    if let Some(d) = slot!(*p) {
                        add_into(d, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let gv = nodes[gain.0].value.data().to_vec();
                if let Some(d) = slot!(*gain) {
                    for (gr, hr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for ((x, &gi), &h) in d.iter_mut().zip(gr).zip(hr) {
                            *x = *x + gi * h;
                        }
                    }
                }
                if let Some(d) = slot!(*bias) {
                    for gr in g.chunks(cols) {
                        add_into(d, gr);
                    }
                }
                if let Some(d) = slot!(*x) {
                    let n = S::of(cols as f64);
                    for (r, (gr, hr)) in g.chunks(cols).zip(xhat.chunks(cols)).enumerate() {
                        let dh: Vec<S> = gr.iter().zip(&gv).map(|(&a, &b)| a * b).collect();
                        let mean_dh = dh.iter().copied().sum::<S>() / n;
                        let mean_dh_h = dh.iter().zip(hr).map(|(&a, &b)| a * b).sum::<S>() / n;
                        for j in 0..cols {
                            let v = &mut d[r * cols + j];
                            *v = *v + rstd[r] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let c = nodes[logits.0].value.cols();
                let scale = g[0] / S::of(targets.len() as f64);
                if let Some(d) = slot!(*logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t as usize { S::one() } else { S::zero() };
                            d[r * c + j] = d[r * c + j] + scale * (probs[r * c + j] - onehot);
                        }
                    }
                }
            }
            Op::MeanRows(a) => {
                let r_in = nodes[a.0].value.rows();
                let inv = S::one() / S::of(r_in as f64);
                if let Some(d) = slot!(*a) {
                    for row in d.chunks_mut(cols) {
                        for (x, &gi) in row.iter_mut().zip(g) {
                            *x = *x + gi * inv;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(d) = slot!(*a) {
                    for x in d.iter_mut() {
                        *x = *x + g[0];
                    }
                }
            }
        }
    }
}

fn grad_slot<'a, S: Scalar>(nodes: &[Node<S>], grads: &'a mut [Option<Vec<S>>], v: Var) -> Option<&'a mut Vec<S>> {
    let node = &nodes[v.0];
    if !node.needs_grad {
        return None;
    }
    let len = node.value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![S::zero(); len]))
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

pub(crate) fn log_sum_exp<S: Scalar>(row: &[S]) -> S {
    let max = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
    if max == S::neg_infinity() {
        return max;
    }
    max + row.iter().map(|&v| (v - max).exp()).sum::<S>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(usize, usize, Vec<f64>)]) -> (ParamStore<f64>, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = values
            .iter()
            .enumerate()
            .map(|(i, (r, c, v))| s.add(format!("p{i}"), Tensor::new(*r, *c, v.clone()).unwrap()))
            .collect();
        (s, ids)
    }

    #[test]
    fn square_gradient() {
        let (store, ids) = store_with(&[(1, 1, vec![3.0])]);
        let mut t = Tape::new();
        let x = t.param(&store, ids[0]);
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(ids[0]).unwrap().item(), 6.0);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ce_values() {
        let mut t: Tape<f64> = Tape::new();
        let z = t.constant(Tensor::new(2, 3, vec![1.0, -2.0, 0.5, 100.0, 3.0, -7.0]).unwrap());
        let p = t.softmax(z);
        for r in 0..2 {
            assert!((t.value(p).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let u = t.constant(Tensor::zeros(1, 4));
        let ce = t.cross_entropy(u, &[2]).unwrap();
        assert!((t.value(ce).item() - 4f64.ln()).abs() < 1e-12);
        let sure = t.constant(Tensor::new(1, 2, vec![0.0, 1e4]).unwrap());
        let ce = t.cross_entropy(sure, &[1]).unwrap();
        assert!(t.value(ce).item().abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_gradient_is_probs_minus_onehot() {
        let (store, ids) = store_with(&[(1, 3, vec![0.2, -1.0, 0.7])]);
        let mut t = Tape::new();
        let z = t.param(&store, ids[0]);
        let ce = t.cross_entropy(z, &[1]).unwrap();
        let g = t.backward(ce).unwrap();
        let p = t.softmax(z);
        let probs = t.value(p).data().to_vec();
        for (j, (&gj, &pj)) in g.get(ids[0]).unwrap().data().iter().zip(&probs).enumerate() {
            let expected = pj - if j == 1 { 1.0 } else { 0.0 };
            assert!((gj - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_loss_has_no_gradient() {
        let (store, ids) = store_with(&[(1, 1, vec![3.0])]);
        let mut t = Tape::new();
        let _x = t.param(&store, ids[0]);
        let c = t.constant(Tensor::scalar(2.0));
        let g = t.backward(c).unwrap();
        assert!(g.get(ids[0]).is_none());
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut t: Tape<f64> = Tape::new();
        let a = t.constant(Tensor::zeros(2, 3));
        let b = t.constant(Tensor::zeros(2, 3));
        match t.matmul(a, b) {
            Err(Error::Shape { op, detail }) => {
                assert_eq!(op, "matmul");
                assert!(detail.contains("[2, 3]"));
            }
            other => panic!("{other:?}"),
        }
        assert!(t.backward(a).is_err());
    }

    #[test]
    fn attention_weights_are_convex() {
        let mut t: Tape<f64> = Tape::new();
        let q = t.constant(Tensor::from_fn(3, 4, |r, c| (r * 4 + c) as f64 * 0.1));
        let k = t.constant(Tensor::from_fn(5, 4, |r, c| ((r + c) % 3) as f64 - 1.0));
        let v = t.constant(Tensor::from_fn(5, 2, |r, _| r as f64));
        let out = t.attention(q, k, v, None).unwrap();
        for r in 0..3 {
            let x = t.value(out).get(r, 0);
            assert!((0.0..=4.0).contains(&x));
        }
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let (store, ids) = store_with(&[(1, 1, vec![2.0]), (1, 1, vec![5.0])]);
        let mut t = Tape::new();
        t.freeze([ids[1]]);
        let a = t.param(&store, ids[0]);
        let b = t.param(&store, ids[1]);
        let y = t.mul(a, b).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(ids[0]).unwrap().item(), 5.0);
        assert!(g.get(ids[1]).is_none());
    }
}
