//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] records operations in execution order; node ids are indices into
//! the tape, so the graph is acyclic by construction. Parameter nodes borrow
//! their values from a [`ParameterStore`] and their gradients are returned as
//! [`Gradients`] so several graphs can be evaluated against one store.

use std::f64::consts::LN_2;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParameterStore};
use super::tensor::{matmul, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, trans_b: bool },
    Transpose(Var),
    Add(Var, Var),
    AddRow { x: Var, row: Var },
    Scale(Var, f64),
    Concat(Vec<Var>),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Dropout { x: Var, mask: Vec<f64> },
    GatherRows { table: Var, indices: Vec<usize> },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    RowSoftmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, normed: Tensor, inv_std: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, bias: Option<Var>, probs: Tensor, scale: f64 },
    CrossEntropy { logits: Var, probs: Tensor, targets: Tensor, weights: Vec<f64>, total: f64 },
    Bce { p: Var, targets: Tensor, weights: Vec<f64>, total: f64 },
    PairBce { logits: Var, targets: Tensor, weights: Vec<f64>, total: f64 },
}

struct Node {
    value: Value,
    op: Op,
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub(crate) grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn merge(&mut self, other: Gradients) {
        for (mine, theirs) in self.grads.iter_mut().zip(other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.add_assign(&t),
                (None, Some(t)) => *mine = Some(t),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }
}

fn mismatch(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

/// One forward computation recorded for differentiation.
pub struct Graph<'p> {
    params: &'p ParameterStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParameterStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// Looks up a parameter by name.
    pub fn named(&mut self, name: &str) -> Result<Var> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
        Ok(self.param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(mismatch("matmul", format!("{ar}x{ac} * {br}x{bc}")));
        }
        let out = matmul(self.value(a), false, self.value(b), false);
        Ok(self.push(out, Op::MatMul { a, b, trans_b: false }))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != bc {
            return Err(mismatch("matmul_t", format!("{ar}x{ac} * ({br}x{bc})^T")));
        }
        let out = matmul(self.value(a), false, self.value(b), true);
        Ok(self.push(out, Op::MatMul { a, b, trans_b: true }))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(out, Op::Transpose(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("add", format!("{:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `1 x c` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(row) != (1, c) {
            return Err(mismatch("add_row", format!("{r}x{c} + {:?}", self.shape(row))));
        }
        let mut out = self.value(x).clone();
        let bias = self.value(row).data().to_vec();
        for i in 0..r {
            for (o, b) in out.row_mut(i).iter_mut().zip(&bias) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow { x, row }))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| mismatch("concat", "no inputs".into()))?;
        let rows = self.shape(*first).0;
        if parts.iter().any(|p| self.shape(*p).0 != rows) {
            return Err(mismatch("concat", "row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let src = self.value(*p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    /// Inverted dropout: kept entries are divided by the keep probability.
    /// `rate == 0` returns `x` itself.
    pub fn dropout(&mut self, x: Var, rate: f64, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mut out = self.value(x).clone();
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (tr, tc) = self.shape(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= tr) {
            return Err(Error::OutOfRange { index: bad, len: tr });
        }
        let mut out = Tensor::zeros(indices.len(), tc);
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.value(table).row(i));
        }
        Ok(self.push(
            out,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(x).clone().reshaped(rows, cols)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(mismatch("mean", "empty tensor".into()));
        }
        let m = t.sum() / t.len() as f64;
        Ok(self.push(Tensor::scalar(m), Op::Mean(x)))
    }

    /// Softmax along each row. Columns with `mask[c] == false` receive zero
    /// probability.
    pub fn row_softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xs = self.value(x);
        let cols = xs.cols();
        if let Some(m) = mask {
            if m.len() != cols {
                return Err(mismatch("row_softmax", format!("mask of {} for {cols} columns", m.len())));
            }
        }
        let out = softmax_rows(xs, mask)?;
        Ok(self.push(out, Op::RowSoftmax(x)))
    }

    /// Per-row normalization to zero mean and unit variance, then `* gain + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(gain) != (1, c) || self.shape(bias) != (1, c) {
            return Err(mismatch("layer_norm", format!("gain/bias must be 1x{c}")));
        }
        let xs = self.value(x);
        let mut normed = Tensor::zeros(r, c);
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = xs.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (o, v) in normed.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = normed.clone();
        for i in 0..r {
            for ((o, gg), bb) in out.row_mut(i).iter_mut().zip(g).zip(b) {
                *o = *o * gg + bb;
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
        ))
    }

    /// Scaled dot-product attention `softmax(q k^T * scale + bias) v` over the
    /// columns allowed by `key_mask`.
    ///
    /// Each output row reduces over keys in an order determined by the values
    /// being summed, never by key position, so permuting the sequence permutes
    /// the output exactly.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        bias: Option<Var>,
        key_mask: Option<&[bool]>,
        scale: f64,
    ) -> Result<Var> {
        let (n, dk) = self.shape(q);
        let (kn, kd) = self.shape(k);
        let (vn, dv) = self.shape(v);
        if kd != dk || kn != vn {
            return Err(mismatch("attention", format!("q {n}x{dk}, k {kn}x{kd}, v {vn}x{dv}")));
        }
        if let Some(b) = bias {
            if self.shape(b) != (n, kn) {
                return Err(mismatch("attention", format!("bias {:?} for {n}x{kn} scores", self.shape(b))));
            }
        }
        if let Some(m) = key_mask {
            if m.len() != kn {
                return Err(mismatch("attention", format!("mask of {} for {kn} keys", m.len())));
            }
        }
        let mut scores = matmul(self.value(q), false, self.value(k), true);
        scores.scale_assign(scale);
        if let Some(b) = bias {
            scores.add_assign(self.value(b));
        }
        let vals = self.value(v);
        let mut probs = Tensor::zeros(n, kn);
        let mut out = Tensor::zeros(n, dv);
        let mut order: Vec<usize> = Vec::with_capacity(kn);
        let mut exps = vec![0.0; kn];
        for i in 0..n {
            order.clear();
            order.extend((0..kn).filter(|&j| key_mask.map_or(true, |m| m[j])));
            if order.is_empty() {
                return Err(Error::FullyMaskedRow);
            }
            let row = scores.row(i);
            let max = order.iter().map(|&j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            for &j in &order {
                exps[j] = (row[j] - max).exp();
            }
            order.sort_unstable_by(|&a, &b| {
                exps[a]
                    .total_cmp(&exps[b])
                    .then_with(|| lex_cmp(vals.row(a), vals.row(b)))
            });
            let denom: f64 = order.iter().map(|&j| exps[j]).sum();
            let prow = probs.row_mut(i);
            for &j in &order {
                prow[j] = exps[j] / denom;
            }
            let orow = out.row_mut(i);
            for &j in &order {
                let p = prow[j];
                for (o, x) in orow.iter_mut().zip(vals.row(j)) {
                    *o += p * x;
                }
            }
        }
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                bias,
                probs,
                scale,
            },
        ))
    }

    /// Weighted mean over rows of the cross-entropy between `softmax(logits)`
    /// and the target distributions. Rows with zero weight are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: Tensor, weights: Vec<f64>) -> Result<Var> {
        let (r, c) = self.shape(logits);
        if targets.shape() != (r, c) || weights.len() != r {
            return Err(mismatch("cross_entropy", format!("logits {r}x{c}, targets {:?}", targets.shape())));
        }
        let ls = self.value(logits);
        if !ls.is_finite() {
            return Err(Error::NonFinite("cross_entropy logits"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidInput("cross_entropy needs a positive total weight".into()));
        }
        let probs = softmax_rows(ls, None)?;
        let mut loss = 0.0;
        for i in 0..r {
            if weights[i] == 0.0 {
                continue;
            }
            let row = ls.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            let ce: f64 = targets
                .row(i)
                .iter()
                .zip(row)
                .filter(|(t, _)| **t != 0.0)
                .map(|(t, x)| -t * (x - lse))
                .sum();
            loss += weights[i] * ce;
        }
        Ok(self.push(
            Tensor::scalar(loss / total),
            Op::CrossEntropy {
                logits,
                probs,
                targets,
                weights,
                total,
            },
        ))
    }

    /// Weighted mean binary cross-entropy of probabilities `p` against 0/1
    /// `targets`; entries with zero weight are ignored.
    pub fn bce(&mut self, p: Var, targets: Tensor, weights: Tensor) -> Result<Var> {
        let shape = self.shape(p);
        if targets.shape() != shape || weights.shape() != shape {
            return Err(mismatch("bce", format!("p {shape:?}, targets {:?}", targets.shape())));
        }
        let ps = self.value(p);
        if !ps.is_finite() {
            return Err(Error::NonFinite("bce probabilities"));
        }
        let weights = weights.into_data();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidInput("bce needs a positive total weight".into()));
        }
        let mut loss = 0.0;
        for ((&p, &t), &w) in ps.data().iter().zip(targets.data()).zip(&weights) {
            if w == 0.0 {
                continue;
            }
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            loss += w * -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
        }
        Ok(self.push(
            Tensor::scalar(loss / total),
            Op::Bce {
                p,
                targets,
                weights,
                total,
            },
        ))
    }

    /// Weighted mean binary cross-entropy of the symmetrized probabilities
    /// `(sigmoid(l_ij) + sigmoid(l_ji)) / 2`, evaluated in log space so that
    /// saturated logits keep a gradient. Entries with zero weight are ignored.
    pub fn pair_bce_logits(&mut self, logits: Var, targets: Tensor, weights: Tensor) -> Result<Var> {
        let (r, c) = self.shape(logits);
        if r != c || targets.shape() != (r, c) || weights.shape() != (r, c) {
            return Err(mismatch("pair_bce_logits", format!("logits {:?}, targets {:?}", (r, c), targets.shape())));
        }
        let l = self.value(logits);
        if !l.is_finite() {
            return Err(Error::NonFinite("pair_bce_logits logits"));
        }
        let weights = weights.into_data();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidInput("pair_bce_logits needs a positive total weight".into()));
        }
        let mut loss = 0.0;
        for i in 0..r {
            for j in 0..r {
                let w = weights[i * r + j];
                if w != 0.0 {
                    loss += w * pair_bce(l.get(i, j), l.get(j, i), targets.get(i, j)).0;
                }
            }
        }
        Ok(self.push(
            Tensor::scalar(loss / total),
            Op::PairBce {
                logits,
                targets,
                weights,
                total,
            },
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss { rows: r, cols: c });
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients {
            grads: vec![None; self.params.len()],
        };
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let slot = &mut out.grads[id.0];
                    match slot {
                        Some(acc) => acc.add_assign(&g),
                        None => *slot = Some(g),
                    }
                }
                Op::MatMul { a, b, trans_b } => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    // y = a b      : da = g b^T, db = a^T g
                    // y = a b^T    : da = g b,   db = g^T a
                    let da = matmul(&g, false, bv, !*trans_b);
                    let db = if *trans_b {
                        matmul(&g, true, av, false)
                    } else {
                        matmul(av, true, &g, false)
                    };
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Transpose(x) => accumulate(&mut grads, *x, g.transpose()),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow { x, row } => {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, v) in gr.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *x, g);
                }
                Op::Scale(x, s) => {
                    let mut g = g;
                    g.scale_assign(*s);
                    accumulate(&mut grads, *x, g);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (pr, pc) = self.shape(*p);
                        let mut gp = Tensor::zeros(pr, pc);
                        for i in 0..pr {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + pc]);
                        }
                        off += pc;
                        accumulate(&mut grads, *p, gp);
                    }
                }
                Op::Tanh(x) => {
                    let y = self.owned(idx);
                    let mut g = g;
                    for (gv, yv) in g.data_mut().iter_mut().zip(y.data()) {
                        *gv *= 1.0 - yv * yv;
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let mut g = g;
                    for (gv, v) in g.data_mut().iter_mut().zip(xv.data()) {
                        if *v <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::Sigmoid(x) => {
                    let y = self.owned(idx);
                    let mut g = g;
                    for (gv, yv) in g.data_mut().iter_mut().zip(y.data()) {
                        *gv *= yv * (1.0 - yv);
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::Dropout { x, mask } => {
                    let mut g = g;
                    for (gv, m) in g.data_mut().iter_mut().zip(mask) {
                        *gv *= m;
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::GatherRows { table, indices } => {
                    let (tr, tc) = self.shape(*table);
                    let mut gt = Tensor::zeros(tr, tc);
                    for (r, &i) in indices.iter().enumerate() {
                        for (o, v) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::Reshape(x) => {
                    let (xr, xc) = self.shape(*x);
                    accumulate(&mut grads, *x, g.reshaped(xr, xc)?);
                }
                Op::Sum(x) => {
                    let (xr, xc) = self.shape(*x);
                    accumulate(&mut grads, *x, Tensor::filled(xr, xc, g.item()));
                }
                Op::Mean(x) => {
                    let (xr, xc) = self.shape(*x);
                    let n = (xr * xc) as f64;
                    accumulate(&mut grads, *x, Tensor::filled(xr, xc, g.item() / n));
                }
                Op::RowSoftmax(x) => {
                    let y = self.owned(idx);
                    accumulate(&mut grads, *x, softmax_backward(y, &g));
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let (r, c) = normed.shape();
                    let gv = self.value(*gain).data();
                    let mut dgain = Tensor::zeros(1, c);
                    let mut dbias = Tensor::zeros(1, c);
                    let mut dx = Tensor::zeros(r, c);
                    for i in 0..r {
                        let gr = g.row(i);
                        let nr = normed.row(i);
                        let mut sum_dn = 0.0;
                        let mut sum_dn_n = 0.0;
                        for j in 0..c {
                            dgain.row_mut(0)[j] += gr[j] * nr[j];
                            dbias.row_mut(0)[j] += gr[j];
                            let dn = gr[j] * gv[j];
                            sum_dn += dn;
                            sum_dn_n += dn * nr[j];
                        }
                        let cf = c as f64;
                        let dxr = dx.row_mut(i);
                        for j in 0..c {
                            let dn = gr[j] * gv[j];
                            dxr[j] = inv_std[i] * (dn - sum_dn / cf - nr[j] * sum_dn_n / cf);
                        }
                    }
                    accumulate(&mut grads, *gain, dgain);
                    accumulate(&mut grads, *bias, dbias);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    bias,
                    probs,
                    scale,
                } => {
                    let qv = self.value(*q);
                    let kv = self.value(*k);
                    let vv = self.value(*v);
                    let dv = matmul(probs, true, &g, false);
                    let dp = matmul(&g, false, vv, true);
                    let mut ds = softmax_backward(probs, &dp);
                    if let Some(b) = bias {
                        accumulate(&mut grads, *b, ds.clone());
                    }
                    ds.scale_assign(*scale);
                    let dq = matmul(&ds, false, kv, false);
                    let dk = matmul(&ds, true, qv, false);
                    accumulate(&mut grads, *q, dq);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *v, dv);
                }
                Op::CrossEntropy {
                    logits,
                    probs,
                    targets,
                    weights,
                    total,
                } => {
                    let (r, c) = probs.shape();
                    let up = g.item();
                    let mut dl = Tensor::zeros(r, c);
                    for i in 0..r {
                        if weights[i] == 0.0 {
                            continue;
                        }
                        let tsum: f64 = targets.row(i).iter().sum();
                        let w = weights[i] * up / total;
                        for j in 0..c {
                            dl.set(i, j, w * (probs.get(i, j) * tsum - targets.get(i, j)));
                        }
                    }
                    accumulate(&mut grads, *logits, dl);
                }
                Op::Bce {
                    p,
                    targets,
                    weights,
                    total,
                } => {
                    let pv = self.value(*p);
                    let (r, c) = pv.shape();
                    let up = g.item();
                    let mut dp = Tensor::zeros(r, c);
                    for (((o, &p), &t), &w) in dp.data_mut().iter_mut().zip(pv.data()).zip(targets.data()).zip(weights) {
                        if w == 0.0 {
                            continue;
                        }
                        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                        *o = w * up / total * ((1.0 - t) / (1.0 - p) - t / p);
                    }
                    accumulate(&mut grads, *p, dp);
                }
                Op::PairBce {
                    logits,
                    targets,
                    weights,
                    total,
                } => {
                    let l = self.value(*logits);
                    let n = l.rows();
                    let up = g.item() / total;
                    let mut dl = Tensor::zeros(n, n);
                    for i in 0..n {
                        for j in 0..n {
                            let w = weights[i * n + j];
                            if w == 0.0 {
                                continue;
                            }
                            let (_, da, db) = pair_bce(l.get(i, j), l.get(j, i), targets.get(i, j));
                            dl.data_mut()[i * n + j] += w * up * da;
                            dl.data_mut()[j * n + i] += w * up * db;
                        }
                    }
                    accumulate(&mut grads, *logits, dl);
                }
            }
        }
        Ok(out)
    }

    fn owned(&self, idx: usize) -> &Tensor {
        match &self.nodes[idx].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.value(*id),
        }
    }
}

const BCE_EPS: f64 = 1e-12;

fn log_sigmoid(x: f64) -> f64 {
    -(x.max(0.0) - x + (-x.abs()).exp().ln_1p())
}

fn log_add_exp(u: f64, v: f64) -> f64 {
    u.max(v) + (-(u - v).abs()).exp().ln_1p()
}

/// Loss of one pair with logits `a`, `b` against target `t`, and its
/// derivatives with respect to `a` and `b`.
fn pair_bce(a: f64, b: f64, t: f64) -> (f64, f64, f64) {
    let (pa, pb, na, nb) = (log_sigmoid(a), log_sigmoid(b), log_sigmoid(-a), log_sigmoid(-b));
    let on = log_add_exp(pa, pb);
    let off = log_add_exp(na, nb);
    let loss = -(t * (on - LN_2) + (1.0 - t) * (off - LN_2));
    let d = |s: f64, lp: f64, ln: f64| -(t * (1.0 - s) * (lp - on).exp() - (1.0 - t) * s * (ln - off).exp());
    (loss, d(sigmoid(a), pa, na), d(sigmoid(b), pb, nb))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Row softmax whose denominators are summed in value order.
pub(crate) fn softmax_rows(x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    let (r, c) = x.shape();
    let mut out = Tensor::zeros(r, c);
    let mut exps = Vec::with_capacity(c);
    for i in 0..r {
        let row = x.row(i);
        let valid = |j: usize| mask.map_or(true, |m| m[j]);
        let max = (0..c).filter(|&j| valid(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::FullyMaskedRow);
        }
        exps.clear();
        exps.extend((0..c).filter(|&j| valid(j)).map(|j| (row[j] - max).exp()));
        let denom = super::tensor::order_free_sum(&mut exps);
        let orow = out.row_mut(i);
        for j in 0..c {
            orow[j] = if valid(j) { (row[j] - max).exp() / denom } else { 0.0 };
        }
    }
    Ok(out)
}

fn softmax_backward(y: &Tensor, g: &Tensor) -> Tensor {
    let (r, c) = y.shape();
    let mut dx = Tensor::zeros(r, c);
    for i in 0..r {
        let yr = y.row(i);
        let gr = g.row(i);
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for (o, (yv, gv)) in dx.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
            *o = yv * (gv - dot);
        }
    }
    dx
}
