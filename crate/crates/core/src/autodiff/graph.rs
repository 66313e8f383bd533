//! Tape of tensor operations recorded during a forward pass.
//!
//! Every op keeps whatever it needs for its vector-Jacobian product, and
//! [`Graph::backward`] walks the tape once in reverse. A graph can be
//! differentiated exactly once.

use std::cmp::Ordering;
use std::sync::Arc;

use super::tensor::{Gradients, ParamId, ParamStore, Tensor};
use super::AutodiffError;
use crate::scalar::{matmul, MatRef, Scalar};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<S> {
    Input,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        cols: Vec<S>,
    },
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    Add(Var, Var),
    Scale {
        x: Var,
        factors: Arc<Vec<S>>,
    },
    Concat(Var, Var),
    Reshape(Var),
    Gather {
        table: Var,
        index: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Attend {
        q: Var,
        k: Var,
        v: Var,
        offsets: Vec<usize>,
        heads: usize,
        probs: Vec<S>,
    },
}

struct Node<S> {
    value: Arc<Tensor<S>>,
    op: Op<S>,
}

/// Reverse-mode tape.
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    consumed: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(msg: String) -> AutodiffError {
    AutodiffError::ShapeMismatch(msg)
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.shared_value(id),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// `y = x · wᵀ + b`; `x` is read as `[rows, row_len]`, `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, AutodiffError> {
        let xt = self.value(x);
        let wt = self.value(w);
        if wt.shape().len() != 2 {
            return Err(mismatch(format!(
                "linear weight must be 2-D, got {:?}",
                wt.shape()
            )));
        }
        let (out_dim, in_dim) = (wt.shape()[0], wt.shape()[1]);
        let rows = xt.rows();
        if xt.shape().is_empty() || xt.row_len() != in_dim {
            return Err(mismatch(format!(
                "linear expects rows of {in_dim}, input is {:?}",
                xt.shape()
            )));
        }
        let mut y = vec![S::zero(); rows * out_dim];
        matmul(
            MatRef::new(xt.values(), rows, in_dim),
            MatRef::new(wt.values(), out_dim, in_dim).t(),
            &mut y,
            false,
        );
        if let Some(b) = b {
            let bt = self.value(b);
            if bt.len() != out_dim {
                return Err(mismatch(format!(
                    "bias has {} values, expected {out_dim}",
                    bt.len()
                )));
            }
            for row in y.chunks_mut(out_dim) {
                for (v, bias) in row.iter_mut().zip(bt.values()) {
                    *v += *bias;
                }
            }
        }
        let value = Tensor::new(vec![rows, out_dim], y)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    /// 1-D convolution over `[batch, channels, length]` with zero padding.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, AutodiffError> {
        let xt = self.value(x);
        let wt = self.value(w);
        if xt.shape().len() != 3 || wt.shape().len() != 3 {
            return Err(mismatch(format!(
                "conv1d wants 3-D input and kernel, got {:?} and {:?}",
                xt.shape(),
                wt.shape()
            )));
        }
        let (n, c, l) = (xt.shape()[0], xt.shape()[1], xt.shape()[2]);
        let (co, ci, k) = (wt.shape()[0], wt.shape()[1], wt.shape()[2]);
        if ci != c {
            return Err(mismatch(format!(
                "conv1d kernel expects {ci} channels, input has {c}"
            )));
        }
        if stride == 0 || l + 2 * pad < k {
            return Err(mismatch(format!(
                "conv1d input length {l} (pad {pad}) shorter than kernel {k}"
            )));
        }
        if self.value(b).len() != co {
            return Err(mismatch(format!("conv1d bias must have {co} values")));
        }
        let lo = (l + 2 * pad - k) / stride + 1;
        let ck = c * k;
        let mut cols = vec![S::zero(); n * lo * ck];
        let xv = xt.values();
        for s in 0..n {
            for o in 0..lo {
                let row = &mut cols[(s * lo + o) * ck..(s * lo + o + 1) * ck];
                for ch in 0..c {
                    for kk in 0..k {
                        let pos = (o * stride + kk) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < l {
                            row[ch * k + kk] = xv[(s * c + ch) * l + pos as usize];
                        }
                    }
                }
            }
        }
        let mut tmp = vec![S::zero(); n * lo * co];
        matmul(
            MatRef::new(&cols, n * lo, ck),
            MatRef::new(wt.values(), co, ck).t(),
            &mut tmp,
            false,
        );
        let bv = self.value(b).values();
        let mut y = vec![S::zero(); n * co * lo];
        for s in 0..n {
            for o in 0..lo {
                for ch in 0..co {
                    y[(s * co + ch) * lo + o] = tmp[(s * lo + o) * co + ch] + bv[ch];
                }
            }
        }
        let value = Tensor::new(vec![n, co, lo], y)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                pad,
                cols,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self
            .value(x)
            .map(|v| if v > S::zero() { v } else { S::zero() });
        self.push(y, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        self.push(y, Op::Sigmoid(x))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let w = last_dim(xt);
        let mut y = xt.values().to_vec();
        if w > 0 {
            for row in y.chunks_mut(w) {
                softmax_in_place(row);
            }
        }
        let y = Tensor::new(xt.shape().to_vec(), y).expect("same shape");
        self.push(y, Op::Softmax(x))
    }

    /// Layer normalisation over the last dimension with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, AutodiffError> {
        let xt = self.value(x);
        let d = last_dim(xt);
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.len() != d || b.len() != d || d == 0 {
            return Err(mismatch(format!(
                "layer norm over {d} features with gamma {:?} beta {:?}",
                g.shape(),
                b.shape()
            )));
        }
        let rows = xt.len() / d;
        let eps = S::lit(LAYER_NORM_EPS);
        let dn = S::from_usize(d).unwrap();
        let mut xhat = vec![S::zero(); xt.len()];
        let mut inv_std = vec![S::zero(); rows];
        let mut y = vec![S::zero(); xt.len()];
        for r in 0..rows {
            let row = &xt.values()[r * d..(r + 1) * d];
            let first = row[0];
            let constant = row.iter().all(|&v| v == first);
            let mean = row.iter().copied().sum::<S>() / dn;
            let var = if constant {
                S::zero()
            } else {
                row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn
            };
            let inv = S::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for i in 0..d {
                // constant rows normalise to exact zeros
                let h = if constant {
                    S::zero()
                } else {
                    (row[i] - mean) * inv
                };
                xhat[r * d + i] = h;
                y[r * d + i] = g.values()[i] * h + b.values()[i];
            }
        }
        let value = Tensor::new(xt.shape().to_vec(), y)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(mismatch(format!(
                "add of {:?} and {:?}",
                at.shape(),
                bt.shape()
            )));
        }
        let y: Vec<S> = at
            .values()
            .iter()
            .zip(bt.values())
            .map(|(x, y)| *x + *y)
            .collect();
        let value = Tensor::new(at.shape().to_vec(), y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Elementwise product with constant factors (dropout masks).
    pub fn scale(&mut self, x: Var, factors: Arc<Vec<S>>) -> Result<Var, AutodiffError> {
        let xt = self.value(x);
        if xt.len() != factors.len() {
            return Err(mismatch(format!(
                "scale of {} values by {} factors",
                xt.len(),
                factors.len()
            )));
        }
        let y: Vec<S> = xt
            .values()
            .iter()
            .zip(factors.iter())
            .map(|(a, b)| *a * *b)
            .collect();
        let value = Tensor::new(xt.shape().to_vec(), y)?;
        Ok(self.push(value, Op::Scale { x, factors }))
    }

    /// Concatenates two `[rows, *]` tensors along their trailing dimension.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.rows() != bt.rows() {
            return Err(mismatch(format!(
                "concat rows {:?} vs {:?}",
                at.shape(),
                bt.shape()
            )));
        }
        let (rows, wa, wb) = (at.rows(), at.row_len(), bt.row_len());
        let mut y = Vec::with_capacity(rows * (wa + wb));
        for r in 0..rows {
            y.extend_from_slice(at.row(r));
            y.extend_from_slice(bt.row(r));
        }
        let value = Tensor::new(vec![rows, wa + wb], y)?;
        Ok(self.push(value, Op::Concat(a, b)))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let y = (*self.value(x)).clone().reshaped(shape)?;
        Ok(self.push(y, Op::Reshape(x)))
    }

    /// Row lookup: output row `i` is `table[index[i]]`.
    pub fn gather(&mut self, table: Var, index: Vec<usize>) -> Result<Var, AutodiffError> {
        let tt = self.value(table);
        let (rows, w) = (tt.rows(), tt.row_len());
        let mut y = Vec::with_capacity(index.len() * w);
        for &i in &index {
            if i >= rows {
                return Err(mismatch(format!("gather index {i} out of {rows} rows")));
            }
            y.extend_from_slice(tt.row(i));
        }
        let value = Tensor::new(vec![index.len(), w], y)?;
        Ok(self.push(value, Op::Gather { table, index }))
    }

    /// Rows `start .. start + count` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var, AutodiffError> {
        let xt = self.value(x);
        if start + count > xt.rows() {
            return Err(mismatch(format!(
                "row slice {start}+{count} of {:?}",
                xt.shape()
            )));
        }
        let w = xt.row_len();
        let y = xt.values()[start * w..(start + count) * w].to_vec();
        let value = Tensor::new(vec![count, w], y)?;
        Ok(self.push(value, Op::SliceRows { x, start }))
    }

    /// Scaled dot-product attention of each query row over its own segment of
    /// key/value rows. Segment `i` spans rows `offsets[i]..offsets[i + 1]`;
    /// an empty segment yields a zero context row.
    ///
    /// Rows inside a segment are reduced in a canonical order (sorted by their
    /// key then value bits), so permuting a segment gives bit-identical output.
    pub fn attend(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        offsets: Vec<usize>,
        heads: usize,
    ) -> Result<Var, AutodiffError> {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let n = qt.rows();
        let d = qt.row_len();
        if heads == 0 || d % heads != 0 {
            return Err(mismatch(format!(
                "attention width {d} not divisible by {heads} heads"
            )));
        }
        if kt.row_len() != d || vt.row_len() != d || kt.rows() != vt.rows() {
            return Err(mismatch(format!(
                "attention q {:?} k {:?} v {:?}",
                qt.shape(),
                kt.shape(),
                vt.shape()
            )));
        }
        if offsets.len() != n + 1
            || offsets[0] != 0
            || *offsets.last().unwrap() != kt.rows()
            || offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(mismatch(format!(
                "attention offsets {offsets:?} do not cover {} rows",
                kt.rows()
            )));
        }
        let dh = d / heads;
        let scale = S::one() / S::from_usize(dh).unwrap().sqrt();
        let (qv, kv, vv) = (qt.values(), kt.values(), vt.values());
        let mut out = vec![S::zero(); n * d];
        let mut probs = vec![S::zero(); kt.rows() * heads];
        let mut order: Vec<usize> = Vec::new();
        let mut scores: Vec<S> = Vec::new();
        for s in 0..n {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if lo == hi {
                continue;
            }
            order.clear();
            order.extend(lo..hi);
            order.sort_by(|&a, &b| {
                lex_cmp(&kv[a * d..(a + 1) * d], &kv[b * d..(b + 1) * d])
                    .then_with(|| lex_cmp(&vv[a * d..(a + 1) * d], &vv[b * d..(b + 1) * d]))
            });
            for h in 0..heads {
                let qh = &qv[s * d + h * dh..s * d + (h + 1) * dh];
                scores.clear();
                scores.extend(order.iter().map(|&r| {
                    let kh = &kv[r * d + h * dh..r * d + (h + 1) * dh];
                    qh.iter().zip(kh).map(|(a, b)| *a * *b).sum::<S>() * scale
                }));
                softmax_in_place(&mut scores);
                let oh = &mut out[s * d + h * dh..s * d + (h + 1) * dh];
                for (&r, &p) in order.iter().zip(scores.iter()) {
                    probs[r * heads + h] = p;
                    let vh = &vv[r * d + h * dh..r * d + (h + 1) * dh];
                    for (o, x) in oh.iter_mut().zip(vh) {
                        *o += p * *x;
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, d], out)?;
        Ok(self.push(
            value,
            Op::Attend {
                q,
                k,
                v,
                offsets,
                heads,
                probs,
            },
        ))
    }

    /// Propagates `upstream` (the gradient of a scalar loss with respect to
    /// `output`) back through the tape and returns the parameter gradients.
    pub fn backward(
        &mut self,
        output: Var,
        upstream: &Tensor<S>,
    ) -> Result<Gradients<S>, AutodiffError> {
        if self.consumed || self.nodes.is_empty() {
            return Err(AutodiffError::NoForwardPass);
        }
        if upstream.len() != self.value(output).len() {
            return Err(mismatch(format!(
                "upstream gradient {:?} for output {:?}",
                upstream.shape(),
                self.value(output).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(upstream.values().to_vec());
        for i in (0..=output.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backprop_node(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        let mut out = Gradients::default();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                let g = grads[i]
                    .take()
                    .unwrap_or_else(|| vec![S::zero(); node.value.len()]);
                let g = Tensor::new(node.value.shape().to_vec(), g)?;
                match out.entries.iter_mut().find(|(p, _)| *p == id) {
                    Some((_, acc)) => {
                        for (a, v) in acc.values_mut().iter_mut().zip(g.values()) {
                            *a += *v;
                        }
                    }
                    None => out.entries.push((id, g)),
                }
            }
        }
        Ok(out)
    }

    fn backprop_node(&self, node: &Node<S>, dy: &[S], grads: &mut [Option<Vec<S>>]) {
        let val = |v: Var| -> &Tensor<S> { &self.nodes[v.0].value };
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (xt, wt) = (val(*x), val(*w));
                let (out_dim, in_dim) = (wt.shape()[0], wt.shape()[1]);
                let rows = xt.rows();
                {
                    let dx = acc(grads, *x, xt.len());
                    matmul(
                        MatRef::new(dy, rows, out_dim),
                        MatRef::new(wt.values(), out_dim, in_dim),
                        dx,
                        true,
                    );
                }
                {
                    let dw = acc(grads, *w, wt.len());
                    matmul(
                        MatRef::new(dy, rows, out_dim).t(),
                        MatRef::new(xt.values(), rows, in_dim),
                        dw,
                        true,
                    );
                }
                if let Some(b) = b {
                    let db = acc(grads, *b, out_dim);
                    for row in dy.chunks(out_dim) {
                        for (g, v) in db.iter_mut().zip(row) {
                            *g += *v;
                        }
                    }
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                pad,
                cols,
            } => {
                let (xt, wt) = (val(*x), val(*w));
                let (n, c, l) = (xt.shape()[0], xt.shape()[1], xt.shape()[2]);
                let (co, k) = (wt.shape()[0], wt.shape()[2]);
                let lo = node.value.shape()[2];
                let ck = c * k;
                let mut dtmp = vec![S::zero(); n * lo * co];
                {
                    let db = acc(grads, *b, co);
                    for s in 0..n {
                        for ch in 0..co {
                            for o in 0..lo {
                                let g = dy[(s * co + ch) * lo + o];
                                dtmp[(s * lo + o) * co + ch] = g;
                                db[ch] += g;
                            }
                        }
                    }
                }
                {
                    let dw = acc(grads, *w, wt.len());
                    matmul(
                        MatRef::new(&dtmp, n * lo, co).t(),
                        MatRef::new(cols, n * lo, ck),
                        dw,
                        true,
                    );
                }
                let mut dcols = vec![S::zero(); n * lo * ck];
                matmul(
                    MatRef::new(&dtmp, n * lo, co),
                    MatRef::new(wt.values(), co, ck),
                    &mut dcols,
                    false,
                );
                let dx = acc(grads, *x, xt.len());
                for s in 0..n {
                    for o in 0..lo {
                        let row = &dcols[(s * lo + o) * ck..(s * lo + o + 1) * ck];
                        for ch in 0..c {
                            for kk in 0..k {
                                let pos = (o * stride + kk) as isize - *pad as isize;
                                if pos >= 0 && (pos as usize) < l {
                                    dx[(s * c + ch) * l + pos as usize] += row[ch * k + kk];
                                }
                            }
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let xt = val(*x);
                let dx = acc(grads, *x, xt.len());
                for ((g, v), d) in dx.iter_mut().zip(xt.values()).zip(dy) {
                    if *v > S::zero() {
                        *g += *d;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.values();
                let dx = acc(grads, *x, y.len());
                for ((g, yv), d) in dx.iter_mut().zip(y).zip(dy) {
                    *g += *d * *yv * (S::one() - *yv);
                }
            }
            Op::Softmax(x) => {
                let y = node.value.values();
                let w = last_dim(&node.value);
                let dx = acc(grads, *x, y.len());
                if w > 0 {
                    for ((gr, yr), dr) in dx.chunks_mut(w).zip(y.chunks(w)).zip(dy.chunks(w)) {
                        let dot: S = yr.iter().zip(dr).map(|(a, b)| *a * *b).sum();
                        for ((g, yv), d) in gr.iter_mut().zip(yr).zip(dr) {
                            *g += *yv * (*d - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gt = val(*gamma);
                let d = gt.len();
                let dn = S::from_usize(d).unwrap();
                {
                    let dg = acc(grads, *gamma, d);
                    for (dr, hr) in dy.chunks(d).zip(xhat.chunks(d)) {
                        for ((g, a), h) in dg.iter_mut().zip(dr).zip(hr) {
                            *g += *a * *h;
                        }
                    }
                }
                {
                    let dbeta = acc(grads, *beta, d);
                    for dr in dy.chunks(d) {
                        for (g, a) in dbeta.iter_mut().zip(dr) {
                            *g += *a;
                        }
                    }
                }
                let dx = acc(grads, *x, dy.len());
                let mut dxhat = vec![S::zero(); d];
                for (r, (dr, hr)) in dy.chunks(d).zip(xhat.chunks(d)).enumerate() {
                    for i in 0..d {
                        dxhat[i] = dr[i] * gt.values()[i];
                    }
                    let mean_d = dxhat.iter().copied().sum::<S>() / dn;
                    let mean_dh = dxhat.iter().zip(hr).map(|(a, b)| *a * *b).sum::<S>() / dn;
                    for i in 0..d {
                        dx[r * d + i] += inv_std[r] * (dxhat[i] - mean_d - hr[i] * mean_dh);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    let g = acc(grads, *v, dy.len());
                    for (x, d) in g.iter_mut().zip(dy) {
                        *x += *d;
                    }
                }
            }
            Op::Scale { x, factors } => {
                let g = acc(grads, *x, dy.len());
                for ((x, d), f) in g.iter_mut().zip(dy).zip(factors.iter()) {
                    *x += *d * *f;
                }
            }
            Op::Concat(a, b) => {
                let (wa, wb) = (val(*a).row_len(), val(*b).row_len());
                let rows = val(*a).rows();
                {
                    let ga = acc(grads, *a, rows * wa);
                    for r in 0..rows {
                        for i in 0..wa {
                            ga[r * wa + i] += dy[r * (wa + wb) + i];
                        }
                    }
                }
                let gb = acc(grads, *b, rows * wb);
                for r in 0..rows {
                    for i in 0..wb {
                        gb[r * wb + i] += dy[r * (wa + wb) + wa + i];
                    }
                }
            }
            Op::Reshape(x) => {
                let g = acc(grads, *x, dy.len());
                for (x, d) in g.iter_mut().zip(dy) {
                    *x += *d;
                }
            }
            Op::Gather { table, index } => {
                let tt = val(*table);
                let w = tt.row_len();
                let g = acc(grads, *table, tt.len());
                for (row, &i) in dy.chunks(w.max(1)).zip(index) {
                    for (x, d) in g[i * w..(i + 1) * w].iter_mut().zip(row) {
                        *x += *d;
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let xt = val(*x);
                let w = xt.row_len();
                let g = acc(grads, *x, xt.len());
                for (x, d) in g[start * w..start * w + dy.len()].iter_mut().zip(dy) {
                    *x += *d;
                }
            }
            Op::Attend {
                q,
                k,
                v,
                offsets,
                heads,
                probs,
            } => {
                let (qt, kt, vt) = (val(*q), val(*k), val(*v));
                let d = qt.row_len();
                let dh = d / heads;
                let scale = S::one() / S::from_usize(dh).unwrap().sqrt();
                let mut dq = vec![S::zero(); qt.len()];
                let mut dk = vec![S::zero(); kt.len()];
                let mut dv = vec![S::zero(); vt.len()];
                let mut dp: Vec<S> = Vec::new();
                for s in 0..qt.rows() {
                    let (lo, hi) = (offsets[s], offsets[s + 1]);
                    for h in 0..*heads {
                        let span = h * dh..(h + 1) * dh;
                        let dout = &dy[s * d + span.start..s * d + span.end];
                        dp.clear();
                        for r in lo..hi {
                            let p = probs[r * heads + h];
                            let vh = &vt.values()[r * d + span.start..r * d + span.end];
                            dp.push(dout.iter().zip(vh).map(|(a, b)| *a * *b).sum());
                            for (g, o) in dv[r * d + span.start..r * d + span.end]
                                .iter_mut()
                                .zip(dout)
                            {
                                *g += p * *o;
                            }
                        }
                        let mean: S = (lo..hi)
                            .zip(&dp)
                            .map(|(r, g)| probs[r * heads + h] * *g)
                            .sum();
                        for (j, r) in (lo..hi).enumerate() {
                            let ds = probs[r * heads + h] * (dp[j] - mean) * scale;
                            for i in span.clone() {
                                dq[s * d + i] += ds * kt.values()[r * d + i];
                                dk[r * d + i] += ds * qt.values()[s * d + i];
                            }
                        }
                    }
                }
                for (var, g) in [(*q, dq), (*k, dk), (*v, dv)] {
                    let dst = acc(grads, var, g.len());
                    for (a, b) in dst.iter_mut().zip(g) {
                        *a += b;
                    }
                }
            }
        }
    }
}

fn acc<S: Scalar>(grads: &mut [Option<Vec<S>>], v: Var, len: usize) -> &mut Vec<S> {
    grads[v.0].get_or_insert_with(|| vec![S::zero(); len])
}

fn last_dim<S: Scalar>(t: &Tensor<S>) -> usize {
    t.shape().last().copied().unwrap_or(1)
}

fn lex_cmp<S: Scalar>(a: &[S], b: &[S]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) => continue,
            Some(o) => return o,
            None => return x.is_nan().cmp(&y.is_nan()),
        }
    }
    Ordering::Equal
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
