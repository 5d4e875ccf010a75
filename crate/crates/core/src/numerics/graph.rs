//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation in creation order. Because inputs are
//! always created before outputs, walking the tape backwards from the loss is
//! a valid reverse topological order.

use std::collections::HashMap;

use crate::error::{GdrError, Result};

use super::{Mask, Matrix, ParameterStore, Scalar};

/// Layer-norm variance floor.
pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, S),
    Relu(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix<S>,
        inv_std: Vec<S>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    MeanRows {
        x: Var,
        valid: Vec<bool>,
        count: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        pad: usize,
        probs: Matrix<S>,
    },
}

#[derive(Debug)]
struct Node<S> {
    value: Matrix<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Matrix<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Matrix<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Debug)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    params: HashMap<String, Var>,
    grad_enabled: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A graph that never tracks gradients (inference).
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Matrix<S> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> S {
        self.nodes[v.0].value.data()[0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Matrix<S>, op: Op<S>, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(GdrError::NonFinite(format!("graph op {}", op_name(&op))));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad: needs_grad && self.grad_enabled,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; never receives gradient.
    pub fn constant(&mut self, value: Matrix<S>) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf not tied to a parameter store.
    pub fn variable(&mut self, value: Matrix<S>) -> Result<Var> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf bound to a named parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParameterStore<S>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store.get(name)?;
        let v = self.push(t.to_matrix()?, Op::Leaf, t.requires_grad)?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_bt(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMulBt(a, b), ng)
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Result<Matrix<S>> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(GdrError::shape(op, format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Matrix::from_vec(x.rows(), x.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("add", a, b, |p, q| p + q)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("sub", a, b, |p, q| p - q)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("mul", a, b, |p, q| p * q)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(GdrError::shape(
                "add_row",
                format!("{:?} + row {:?}", x.shape(), r.shape()),
            ));
        }
        let mut value = x.clone();
        for i in 0..value.rows() {
            for (v, &b) in value.row_mut(i).iter_mut().zip(r.data()) {
                *v += b;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        self.push(value, Op::AddRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, s: S) -> Result<Var> {
        let value = self.value(a).map(|v| v * s);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| if v > S::zero() { v } else { S::zero() });
        let ng = self.needs(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| v.tanh());
        let ng = self.needs(a);
        self.push(value, Op::Tanh(a), ng)
    }

    /// Row-wise softmax. Masked entries get weight exactly zero.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Mask>) -> Result<Var> {
        let x = self.value(a);
        if let Some(m) = mask {
            if m.shape() != x.shape() {
                return Err(GdrError::shape(
                    "softmax_rows",
                    format!("mask {:?} vs scores {:?}", m.shape(), x.shape()),
                ));
            }
        }
        let mut value = Matrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let allow = |c: usize| mask.map_or(true, |m| m.allowed(r, c));
            softmax_into(x.row(r), allow, value.row_mut(r)).map_err(|e| match e {
                GdrError::Empty(_) => GdrError::DegenerateMask { row: r },
                other => other,
            })?;
        }
        let ng = self.needs(a);
        self.push(value, Op::Softmax(a), ng)
    }

    /// `gain ⊙ (x − μ) / sqrt(σ² + ε) + bias`, per row.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let (g, b) = (self.value(gain), self.value(bias));
        if g.shape() != (1, cols) || b.shape() != (1, cols) {
            return Err(GdrError::shape(
                "layer_norm",
                format!("gain {:?}, bias {:?} for width {cols}", g.shape(), b.shape()),
            ));
        }
        let eps = S::of(LAYER_NORM_EPS);
        let n = S::from_usize(cols).unwrap();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let is = S::one() / (var + eps).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat.set(r, c, h);
                value.set(r, c, g.data()[c] * h + b.data()[c]);
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Selects rows of `table` by index.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let mut value = Matrix::zeros(ids.len(), t.cols());
        for (i, &id) in ids.iter().enumerate() {
            if id >= t.rows() {
                return Err(GdrError::OutOfRange {
                    what: "row index",
                    value: id,
                    limit: t.rows(),
                });
            }
            value.row_mut(i).copy_from_slice(t.row(id));
        }
        let ng = self.needs(table);
        self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(GdrError::shape(
                "slice_cols",
                format!("{start}+{len} > {}", xv.cols()),
            ));
        }
        let mut value = Matrix::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            value.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        let ng = self.needs(x);
        self.push(value, Op::SliceCols { x, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(GdrError::Empty("concat_cols"));
        };
        let rows = self.value(first).rows();
        let mut cols = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(GdrError::shape("concat_cols", "row counts differ"));
            }
            cols += self.value(p).cols();
        }
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                value.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Mean over the rows flagged valid, as a `1 × c` row.
    pub fn mean_rows(&mut self, x: Var, valid: Option<&[bool]>) -> Result<Var> {
        let xv = self.value(x);
        let valid: Vec<bool> = match valid {
            Some(v) if v.len() != xv.rows() => {
                return Err(GdrError::shape("mean_rows", "validity length != rows"))
            }
            Some(v) => v.to_vec(),
            None => vec![true; xv.rows()],
        };
        let count = valid.iter().filter(|&&v| v).count();
        if count == 0 {
            return Err(GdrError::Empty("mean_rows"));
        }
        let mut acc = vec![S::zero(); xv.cols()];
        for r in (0..xv.rows()).filter(|&r| valid[r]) {
            for (a, &v) in acc.iter_mut().zip(xv.row(r)) {
                *a += v;
            }
        }
        let n = S::from_usize(count).unwrap();
        acc.iter_mut().for_each(|a| *a /= n);
        let ng = self.needs(x);
        self.push(Matrix::row_vector(acc), Op::MeanRows { x, valid, count }, ng)
    }

    /// Elementwise arithmetic mean of equally shaped matrices.
    pub fn mean_of(&mut self, parts: &[Var]) -> Result<Var> {
        let Some((&first, rest)) = parts.split_first() else {
            return Err(GdrError::Empty("mean_of"));
        };
        let mut acc = first;
        for &p in rest {
            acc = self.add(acc, p)?;
        }
        let k = S::from_usize(parts.len()).unwrap();
        self.scale(acc, S::one() / k)
    }

    /// Summed negative log-likelihood over positions whose target is not `pad`.
    /// Returns a `1 × 1` node and the number of scored positions.
    pub fn cross_entropy_sum(
        &mut self,
        logits: Var,
        targets: &[usize],
        pad: usize,
    ) -> Result<(Var, usize)> {
        let lv = self.value(logits);
        if lv.rows() != targets.len() {
            return Err(GdrError::shape(
                "cross_entropy",
                format!("{} logit rows, {} targets", lv.rows(), targets.len()),
            ));
        }
        let mut probs = Matrix::zeros(lv.rows(), lv.cols());
        let mut total = S::zero();
        let mut count = 0;
        for (r, &t) in targets.iter().enumerate() {
            if t == pad {
                continue;
            }
            if t >= lv.cols() {
                return Err(GdrError::OutOfRange {
                    what: "target id",
                    value: t,
                    limit: lv.cols(),
                });
            }
            let row = lv.row(r);
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let sum: S = row.iter().map(|&v| (v - max).exp()).sum();
            let log_z = max + sum.ln();
            total += log_z - row[t];
            for (p, &v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (v - log_z).exp();
            }
            count += 1;
        }
        if count == 0 {
            return Err(GdrError::Empty("cross_entropy (all positions padded)"));
        }
        let ng = self.needs(logits);
        let v = self.push(
            Matrix::filled(1, 1, total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                pad,
                probs,
            },
            ng,
        )?;
        Ok((v, count))
    }

    /// Reverse pass from a `1 × 1` node, seeded with `seed`.
    pub fn backward(&self, loss: Var, seed: S) -> Result<Gradients<S>> {
        if self.value(loss).shape() != (1, 1) {
            return Err(GdrError::shape("backward", "loss must be 1x1"));
        }
        let mut grads: Vec<Option<Matrix<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, seed));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        for g in grads.iter().flatten() {
            if !g.is_finite() {
                return Err(GdrError::NonFinite("backward pass".into()));
            }
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Matrix<S>>], v: Var, g: Matrix<S>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<S>, g: &Matrix<S>, grads: &mut [Option<Matrix<S>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    self.acc(grads, *a, g.matmul_bt(self.value(*b))?);
                }
                if self.needs(*b) {
                    self.acc(grads, *b, self.value(*a).matmul_at(g)?);
                }
            }
            Op::MatMulBt(a, b) => {
                // out = a bᵀ: da = g b, db = gᵀ a
                if self.needs(*a) {
                    self.acc(grads, *a, g.matmul(self.value(*b))?);
                }
                if self.needs(*b) {
                    self.acc(grads, *b, g.matmul_at(self.value(*a))?);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = g.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                    self.acc(grads, *a, Matrix::from_vec(g.rows(), g.cols(), d)?);
                }
                if self.needs(*b) {
                    let d = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                    self.acc(grads, *b, Matrix::from_vec(g.rows(), g.cols(), d)?);
                }
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, g.clone());
                if self.needs(*row) {
                    let mut s = vec![S::zero(); g.cols()];
                    for r in 0..g.rows() {
                        for (acc, &v) in s.iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    self.acc(grads, *row, Matrix::row_vector(s));
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.acc(grads, *a, g.map(|v| v * s));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| if xv > S::zero() { gv } else { S::zero() })
                    .collect();
                self.acc(grads, *a, Matrix::from_vec(g.rows(), g.cols(), d)?);
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let d = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&gv, &yv)| gv * (S::one() - yv * yv))
                    .collect();
                self.acc(grads, *a, Matrix::from_vec(g.rows(), g.cols(), d)?);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: S = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for (o, (&p, &q)) in d.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = p * (q - dot);
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = xhat.shape();
                let gv = self.value(*gain);
                let n = S::from_usize(cols).unwrap();
                if self.needs(*x) {
                    let mut dx = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        let dxhat: Vec<S> =
                            (0..cols).map(|c| g.get(r, c) * gv.data()[c]).collect();
                        let m1 = dxhat.iter().copied().sum::<S>() / n;
                        let m2 = dxhat
                            .iter()
                            .zip(xhat.row(r))
                            .map(|(&a, &h)| a * h)
                            .sum::<S>()
                            / n;
                        for c in 0..cols {
                            dx.set(r, c, inv_std[r] * (dxhat[c] - m1 - xhat.get(r, c) * m2));
                        }
                    }
                    self.acc(grads, *x, dx);
                }
                if self.needs(*gain) || self.needs(*bias) {
                    let mut dg = vec![S::zero(); cols];
                    let mut db = vec![S::zero(); cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            dg[c] += g.get(r, c) * xhat.get(r, c);
                            db[c] += g.get(r, c);
                        }
                    }
                    self.acc(grads, *gain, Matrix::row_vector(dg));
                    self.acc(grads, *bias, Matrix::row_vector(db));
                }
            }
            Op::Gather { table, ids } => {
                let t = self.value(*table);
                let mut d = Matrix::zeros(t.rows(), t.cols());
                for (i, &id) in ids.iter().enumerate() {
                    for (o, &v) in d.row_mut(id).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                self.acc(grads, *table, d);
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let mut d = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                self.acc(grads, *x, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let mut d = Matrix::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        self.acc(grads, p, d);
                    }
                    off += w;
                }
            }
            Op::MeanRows { x, valid, count } => {
                let xv = self.value(*x);
                let n = S::from_usize(*count).unwrap();
                let mut d = Matrix::zeros(xv.rows(), xv.cols());
                for r in (0..xv.rows()).filter(|&r| valid[r]) {
                    for (o, &v) in d.row_mut(r).iter_mut().zip(g.data()) {
                        *o = v / n;
                    }
                }
                self.acc(grads, *x, d);
            }
            Op::CrossEntropy {
                logits,
                targets,
                pad,
                probs,
            } => {
                let s = g.data()[0];
                let mut d = Matrix::zeros(probs.rows(), probs.cols());
                for (r, &t) in targets.iter().enumerate() {
                    if t == *pad {
                        continue;
                    }
                    for (o, &p) in d.row_mut(r).iter_mut().zip(probs.row(r)) {
                        *o = s * p;
                    }
                    let cur = d.get(r, t);
                    d.set(r, t, cur - s);
                }
                self.acc(grads, *logits, d);
            }
        }
        Ok(())
    }

    /// Adds the gradient of every parameter leaf into the store.
    pub fn write_param_grads(&self, grads: &Gradients<S>, store: &mut ParameterStore<S>) -> Result<()> {
        for (name, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                let t = store.get_mut(name)?;
                if t.requires_grad {
                    t.accumulate_grad(g.data())?;
                }
            }
        }
        Ok(())
    }
}

/// Writes the softmax of `x` restricted to `allow` into `out`; excluded
/// entries are set to zero.
pub(crate) fn softmax_into<S: Scalar>(
    x: &[S],
    allow: impl Fn(usize) -> bool,
    out: &mut [S],
) -> Result<()> {
    let mut max = S::neg_infinity();
    let mut any = false;
    for (i, &v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(GdrError::NonFinite("softmax input".into()));
        }
        if allow(i) {
            any = true;
            max = max.max(v);
        }
    }
    if !any {
        return Err(GdrError::Empty("softmax"));
    }
    let mut sum = S::zero();
    for (i, (&v, o)) in x.iter().zip(out.iter_mut()).enumerate() {
        *o = if allow(i) { (v - max).exp() } else { S::zero() };
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
    Ok(())
}

fn op_name<S>(op: &Op<S>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::MatMulBt(..) => "matmul_bt",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::AddRow(..) => "add_row",
        Op::Scale(..) => "scale",
        Op::Relu(..) => "relu",
        Op::Tanh(..) => "tanh",
        Op::Softmax(..) => "softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Gather { .. } => "gather",
        Op::SliceCols { .. } => "slice_cols",
        Op::ConcatCols(..) => "concat_cols",
        Op::MeanRows { .. } => "mean_rows",
        Op::CrossEntropy { .. } => "cross_entropy",
    }
}
