//! Value-level entry points for the numeric primitives.
//!
//! These wrap the graph operations for callers holding plain matrices and
//! share one implementation with the differentiable path.

use rand::Rng;

use crate::error::{GdrError, Result};

use super::graph::softmax_into;
use super::init::xavier_matrix;
use super::layers::{self, AttentionVars, FfnVars, NormVars};
use super::{Graph, Mask, Matrix, ParameterStore, Scalar, Tensor};

/// Numerically stable softmax (max-subtracted).
pub fn softmax<S: Scalar>(x: &[S]) -> Result<Vec<S>> {
    if x.is_empty() {
        return Err(GdrError::Empty("softmax"));
    }
    let mut out = vec![S::zero(); x.len()];
    softmax_into(x, |_| true, &mut out)?;
    Ok(out)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<S: Scalar>(x: &[S]) -> Option<usize> {
    let mut best: Option<(usize, S)> = None;
    for (i, &v) in x.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

fn row_tensor<S: Scalar>(v: &[S]) -> Tensor<S> {
    Tensor::new(vec![v.len()], v.to_vec()).expect("rank-1 tensor")
}

pub fn feed_forward<S: Scalar>(
    x: &Matrix<S>,
    w1: &Matrix<S>,
    b1: &[S],
    w2: &Matrix<S>,
    b2: &[S],
) -> Result<Matrix<S>> {
    if x.cols() != w1.rows() || b1.len() != w1.cols() || w1.cols() != w2.rows() || b2.len() != w2.cols() {
        return Err(GdrError::shape(
            "feed_forward",
            format!(
                "x {:?}, w1 {:?}, b1 {}, w2 {:?}, b2 {}",
                x.shape(),
                w1.shape(),
                b1.len(),
                w2.shape(),
                b2.len()
            ),
        ));
    }
    let mut store = ParameterStore::new();
    store.insert("ffn.w1", Tensor::from_matrix(w1))?;
    store.insert("ffn.b1", row_tensor(b1))?;
    store.insert("ffn.w2", Tensor::from_matrix(w2))?;
    store.insert("ffn.b2", row_tensor(b2))?;
    let mut g = Graph::inference();
    let p = FfnVars::load(&mut g, &store, "ffn")?;
    let xv = g.constant(x.clone())?;
    let out = layers::feed_forward(&mut g, &p, xv)?;
    Ok(g.value(out).clone())
}

pub fn residual_layer_norm<S: Scalar>(
    x: &Matrix<S>,
    sublayer_out: &Matrix<S>,
    gain: &[S],
    bias: &[S],
) -> Result<Matrix<S>> {
    if x.shape() != sublayer_out.shape() {
        return Err(GdrError::shape(
            "residual_layer_norm",
            format!("{:?} vs {:?}", x.shape(), sublayer_out.shape()),
        ));
    }
    let mut store = ParameterStore::new();
    store.insert("ln.gain", row_tensor(gain))?;
    store.insert("ln.bias", row_tensor(bias))?;
    let mut g = Graph::inference();
    let p = NormVars::load(&mut g, &store, "ln")?;
    let xv = g.constant(x.clone())?;
    let sv = g.constant(sublayer_out.clone())?;
    let out = layers::residual_norm(&mut g, &p, xv, sv)?;
    Ok(g.value(out).clone())
}

/// Projection weights for one multi-head attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<S> {
    pub heads: usize,
    pub wq: Matrix<S>,
    pub bq: Vec<S>,
    pub wk: Matrix<S>,
    pub bk: Vec<S>,
    pub wv: Matrix<S>,
    pub bv: Vec<S>,
    pub wo: Matrix<S>,
    pub bo: Vec<S>,
}

impl<S: Scalar> AttentionParams<S> {
    /// Identity projections, zero biases.
    pub fn identity(hidden: usize, heads: usize) -> Self {
        Self {
            heads,
            wq: Matrix::identity(hidden),
            bq: vec![S::zero(); hidden],
            wk: Matrix::identity(hidden),
            bk: vec![S::zero(); hidden],
            wv: Matrix::identity(hidden),
            bv: vec![S::zero(); hidden],
            wo: Matrix::identity(hidden),
            bo: vec![S::zero(); hidden],
        }
    }

    pub fn random<R: Rng>(hidden: usize, heads: usize, rng: &mut R) -> Self {
        let mut bias = || -> Vec<S> { (0..hidden).map(|_| S::of(rng.gen_range(-0.5..0.5))).collect() };
        let (bq, bk, bv, bo) = (bias(), bias(), bias(), bias());
        Self {
            heads,
            wq: xavier_matrix(hidden, hidden, rng),
            bq,
            wk: xavier_matrix(hidden, hidden, rng),
            bk,
            wv: xavier_matrix(hidden, hidden, rng),
            bv,
            wo: xavier_matrix(hidden, hidden, rng),
            bo,
        }
    }

    pub fn hidden(&self) -> usize {
        self.wq.rows()
    }

    /// Writes the block into `store` under `prefix` (same names as `init_attention`).
    pub fn install(&self, store: &mut ParameterStore<S>, prefix: &str) -> Result<()> {
        let parts: [(&str, Tensor<S>); 8] = [
            ("wq", Tensor::from_matrix(&self.wq)),
            ("bq", row_tensor(&self.bq)),
            ("wk", Tensor::from_matrix(&self.wk)),
            ("bk", row_tensor(&self.bk)),
            ("wv", Tensor::from_matrix(&self.wv)),
            ("bv", row_tensor(&self.bv)),
            ("wo", Tensor::from_matrix(&self.wo)),
            ("bo", row_tensor(&self.bo)),
        ];
        for (name, t) in parts {
            store.insert(format!("{prefix}.{name}"), t)?;
        }
        Ok(())
    }
}

pub fn multi_head_attention<S: Scalar>(
    q_seq: &Matrix<S>,
    k_seq: &Matrix<S>,
    v_seq: &Matrix<S>,
    params: &AttentionParams<S>,
    mask: Option<&Mask>,
) -> Result<Matrix<S>> {
    let h = params.hidden();
    if q_seq.cols() != h || k_seq.cols() != h || v_seq.cols() != h {
        return Err(GdrError::shape("multi_head_attention", "input width != hidden size"));
    }
    let mut store = ParameterStore::new();
    params.install(&mut store, "attn")?;
    let mut g = Graph::inference();
    let p = AttentionVars::load(&mut g, &store, "attn")?;
    let q = g.constant(q_seq.clone())?;
    let k = g.constant(k_seq.clone())?;
    let v = g.constant(v_seq.clone())?;
    let out = layers::attention(&mut g, &p, params.heads, q, k, v, mask)?;
    Ok(g.value(out.output).clone())
}

/// Mean negative log-likelihood over non-pad positions and its gradient
/// with respect to `logits`.
pub fn cross_entropy_loss<S: Scalar>(
    logits: &Matrix<S>,
    targets: &[usize],
    pad_id: usize,
) -> Result<(S, Matrix<S>)> {
    let mut g = Graph::new();
    let l = g.variable(logits.clone())?;
    let (sum, count) = g.cross_entropy_sum(l, targets, pad_id)?;
    let mean = g.scale(sum, S::one() / S::from_usize(count).unwrap())?;
    let grads = g.backward(mean, S::one())?;
    let grad = grads
        .get(l)
        .cloned()
        .unwrap_or_else(|| Matrix::zeros(logits.rows(), logits.cols()));
    Ok((g.scalar(mean), grad))
}
