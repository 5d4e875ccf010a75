//! Transformer building blocks expressed on a [`Graph`].
//!
//! Parameter names follow `<prefix>.<part>`; see the `init_*` functions for
//! the exact set each block expects.

use rand::Rng;

use crate::error::{GdrError, Result};

use super::init::xavier_matrix;
use super::{Graph, Mask, Matrix, ParameterStore, Scalar, Tensor, Var};

pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

impl AttentionVars {
    pub fn load<S: Scalar>(g: &mut Graph<S>, store: &ParameterStore<S>, prefix: &str) -> Result<Self> {
        let mut p = |s: &str| g.param(store, &format!("{prefix}.{s}"));
        Ok(Self {
            wq: p("wq")?,
            bq: p("bq")?,
            wk: p("wk")?,
            bk: p("bk")?,
            wv: p("wv")?,
            bv: p("bv")?,
            wo: p("wo")?,
            bo: p("bo")?,
        })
    }
}

pub struct AttentionOutput {
    pub output: Var,
    /// One `q_rows × k_rows` weight matrix per head.
    pub weights: Vec<Var>,
}

/// Scaled dot-product multi-head attention with input and output projections.
pub fn attention<S: Scalar>(
    g: &mut Graph<S>,
    p: &AttentionVars,
    heads: usize,
    q_seq: Var,
    k_seq: Var,
    v_seq: Var,
    mask: Option<&Mask>,
) -> Result<AttentionOutput> {
    let hidden = g.value(p.wq).cols();
    if heads == 0 || hidden % heads != 0 {
        return Err(GdrError::Invalid(format!(
            "hidden size {hidden} not divisible by {heads} heads"
        )));
    }
    let (q_rows, k_rows) = (g.value(q_seq).rows(), g.value(k_seq).rows());
    if g.value(v_seq).rows() != k_rows {
        return Err(GdrError::shape(
            "attention",
            format!("{k_rows} key rows but {} value rows", g.value(v_seq).rows()),
        ));
    }
    if let Some(m) = mask {
        if m.shape() != (q_rows, k_rows) {
            return Err(GdrError::shape(
                "attention mask",
                format!("{:?} for {q_rows}x{k_rows} scores", m.shape()),
            ));
        }
        if let Some(row) = m.degenerate_row() {
            return Err(GdrError::DegenerateMask { row });
        }
    }
    let dk = hidden / heads;
    let scale = S::one() / S::from_usize(dk).unwrap().sqrt();

    let q = linear(g, p.wq, p.bq, q_seq)?;
    let k = linear(g, p.wk, p.bk, k_seq)?;
    let v = linear(g, p.wv, p.bv, v_seq)?;

    let mut contexts = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dk, dk)?;
        let kh = g.slice_cols(k, h * dk, dk)?;
        let vh = g.slice_cols(v, h * dk, dk)?;
        let scores = g.matmul_bt(qh, kh)?;
        let scores = g.scale(scores, scale)?;
        let w = g.softmax_rows(scores, mask)?;
        contexts.push(g.matmul(w, vh)?);
        weights.push(w);
    }
    let ctx = if heads == 1 {
        contexts[0]
    } else {
        g.concat_cols(&contexts)?
    };
    let output = linear(g, p.wo, p.bo, ctx)?;
    Ok(AttentionOutput { output, weights })
}

/// `x · w + b`
pub fn linear<S: Scalar>(g: &mut Graph<S>, w: Var, b: Var, x: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

pub struct FfnVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl FfnVars {
    pub fn load<S: Scalar>(g: &mut Graph<S>, store: &ParameterStore<S>, prefix: &str) -> Result<Self> {
        let mut p = |s: &str| g.param(store, &format!("{prefix}.{s}"));
        Ok(Self {
            w1: p("w1")?,
            b1: p("b1")?,
            w2: p("w2")?,
            b2: p("b2")?,
        })
    }
}

/// Position-wise `relu(x·W1 + b1)·W2 + b2`.
pub fn feed_forward<S: Scalar>(g: &mut Graph<S>, p: &FfnVars, x: Var) -> Result<Var> {
    let h = linear(g, p.w1, p.b1, x)?;
    let h = g.relu(h)?;
    linear(g, p.w2, p.b2, h)
}

pub struct NormVars {
    pub gain: Var,
    pub bias: Var,
}

impl NormVars {
    pub fn load<S: Scalar>(g: &mut Graph<S>, store: &ParameterStore<S>, prefix: &str) -> Result<Self> {
        Ok(Self {
            gain: g.param(store, &format!("{prefix}.gain"))?,
            bias: g.param(store, &format!("{prefix}.bias"))?,
        })
    }
}

/// `LayerNorm(x + sublayer_out)`
pub fn residual_norm<S: Scalar>(g: &mut Graph<S>, p: &NormVars, x: Var, sub: Var) -> Result<Var> {
    let sum = g.add(x, sub)?;
    g.layer_norm(sum, p.gain, p.bias)
}

fn insert_matrix<S: Scalar>(store: &mut ParameterStore<S>, name: String, m: Matrix<S>) -> Result<()> {
    store.insert(name, Tensor::from_matrix(&m))
}

pub fn init_linear<S: Scalar, R: Rng>(
    store: &mut ParameterStore<S>,
    w_name: String,
    b_name: String,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<()> {
    insert_matrix(store, w_name, xavier_matrix(fan_in, fan_out, rng))?;
    store.insert(b_name, Tensor::zeros(vec![fan_out]))
}

pub fn init_attention<S: Scalar, R: Rng>(
    store: &mut ParameterStore<S>,
    prefix: &str,
    hidden: usize,
    rng: &mut R,
) -> Result<()> {
    for part in ["q", "k", "v", "o"] {
        init_linear(
            store,
            format!("{prefix}.w{part}"),
            format!("{prefix}.b{part}"),
            hidden,
            hidden,
            rng,
        )?;
    }
    Ok(())
}

pub fn init_ffn<S: Scalar, R: Rng>(
    store: &mut ParameterStore<S>,
    prefix: &str,
    hidden: usize,
    inner: usize,
    rng: &mut R,
) -> Result<()> {
    init_linear(store, format!("{prefix}.w1"), format!("{prefix}.b1"), hidden, inner, rng)?;
    init_linear(store, format!("{prefix}.w2"), format!("{prefix}.b2"), inner, hidden, rng)
}

pub fn init_norm<S: Scalar>(store: &mut ParameterStore<S>, prefix: &str, hidden: usize) -> Result<()> {
    store.insert(
        format!("{prefix}.gain"),
        Tensor::new(vec![hidden], vec![S::one(); hidden])?,
    )?;
    store.insert(format!("{prefix}.bias"), Tensor::zeros(vec![hidden]))
}
