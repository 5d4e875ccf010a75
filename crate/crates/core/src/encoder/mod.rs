//! Self-attentive encoder: word + sinusoidal position embeddings followed by
//! stacked self-attention / feed-forward layers, each sublayer wrapped as
//! `LayerNorm(x + Sublayer(x))`.

mod vocab;

pub use vocab::{
    normalize, tokenize, TokenId, TokenSequence, Vocab, BOS, EOS, MASK, NUM_RESERVED, PAD,
    RESERVED_TOKENS, UNK,
};

use crate::config::{ModelConfig, MAX_PERSONA_LEN};
use crate::error::{GdrError, Result};
use crate::numerics::init::{block_rng, xavier_matrix};
use crate::numerics::layers::{self, AttentionVars, FfnVars, NormVars};
use crate::numerics::{Graph, Mask, Matrix, ParameterStore, Scalar, Tensor, Var};

/// Concatenates persona sentences, appending EOS after each one.
pub fn unfold_persona(persona: &[Vec<TokenId>], max_len: usize) -> Result<Vec<TokenId>> {
    if persona.is_empty() {
        return Err(GdrError::Empty("persona list"));
    }
    let mut out = Vec::new();
    for sentence in persona {
        if sentence.is_empty() {
            return Err(GdrError::Empty("persona sentence"));
        }
        out.extend_from_slice(sentence);
        out.push(EOS);
    }
    if out.len() > max_len {
        return Err(GdrError::OutOfRange {
            what: "unfolded persona length",
            value: out.len(),
            limit: max_len,
        });
    }
    Ok(out)
}

/// [`unfold_persona`] with the default 128-token cap.
pub fn unfold(persona: &[Vec<TokenId>]) -> Result<Vec<TokenId>> {
    unfold_persona(persona, MAX_PERSONA_LEN)
}

/// `pe[t][2i] = sin(t / 10000^(2i/d))`, `pe[t][2i+1] = cos(...)`.
pub fn sinusoidal_positions<S: Scalar>(len: usize, hidden: usize) -> Matrix<S> {
    let mut m = Matrix::zeros(len, hidden);
    for t in 0..len {
        for i in (0..hidden).step_by(2) {
            let angle = t as f64 / 10000f64.powf(i as f64 / hidden as f64);
            m.set(t, i, S::of(angle.sin()));
            if i + 1 < hidden {
                m.set(t, i + 1, S::of(angle.cos()));
            }
        }
    }
    m
}

/// Names the parameters of one encoder instance.
#[derive(Debug, Clone, Copy)]
pub struct EncoderSpec<'a> {
    pub embedding: &'a str,
    pub prefix: &'a str,
    pub layers: usize,
}

pub const SHARED_EMBEDDING: &str = "shared.word_embedding";

/// Word embedding rows plus position embeddings.
pub fn embed<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    embedding: &str,
    ids: &[TokenId],
    max_positions: usize,
) -> Result<Var> {
    if ids.is_empty() {
        return Err(GdrError::Empty("embed"));
    }
    if ids.len() > max_positions {
        return Err(GdrError::OutOfRange {
            what: "sequence length",
            value: ids.len(),
            limit: max_positions,
        });
    }
    let table = g.param(store, embedding)?;
    let words = g.gather(table, ids)?;
    let hidden = g.value(table).cols();
    let pos = g.constant(sinusoidal_positions(ids.len(), hidden))?;
    g.add(words, pos)
}

pub struct EncodedSequence {
    pub output: Var,
    /// Per layer, per head self-attention weights.
    pub attention: Vec<Vec<Var>>,
    /// `false` at PAD positions; `None` when the input has no PAD.
    pub key_valid: Option<Vec<bool>>,
}

impl EncodedSequence {
    /// Mask letting `rows` queries see only the non-PAD positions.
    pub fn key_mask(&self, rows: usize) -> Option<Mask> {
        self.key_valid.as_ref().map(|v| Mask::keys(rows, v))
    }
}

/// Key mask hiding PAD positions, or `None` when there are none.
/// Non-PAD flags for `ids`, or `None` when there is no PAD.
pub fn key_validity(ids: &[TokenId]) -> Result<Option<Vec<bool>>> {
    if !ids.contains(&PAD) {
        return Ok(None);
    }
    let valid: Vec<bool> = ids.iter().map(|&id| id != PAD).collect();
    if !valid.iter().any(|&v| v) {
        return Err(GdrError::Invalid("sequence consists only of PAD".into()));
    }
    Ok(Some(valid))
}

pub fn encode<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    spec: EncoderSpec<'_>,
    ids: &[TokenId],
) -> Result<EncodedSequence> {
    if spec.layers == 0 {
        return Err(GdrError::Invalid("encoder needs at least one layer".into()));
    }
    let key_valid = key_validity(ids)?;
    let mask = key_valid.as_ref().map(|v| Mask::keys(ids.len(), v));
    let mut x = embed(g, store, spec.embedding, ids, cfg.max_positions)?;
    let mut attention = Vec::with_capacity(spec.layers);
    for l in 0..spec.layers {
        let p = format!("{}.layer{l}", spec.prefix);
        let attn = AttentionVars::load(g, store, &format!("{p}.self_attn"))?;
        let n1 = NormVars::load(g, store, &format!("{p}.norm1"))?;
        let ffn = FfnVars::load(g, store, &format!("{p}.ffn"))?;
        let n2 = NormVars::load(g, store, &format!("{p}.norm2"))?;
        let a = layers::attention(g, &attn, cfg.heads, x, x, x, mask.as_ref())?;
        let v = layers::residual_norm(g, &n1, x, a.output)?;
        let f = layers::feed_forward(g, &ffn, v)?;
        x = layers::residual_norm(g, &n2, v, f)?;
        attention.push(a.weights);
    }
    Ok(EncodedSequence {
        output: x,
        attention,
        key_valid,
    })
}

/// Value-level encoding (inference).
pub fn encode_sequence<S: Scalar>(
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    spec: EncoderSpec<'_>,
    ids: &[TokenId],
) -> Result<Matrix<S>> {
    let mut g = Graph::inference();
    let enc = encode(&mut g, store, cfg, spec, ids)?;
    Ok(g.value(enc.output).clone())
}

pub fn init_embedding<S: Scalar>(store: &mut ParameterStore<S>, name: &str, cfg: &ModelConfig, seed: u64) -> Result<()> {
    let mut rng = block_rng(seed, name);
    let m: Matrix<S> = xavier_matrix(cfg.vocab_size, cfg.hidden, &mut rng);
    store.insert(name, Tensor::from_matrix(&m))
}

pub fn init_encoder<S: Scalar>(
    store: &mut ParameterStore<S>,
    cfg: &ModelConfig,
    prefix: &str,
    layers_n: usize,
    seed: u64,
) -> Result<()> {
    for l in 0..layers_n {
        let p = format!("{prefix}.layer{l}");
        let mut rng = block_rng(seed, &p);
        layers::init_attention(store, &format!("{p}.self_attn"), cfg.hidden, &mut rng)?;
        layers::init_norm(store, &format!("{p}.norm1"), cfg.hidden)?;
        layers::init_ffn(store, &format!("{p}.ffn"), cfg.hidden, cfg.ffn_inner, &mut rng)?;
        layers::init_norm(store, &format!("{p}.norm2"), cfg.hidden)?;
    }
    Ok(())
}
