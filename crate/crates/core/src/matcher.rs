//! Consistency matcher: classifies a (persona, response) pair into
//! entailment / neutral / contradiction and masks the response words the
//! persona summary attends to most.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::encoder::{self, EncodedSequence, EncoderSpec, TokenId, MASK};
use crate::error::{GdrError, Result};
use crate::generator::Prototype;
use crate::numerics::init::block_rng;
use crate::numerics::layers;
use crate::numerics::{argmax, Graph, ParameterStore, Scalar, Var};

pub const PREFIX: &str = "matcher";
pub const EMBEDDING: &str = "matcher.word_embedding";
pub const ENCODER_PREFIX: &str = "matcher.encoder";
pub const DELETE_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment = 0,
    Neutral = 1,
    Contradiction = 2,
}

impl NliLabel {
    pub const ALL: [NliLabel; 3] = [NliLabel::Entailment, NliLabel::Neutral, NliLabel::Contradiction];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(GdrError::OutOfRange {
            what: "label index",
            value: i,
            limit: 3,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NliLabel::Entailment => "entailment",
            NliLabel::Neutral => "neutral",
            NliLabel::Contradiction => "contradiction",
        }
    }
}

impl fmt::Display for NliLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NliLabel {
    type Err = GdrError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| GdrError::Invalid(format!("unknown label `{s}`")))
    }
}

pub fn encoder_spec(cfg: &ModelConfig) -> EncoderSpec<'static> {
    EncoderSpec {
        embedding: EMBEDDING,
        prefix: ENCODER_PREFIX,
        layers: cfg.matcher_layers,
    }
}

/// Own embedding table and encoder, plus the 4h → M → M → 3 classifier.
pub fn init_matcher<S: Scalar>(store: &mut ParameterStore<S>, cfg: &ModelConfig, seed: u64) -> Result<()> {
    cfg.validate()?;
    encoder::init_embedding(store, EMBEDDING, cfg, seed)?;
    encoder::init_encoder(store, cfg, ENCODER_PREFIX, cfg.matcher_layers, seed)?;
    let mut rng = block_rng(seed, "matcher.mlp");
    let m = cfg.matcher_mlp_hidden;
    for (i, (fan_in, fan_out)) in [(4 * cfg.hidden, m), (m, m), (m, 3)].into_iter().enumerate() {
        layers::init_linear(
            store,
            format!("matcher.mlp.w{}", i + 1),
            format!("matcher.mlp.b{}", i + 1),
            fan_in,
            fan_out,
            &mut rng,
        )?;
    }
    Ok(())
}

/// Both sides through the same matcher encoder.
pub fn encode_pair<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    premise: &[TokenId],
    hypothesis: &[TokenId],
) -> Result<(EncodedSequence, EncodedSequence)> {
    let spec = encoder_spec(cfg);
    let a = encoder::encode(g, store, cfg, spec, premise)?;
    let b = encoder::encode(g, store, cfg, spec, hypothesis)?;
    Ok((a, b))
}

pub struct Pooled {
    /// Premise summary, `1 × h`.
    pub premise_summary: Var,
    pub response_summary: Var,
    /// `1 × n` weights of the response summary over premise rows.
    pub premise_weights: Var,
    /// `1 × m` weights of the premise summary over response rows.
    pub response_weights: Var,
    pub premise_pooled: Var,
    pub response_pooled: Var,
}

/// Each side's mean summary attends over the other side's rows; the
/// softmax-normalized weights pool those rows into one vector.
pub fn attentive_pool<S: Scalar>(
    g: &mut Graph<S>,
    premise: &EncodedSequence,
    response: &EncodedSequence,
) -> Result<Pooled> {
    let (a, b) = (premise.output, response.output);
    if g.value(a).cols() != g.value(b).cols() {
        return Err(GdrError::shape("attentive_pool", "hidden sizes differ"));
    }
    let a0 = g.mean_rows(a, premise.key_valid.as_deref())?;
    let b0 = g.mean_rows(b, response.key_valid.as_deref())?;
    let sb = g.matmul_bt(a0, b)?;
    let wb = g.softmax_rows(sb, response.key_mask(1).as_ref())?;
    let bt = g.matmul(wb, b)?;
    let sa = g.matmul_bt(b0, a)?;
    let wa = g.softmax_rows(sa, premise.key_mask(1).as_ref())?;
    let at = g.matmul(wa, a)?;
    Ok(Pooled {
        premise_summary: a0,
        response_summary: b0,
        premise_weights: wa,
        response_weights: wb,
        premise_pooled: at,
        response_pooled: bt,
    })
}

/// `[a ; b ; a∘b ; a−b]`
pub fn match_features<S: Scalar>(g: &mut Graph<S>, a: Var, b: Var) -> Result<Var> {
    if g.value(a).shape() != g.value(b).shape() {
        return Err(GdrError::shape(
            "match_features",
            format!("{:?} vs {:?}", g.value(a).shape(), g.value(b).shape()),
        ));
    }
    let prod = g.mul(a, b)?;
    let diff = g.sub(a, b)?;
    g.concat_cols(&[a, b, prod, diff])
}

/// Three linear layers with tanh in between; returns `1 × 3` logits.
pub fn classifier_logits<S: Scalar>(g: &mut Graph<S>, store: &ParameterStore<S>, features: Var) -> Result<Var> {
    let mut x = features;
    for i in 1..=3 {
        let w = g.param(store, &format!("matcher.mlp.w{i}"))?;
        let b = g.param(store, &format!("matcher.mlp.b{i}"))?;
        if g.value(x).cols() != g.value(w).rows() {
            return Err(GdrError::shape(
                "classify",
                format!("features {} wide, layer {i} expects {}", g.value(x).cols(), g.value(w).rows()),
            ));
        }
        x = layers::linear(g, w, b, x)?;
        if i < 3 {
            x = g.tanh(x)?;
        }
    }
    Ok(x)
}

pub fn classify<S: Scalar>(g: &mut Graph<S>, store: &ParameterStore<S>, features: Var) -> Result<Var> {
    let logits = classifier_logits(g, store, features)?;
    g.softmax_rows(logits, None)
}

pub struct MatchGraph {
    pub logits: Var,
    pub pooled: Pooled,
}

/// Full forward pass: encode, pool, featurize, classify.
pub fn forward<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    premise: &[TokenId],
    hypothesis: &[TokenId],
) -> Result<MatchGraph> {
    let (a, b) = encode_pair(g, store, cfg, premise, hypothesis)?;
    let pooled = attentive_pool(g, &a, &b)?;
    let f = match_features(g, pooled.premise_pooled, pooled.response_pooled)?;
    let logits = classifier_logits(g, store, f)?;
    Ok(MatchGraph { logits, pooled })
}

/// Cross-entropy of one labelled pair, as a `1 × 1` node.
pub fn nli_loss<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    premise: &[TokenId],
    hypothesis: &[TokenId],
    label: NliLabel,
) -> Result<Var> {
    let out = forward(g, store, cfg, premise, hypothesis)?;
    // Target index 3 never occurs, so nothing is treated as padding.
    let (loss, _) = g.cross_entropy_sum(out.logits, &[label.index()], 3)?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchVerdict {
    /// Over (entailment, neutral, contradiction).
    pub probs: [f64; 3],
    pub label: NliLabel,
    /// One weight per hypothesis position (0 at PAD).
    pub response_weights: Vec<f64>,
    /// One weight per premise position (0 at PAD).
    pub persona_weights: Vec<f64>,
}

/// Deterministic verdict for a premise / hypothesis pair.
pub fn match_pair<S: Scalar>(
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    premise: &[TokenId],
    hypothesis: &[TokenId],
) -> Result<MatchVerdict> {
    let mut g = Graph::inference();
    let out = forward(&mut g, store, cfg, premise, hypothesis)?;
    let probs = g.softmax_rows(out.logits, None)?;
    let p = g.value(probs).data();
    let probs = [p[0].as_f64(), p[1].as_f64(), p[2].as_f64()];
    let label = NliLabel::from_index(argmax(&probs).expect("three entries"))?;
    let to_vec = |v: Var| g.value(v).data().iter().map(|x| x.as_f64()).collect();
    Ok(MatchVerdict {
        probs,
        label,
        response_weights: to_vec(out.pooled.response_weights),
        persona_weights: to_vec(out.pooled.premise_weights),
    })
}

/// Prototype with some positions replaced by MASK.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MaskedPrototype {
    ids: Vec<TokenId>,
    masked_positions: Vec<usize>,
}

impl MaskedPrototype {
    /// Masks `positions` of `original`.
    pub fn new(original: &[TokenId], positions: impl IntoIterator<Item = usize>) -> Result<Self> {
        if original.is_empty() {
            return Err(GdrError::Empty("prototype"));
        }
        let mut masked_positions: Vec<usize> = positions.into_iter().collect();
        masked_positions.sort_unstable();
        masked_positions.dedup();
        let mut ids = original.to_vec();
        for &p in &masked_positions {
            let slot = ids.get_mut(p).ok_or(GdrError::OutOfRange {
                what: "mask position",
                value: p,
                limit: original.len(),
            })?;
            *slot = MASK;
        }
        Ok(Self { ids, masked_positions })
    }

    pub fn unmasked(original: &[TokenId]) -> Result<Self> {
        Self::new(original, [])
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    /// Sorted, distinct.
    pub fn masked_positions(&self) -> &[usize] {
        &self.masked_positions
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// `0` for entailment, otherwise `max(1, floor(0.1·m))`.
pub fn deletion_count(m: usize, label: NliLabel) -> usize {
    deletion_count_with(m, label, DELETE_FRACTION)
}

/// [`deletion_count`] with a configurable fraction.
pub fn deletion_count_with(m: usize, label: NliLabel, fraction: f64) -> usize {
    match label {
        NliLabel::Entailment => 0,
        _ => ((m as f64 * fraction).floor() as usize).clamp(1, m),
    }
}

/// Indices of the `d` largest weights; earlier positions win ties.
pub fn top_positions(weights: &[f64], d: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&i, &j| weights[j].total_cmp(&weights[i]).then(i.cmp(&j)));
    order.truncate(d);
    order.sort_unstable();
    order
}

/// Masks the most attended prototype words unless the verdict is
/// entailment.
pub fn delete_words(prototype: &Prototype, verdict: &MatchVerdict) -> Result<MaskedPrototype> {
    mask_by_verdict(prototype.ids(), verdict)
}

pub fn mask_by_verdict(ids: &[TokenId], verdict: &MatchVerdict) -> Result<MaskedPrototype> {
    mask_by_verdict_with(ids, verdict, DELETE_FRACTION)
}

pub fn mask_by_verdict_with(ids: &[TokenId], verdict: &MatchVerdict, fraction: f64) -> Result<MaskedPrototype> {
    if ids.is_empty() {
        return Err(GdrError::Empty("prototype"));
    }
    if verdict.response_weights.len() != ids.len() {
        return Err(GdrError::shape(
            "delete_words",
            format!("{} weights for {} tokens", verdict.response_weights.len(), ids.len()),
        ));
    }
    let d = deletion_count_with(ids.len(), verdict.label, fraction);
    MaskedPrototype::new(ids, top_positions(&verdict.response_weights, d))
}
