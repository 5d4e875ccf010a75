//! Training loops for the matcher and for the generator / rewriter pair,
//! the pipeline variants, and end-to-end inference traces.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, MAX_PERSONA_LEN, MAX_UTTERANCE_LEN};
use crate::data::{DialogueExample, NliExample};
use crate::encoder::{self, TokenId, Vocab, EOS, PAD};
use crate::error::{GdrError, Result};
use crate::generator::{self, GeneratorRuntime, Prototype};
use crate::matcher::{self, MaskedPrototype, MatchVerdict, NliLabel};
use crate::numerics::init::block_rng;
use crate::numerics::{adam_step, argmax, lr_schedule};
use crate::rewriter::{self, RewriterRuntime};
use crate::{AdamState, Graph, Matrix, ParameterStore};

/// Ablation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Generator only.
    G,
    /// Generate, then rewrite the unmasked prototype.
    Gr,
    /// Generate, random deletion, rewrite.
    Grdr,
    /// Generate, matcher-guided deletion, rewrite.
    Gdr,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::G, Variant::Gr, Variant::Grdr, Variant::Gdr];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::G => "g",
            Variant::Gr => "gr",
            Variant::Grdr => "grdr",
            Variant::Gdr => "gdr",
        }
    }

    pub fn has_rewriter(self) -> bool {
        self != Variant::G
    }

    pub fn needs_matcher(self) -> bool {
        self == Variant::Gdr
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = GdrError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| GdrError::Invalid(format!("unknown variant `{s}` (expected g, gr, grdr or gdr)")))
    }
}

/// What the matcher compares a prototype against when deciding deletions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchPremise {
    /// Each persona sentence on its own; any entailment wins, otherwise the
    /// most contradicted sentence supplies the verdict.
    #[default]
    Sentences,
    /// The whole unfolded persona as one premise.
    Persona,
}

impl FromStr for MatchPremise {
    type Err = GdrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentences" => Ok(Self::Sentences),
            "persona" => Ok(Self::Persona),
            _ => Err(GdrError::Invalid(format!("unknown match premise `{s}` (expected sentences or persona)"))),
        }
    }
}

/// Generator / rewriter training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub model: ModelConfig,
    pub variant: Variant,
    pub seed: u64,
    /// Persona + query + response tokens per batch.
    pub token_batch_size: usize,
    pub epochs: usize,
    pub max_steps: Option<u64>,
    /// Optimizer steps that use random deletion before the matcher takes over.
    pub warmup_steps: u64,
    /// Warm-up horizon of the learning-rate schedule.
    pub lr_warmup_steps: u64,
    /// Multiplier on the inverse-square-root schedule.
    pub lr_scale: f64,
    pub warmup_delete_prob: f64,
    pub delete_fraction: f64,
    /// Longest prototype / response produced by greedy decoding.
    pub max_decode_len: usize,
    pub match_premise: MatchPremise,
}

impl TrainingConfig {
    pub fn desk(model: ModelConfig, variant: Variant) -> Self {
        Self {
            model,
            variant,
            seed: 1,
            token_batch_size: 512,
            epochs: 10,
            max_steps: None,
            warmup_steps: 200,
            lr_warmup_steps: 200,
            // 1.0 diverges at desk width.
            lr_scale: 0.3,
            warmup_delete_prob: 0.10,
            delete_fraction: matcher::DELETE_FRACTION,
            max_decode_len: 20,
            match_premise: MatchPremise::Sentences,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(GdrError::Invalid(format!("{name} must be in [0, 1], got {p}")))
            }
        };
        prob("warmup_delete_prob", self.warmup_delete_prob)?;
        prob("delete_fraction", self.delete_fraction)?;
        if self.token_batch_size == 0 {
            return Err(GdrError::Invalid("token_batch_size must be positive".into()));
        }
        if self.max_decode_len == 0 || self.max_decode_len > self.model.max_positions {
            return Err(GdrError::Invalid("max_decode_len must be in 1..=max_positions".into()));
        }
        if !(self.lr_scale > 0.0 && self.lr_scale.is_finite()) {
            return Err(GdrError::Invalid("lr_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn decode_options(&self) -> DecodeOptions {
        DecodeOptions {
            max_len: self.max_decode_len,
            delete_prob: self.warmup_delete_prob,
            delete_fraction: self.delete_fraction,
            seed: self.seed,
            match_premise: self.match_premise,
        }
    }
}

/// Matcher training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherTrainingConfig {
    pub model: ModelConfig,
    pub seed: u64,
    /// Premise + hypothesis tokens per batch.
    pub token_batch_size: usize,
    pub epochs: usize,
    pub max_steps: Option<u64>,
    pub lr_warmup_steps: u64,
    pub lr_scale: f64,
}

impl MatcherTrainingConfig {
    pub fn desk(model: ModelConfig) -> Self {
        Self {
            model,
            seed: 1,
            token_batch_size: 512,
            // Held-out accuracy sits at chance for about ten epochs before
            // it climbs.
            epochs: 40,
            max_steps: None,
            lr_warmup_steps: 100,
            lr_scale: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.token_batch_size == 0 {
            return Err(GdrError::Invalid("token_batch_size must be positive".into()));
        }
        if !(self.lr_scale > 0.0 && self.lr_scale.is_finite()) {
            return Err(GdrError::Invalid("lr_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Token ids of one dialogue example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedDialogue {
    pub persona_sentences: Vec<Vec<TokenId>>,
    /// Sentences joined, each followed by EOS.
    pub persona: Vec<TokenId>,
    pub query: Vec<TokenId>,
    pub response: Vec<TokenId>,
}

impl PreparedDialogue {
    pub fn new(ex: &DialogueExample, vocab: &Vocab) -> Result<Self> {
        let persona_sentences: Vec<Vec<TokenId>> = ex.persona.iter().map(|s| vocab.encode(s)).collect();
        let persona = encoder::unfold_persona(&persona_sentences, MAX_PERSONA_LEN)?;
        let query = vocab.encode(&ex.query);
        let response = vocab.encode(&ex.response);
        for (what, seq) in [("query", &query), ("response", &response)] {
            if seq.is_empty() {
                return Err(GdrError::Invalid(format!("empty {what}")));
            }
            if seq.len() > MAX_UTTERANCE_LEN {
                return Err(GdrError::OutOfRange {
                    what: "utterance length",
                    value: seq.len(),
                    limit: MAX_UTTERANCE_LEN,
                });
            }
        }
        Ok(Self {
            persona_sentences,
            persona,
            query,
            response,
        })
    }

    pub fn tokens(&self) -> usize {
        self.persona.len() + self.query.len() + self.response.len()
    }
}

pub fn prepare_dialogues(data: &[DialogueExample], vocab: &Vocab) -> Result<Vec<PreparedDialogue>> {
    data.iter().map(|ex| PreparedDialogue::new(ex, vocab)).collect()
}

/// Matcher input ids: the unfolded premise and the hypothesis + EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedNli {
    pub premise: Vec<TokenId>,
    pub hypothesis: Vec<TokenId>,
    pub label: NliLabel,
}

impl PreparedNli {
    pub fn new(ex: &NliExample, vocab: &Vocab) -> Result<Self> {
        let sentences: Vec<Vec<TokenId>> = ex.premise.iter().map(|s| vocab.encode(s)).collect();
        Ok(Self {
            premise: encoder::unfold_persona(&sentences, MAX_PERSONA_LEN)?,
            hypothesis: hypothesis_ids(&vocab.encode(&ex.hypothesis))?,
            label: ex.label,
        })
    }
}

/// `ids` + EOS, the form the matcher sees responses in.
pub fn hypothesis_ids(ids: &[TokenId]) -> Result<Vec<TokenId>> {
    if ids.is_empty() {
        return Err(GdrError::Empty("hypothesis"));
    }
    let mut out = ids.to_vec();
    if out.last() != Some(&EOS) {
        out.push(EOS);
    }
    Ok(out)
}

pub fn prepare_nli(data: &[NliExample], vocab: &Vocab) -> Result<Vec<PreparedNli>> {
    data.iter().map(|ex| PreparedNli::new(ex, vocab)).collect()
}

/// Deterministic per-epoch permutation.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = block_rng(seed, &format!("epoch{epoch}"));
    order.shuffle(&mut rng);
    order
}

/// Greedily packs `order` into batches whose summed `sizes` stay within
/// `budget`; an item larger than the budget forms its own batch.
pub fn pack_batches(sizes: &[usize], order: &[usize], budget: usize) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    let mut cur = Vec::new();
    let mut used = 0;
    for &i in order {
        if !cur.is_empty() && used + sizes[i] > budget {
            batches.push(std::mem::take(&mut cur));
            used = 0;
        }
        cur.push(i);
        used += sizes[i];
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

/// Generator (and rewriter, unless the variant is G) parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GdrModel {
    pub cfg: ModelConfig,
    pub store: ParameterStore,
}

impl GdrModel {
    pub fn init(cfg: &ModelConfig, variant: Variant, seed: u64) -> Result<Self> {
        let mut store = ParameterStore::new();
        generator::init_generator(&mut store, cfg, seed)?;
        if variant.has_rewriter() {
            rewriter::init_rewriter(&mut store, cfg, seed)?;
        }
        Ok(Self {
            cfg: cfg.clone(),
            store,
        })
    }

    pub fn has_rewriter(&self) -> bool {
        self.store.has_prefix("rewriter.")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatcherModel {
    pub cfg: ModelConfig,
    pub store: ParameterStore,
}

impl MatcherModel {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParameterStore::new();
        matcher::init_matcher(&mut store, cfg, seed)?;
        Ok(Self {
            cfg: cfg.clone(),
            store,
        })
    }

    pub fn verdict(&self, premise: &[TokenId], hypothesis: &[TokenId]) -> Result<MatchVerdict> {
        matcher::match_pair(&self.store, &self.cfg, premise, hypothesis)
    }

    pub fn predict(&self, premise: &[TokenId], hypothesis: &[TokenId]) -> Result<NliLabel> {
        Ok(self.verdict(premise, hypothesis)?.label)
    }

    /// Verdict on `prototype` against a persona given as sentences.
    pub fn judge(&self, persona: &[Vec<TokenId>], prototype: &[TokenId], premise: MatchPremise) -> Result<MatchVerdict> {
        if premise == MatchPremise::Persona {
            return self.verdict(&encoder::unfold(persona)?, prototype);
        }
        let verdicts = persona
            .iter()
            .map(|s| self.verdict(&encoder::unfold(std::slice::from_ref(s))?, prototype))
            .collect::<Result<Vec<_>>>()?;
        let pick = |label: NliLabel| {
            verdicts
                .iter()
                .filter(|v| label != NliLabel::Entailment || v.label == label)
                .reduce(|best, v| if v.probs[label.index()] > best.probs[label.index()] { v } else { best })
        };
        pick(NliLabel::Entailment)
            .or_else(|| pick(NliLabel::Contradiction))
            .cloned()
            .ok_or(GdrError::Empty("persona"))
    }
}

/// Masks each position independently with probability `p`, drawing one
/// uniform number per position from `rng`.
pub fn random_delete<R: Rng>(ids: &[TokenId], p: f64, rng: &mut R) -> Result<MaskedPrototype> {
    if !(0.0..=1.0).contains(&p) {
        return Err(GdrError::Invalid(format!("deletion probability {p} outside [0, 1]")));
    }
    let positions: Vec<usize> = (0..ids.len()).filter(|_| rng.gen::<f64>() < p).collect();
    MaskedPrototype::new(ids, positions)
}

/// Source of prototype masks.
#[derive(Clone, Copy)]
pub enum Masker<'a> {
    Keep,
    Random(f64),
    Matcher(&'a MatcherModel, f64, MatchPremise),
}

impl Masker<'_> {
    pub fn phase(&self) -> &'static str {
        match self {
            Masker::Keep => "keep",
            Masker::Random(_) => "random",
            Masker::Matcher(..) => "matcher",
        }
    }

    pub fn apply<R: Rng>(
        &self,
        persona: &[Vec<TokenId>],
        prototype: &[TokenId],
        rng: &mut R,
    ) -> Result<(MaskedPrototype, Option<MatchVerdict>)> {
        match *self {
            Masker::Keep => Ok((MaskedPrototype::unmasked(prototype)?, None)),
            Masker::Random(p) => Ok((random_delete(prototype, p, rng)?, None)),
            Masker::Matcher(m, fraction, premise) => {
                let v = m.judge(persona, prototype, premise)?;
                Ok((matcher::mask_by_verdict_with(prototype, &v, fraction)?, Some(v)))
            }
        }
    }
}

/// Masking source at optimizer step `step` (1-based).
pub fn training_masker<'a>(cfg: &TrainingConfig, step: u64, matcher: Option<&'a MatcherModel>) -> Result<Masker<'a>> {
    Ok(match cfg.variant {
        Variant::G | Variant::Gr => Masker::Keep,
        Variant::Grdr => Masker::Random(cfg.warmup_delete_prob),
        Variant::Gdr if step <= cfg.warmup_steps => Masker::Random(cfg.warmup_delete_prob),
        Variant::Gdr => Masker::Matcher(
            matcher.ok_or_else(|| GdrError::Invalid("variant gdr needs a trained matcher".into()))?,
            cfg.delete_fraction,
            cfg.match_premise,
        ),
    })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub phase: String,
    pub loss_g: f64,
    pub loss_r: f64,
    pub loss: f64,
    pub lr: f64,
    pub tokens: usize,
}

pub struct TrainOutcome {
    pub model: GdrModel,
    pub log: Vec<StepLog>,
}

fn at_step(step: u64, e: GdrError) -> GdrError {
    match e {
        GdrError::NonFinite(m) => GdrError::NonFinite(format!("step {step}: {m}")),
        other => other,
    }
}

const MASK_STREAM: &str = "warmup-deletion";

/// Joint maximum-likelihood training of G (and R) starting from `init`.
/// `on_step` sees every log line, and the updated model, as it is produced.
pub fn train_gdr_from(
    init: GdrModel,
    data: &[PreparedDialogue],
    matcher: Option<&MatcherModel>,
    cfg: &TrainingConfig,
    mut on_step: impl FnMut(&StepLog, &GdrModel),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(GdrError::Empty("training dialogues"));
    }
    if cfg.variant.needs_matcher() && matcher.is_none() {
        return Err(GdrError::Invalid("variant gdr needs a trained matcher".into()));
    }
    if cfg.variant.has_rewriter() != init.has_rewriter() {
        return Err(GdrError::Invalid(format!(
            "model parameters do not match variant {}",
            cfg.variant
        )));
    }
    let mut model = init;
    let mcfg = cfg.model.clone();
    let mut adam = AdamState::new(0.0);
    let mut mask_rng = block_rng(cfg.seed, MASK_STREAM);
    let sizes: Vec<usize> = data.iter().map(PreparedDialogue::tokens).collect();
    let mut log = Vec::new();
    let mut step = 0u64;
    'outer: for epoch in 0..cfg.epochs {
        let order = epoch_order(data.len(), cfg.seed, epoch);
        for batch in pack_batches(&sizes, &order, cfg.token_batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'outer;
            }
            step += 1;
            let masker = training_masker(cfg, step, matcher)?;
            let tokens: usize = batch.iter().map(|&i| data[i].response.len() + 1).sum();
            let scale = 1.0 / tokens as f64;
            model.store.zero_grads();
            let gen_rt = if cfg.variant.has_rewriter() {
                Some(GeneratorRuntime::load(&model.store, &mcfg)?)
            } else {
                None
            };
            let (mut sum_g, mut sum_r) = (0.0, 0.0);
            for &i in &batch {
                let ex = &data[i];
                let (_, targets) = generator::shifted(&ex.response)?;
                let mut g = Graph::new();
                let (pe, qe) = generator::encode_inputs(&mut g, &model.store, &mcfg, &ex.persona, &ex.query)
                    .map_err(|e| at_step(step, e))?;
                let logits = generator::decode_logits(&mut g, &model.store, &mcfg, &pe, &qe, &ex.response)
                    .map_err(|e| at_step(step, e))?;
                let (nll_g, _) = g.cross_entropy_sum(logits, &targets, PAD)?;
                sum_g += g.scalar(nll_g);
                let mut total = nll_g;
                if let Some(rt) = &gen_rt {
                    // The prototype is decoded from values: nothing flows back
                    // through the discrete choice.
                    let proto = rt
                        .greedy(
                            g.value(pe.output),
                            pe.key_valid.as_deref(),
                            g.value(qe.output),
                            qe.key_valid.as_deref(),
                            cfg.max_decode_len,
                        )
                        .map_err(|e| at_step(step, e))?;
                    let (masked, _) = masker.apply(&ex.persona_sentences, proto.ids(), &mut mask_rng)?;
                    let me = rewriter::encode_masked_prototype(&mut g, &model.store, &mcfg, masked.ids())
                        .map_err(|e| at_step(step, e))?;
                    let rl = rewriter::decode_logits(&mut g, &model.store, &mcfg, &pe, &me, &ex.response)
                        .map_err(|e| at_step(step, e))?;
                    let (nll_r, _) = g.cross_entropy_sum(rl, &targets, PAD)?;
                    sum_r += g.scalar(nll_r);
                    total = g.add(nll_g, nll_r)?;
                }
                let grads = g.backward(total, scale).map_err(|e| at_step(step, e))?;
                g.write_param_grads(&grads, &mut model.store)?;
            }
            let lr = cfg.lr_scale * lr_schedule(step, cfg.lr_warmup_steps, mcfg.hidden)?;
            adam_step(&mut model.store, &mut adam, lr).map_err(|e| at_step(step, e))?;
            let (loss_g, loss_r) = (sum_g * scale, sum_r * scale);
            if !(loss_g + loss_r).is_finite() {
                return Err(GdrError::NonFinite(format!("step {step}: loss")));
            }
            let entry = StepLog {
                step,
                epoch,
                phase: if cfg.variant.has_rewriter() {
                    masker.phase().to_string()
                } else {
                    "generator".to_string()
                },
                loss_g,
                loss_r,
                loss: loss_g + loss_r,
                lr,
                tokens,
            };
            on_step(&entry, &model);
            log.push(entry);
        }
    }
    Ok(TrainOutcome { model, log })
}

/// [`train_gdr_from`] starting from a fresh initialization.
pub fn train_gdr(data: &[PreparedDialogue], matcher: Option<&MatcherModel>, cfg: &TrainingConfig) -> Result<TrainOutcome> {
    let init = GdrModel::init(&cfg.model, cfg.variant, cfg.seed)?;
    train_gdr_from(init, data, matcher, cfg, |_, _| {})
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherEpoch {
    pub epoch: usize,
    pub steps: u64,
    pub train_loss: f64,
    pub heldout_accuracy: Option<f64>,
}

pub struct MatcherOutcome {
    pub model: MatcherModel,
    pub epochs: Vec<MatcherEpoch>,
    pub log: Vec<StepLog>,
}

/// Fraction of examples whose predicted label matches.
pub fn matcher_accuracy(model: &MatcherModel, data: &[PreparedNli]) -> Result<f64> {
    if data.is_empty() {
        return Err(GdrError::Empty("matcher evaluation set"));
    }
    let mut hits = 0usize;
    for ex in data {
        if model.predict(&ex.premise, &ex.hypothesis)? == ex.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Cross-entropy training of the matcher on its own; reports held-out
/// accuracy after every epoch when `heldout` is given.
pub fn train_matcher(
    train: &[PreparedNli],
    heldout: Option<&[PreparedNli]>,
    cfg: &MatcherTrainingConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<MatcherOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(GdrError::Empty("NLI training data"));
    }
    for label in NliLabel::ALL {
        if !train.iter().any(|ex| ex.label == label) {
            return Err(GdrError::Invalid(format!("no `{label}` example in NLI training data")));
        }
    }
    let mut model = MatcherModel::init(&cfg.model, cfg.seed)?;
    let mut adam = AdamState::new(0.0);
    let sizes: Vec<usize> = train.iter().map(|ex| ex.premise.len() + ex.hypothesis.len()).collect();
    let mut epochs = Vec::new();
    let mut log = Vec::new();
    let mut step = 0u64;
    'outer: for epoch in 0..cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for batch in pack_batches(&sizes, &order, cfg.token_batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'outer;
            }
            step += 1;
            model.store.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in &batch {
                let ex = &train[i];
                let mut g = Graph::new();
                let loss = matcher::nli_loss(&mut g, &model.store, &model.cfg, &ex.premise, &ex.hypothesis, ex.label)
                    .map_err(|e| at_step(step, e))?;
                batch_loss += g.scalar(loss);
                let grads = g.backward(loss, scale).map_err(|e| at_step(step, e))?;
                g.write_param_grads(&grads, &mut model.store)?;
            }
            let lr = cfg.lr_scale * lr_schedule(step, cfg.lr_warmup_steps, cfg.model.hidden)?;
            adam_step(&mut model.store, &mut adam, lr).map_err(|e| at_step(step, e))?;
            loss_sum += batch_loss;
            count += batch.len();
            let entry = StepLog {
                step,
                epoch,
                phase: "matcher".into(),
                loss_g: 0.0,
                loss_r: 0.0,
                loss: batch_loss * scale,
                lr,
                tokens: batch.iter().map(|&i| sizes[i]).sum(),
            };
            on_step(&entry);
            log.push(entry);
        }
        let heldout_accuracy = heldout.map(|h| matcher_accuracy(&model, h)).transpose()?;
        epochs.push(MatcherEpoch {
            epoch,
            steps: step,
            train_loss: loss_sum / count.max(1) as f64,
            heldout_accuracy,
        });
    }
    Ok(MatcherOutcome { model, epochs, log })
}

/// Inference-time settings shared by `respond` and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub max_len: usize,
    /// Per-word probability used by the random-deletion variant.
    pub delete_prob: f64,
    pub delete_fraction: f64,
    /// Seeds the random-deletion variant (mixed with the inputs).
    pub seed: u64,
    pub match_premise: MatchPremise,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            max_len: 20,
            delete_prob: 0.10,
            delete_fraction: matcher::DELETE_FRACTION,
            seed: 1,
            match_premise: MatchPremise::Sentences,
        }
    }
}

/// Record of one pass through the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineTrace {
    pub prototype: Prototype,
    pub verdict: Option<MatchVerdict>,
    pub masked: Option<MaskedPrototype>,
    /// Final response ids, including the terminating EOS if one was produced.
    pub final_ids: Vec<TokenId>,
}

impl PipelineTrace {
    /// Final ids without the terminating EOS.
    pub fn final_content(&self) -> &[TokenId] {
        match self.final_ids.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.final_ids,
        }
    }
}

/// Frozen models for repeated inference.
pub struct Responder<'a> {
    model: &'a GdrModel,
    matcher: Option<&'a MatcherModel>,
    variant: Variant,
    opts: DecodeOptions,
    generator: GeneratorRuntime<f64>,
    rewriter: Option<RewriterRuntime<f64>>,
}

impl<'a> Responder<'a> {
    pub fn new(
        model: &'a GdrModel,
        matcher: Option<&'a MatcherModel>,
        variant: Variant,
        opts: DecodeOptions,
    ) -> Result<Self> {
        if variant.has_rewriter() && !model.has_rewriter() {
            return Err(GdrError::MissingParam(format!(
                "variant {variant} needs rewriter parameters"
            )));
        }
        if variant.needs_matcher() && matcher.is_none() {
            return Err(GdrError::MissingParam("variant gdr needs matcher parameters".into()));
        }
        if opts.max_len == 0 || opts.max_len > model.cfg.max_positions {
            return Err(GdrError::Invalid("max decode length out of range".into()));
        }
        let rewriter = if variant.has_rewriter() {
            Some(RewriterRuntime::load(&model.store, &model.cfg)?)
        } else {
            None
        };
        Ok(Self {
            model,
            matcher,
            variant,
            generator: GeneratorRuntime::load(&model.store, &model.cfg)?,
            rewriter,
            opts,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn model(&self) -> &GdrModel {
        self.model
    }

    fn encode(&self, g: &mut Graph, persona: &[TokenId], query: &[TokenId]) -> Result<(Matrix, Option<Vec<bool>>, Matrix, Option<Vec<bool>>)> {
        let (p, q) = generator::encode_inputs(g, &self.model.store, &self.model.cfg, persona, query)?;
        Ok((g.value(p.output).clone(), p.key_valid, g.value(q.output).clone(), q.key_valid))
    }

    /// Prototype plus the deletion step, without rewriting.
    pub fn condition(
        &self,
        sentences: &[Vec<TokenId>],
        query: &[TokenId],
    ) -> Result<(Prototype, Option<MatchVerdict>, Option<MaskedPrototype>)> {
        let persona = encoder::unfold(sentences)?;
        let mut g = Graph::inference();
        let (pm, pv, qm, qv) = self.encode(&mut g, &persona, query)?;
        let proto = self
            .generator
            .greedy(&pm, pv.as_deref(), &qm, qv.as_deref(), self.opts.max_len)?;
        let (masked, verdict) = match self.variant {
            Variant::G => return Ok((proto, None, None)),
            Variant::Gr => Masker::Keep.apply(sentences, proto.ids(), &mut rand::rngs::mock::StepRng::new(0, 0))?,
            Variant::Grdr => {
                let key: Vec<TokenId> = persona.iter().chain([&PAD]).chain(query).copied().collect();
                let mut rng: ChaCha8Rng = block_rng(self.opts.seed, &format!("{key:?}"));
                Masker::Random(self.opts.delete_prob).apply(sentences, proto.ids(), &mut rng)?
            }
            Variant::Gdr => Masker::Matcher(
                self.matcher.expect("checked in new"),
                self.opts.delete_fraction,
                self.opts.match_premise,
            )
            .apply(sentences, proto.ids(), &mut rand::rngs::mock::StepRng::new(0, 0))?,
        };
        Ok((proto, verdict, Some(masked)))
    }

    /// Generate, then delete and rewrite as the variant prescribes.
    pub fn respond(&self, sentences: &[Vec<TokenId>], query: &[TokenId]) -> Result<PipelineTrace> {
        let (prototype, verdict, masked) = self.condition(sentences, query)?;
        let final_ids = match (&masked, &self.rewriter) {
            (Some(m), Some(rw)) => {
                let mut g = Graph::inference();
                let spec = generator::encoder_spec(&self.model.cfg);
                let p = encoder::encode(&mut g, &self.model.store, &self.model.cfg, spec, &encoder::unfold(sentences)?)?;
                let me = rewriter::encode_masked_prototype(&mut g, &self.model.store, &self.model.cfg, m.ids())?;
                rw.greedy(
                    g.value(p.output),
                    p.key_valid.as_deref(),
                    g.value(me.output),
                    me.key_valid.as_deref(),
                    self.opts.max_len,
                )?
                .into_ids()
            }
            _ => prototype.ids().to_vec(),
        };
        Ok(PipelineTrace {
            prototype,
            verdict,
            masked,
            final_ids,
        })
    }
}

/// One-shot [`Responder::respond`].
pub fn respond(
    model: &GdrModel,
    matcher: Option<&MatcherModel>,
    variant: Variant,
    persona: &[Vec<TokenId>],
    query: &[TokenId],
    opts: &DecodeOptions,
) -> Result<PipelineTrace> {
    Responder::new(model, matcher, variant, opts.clone())?.respond(persona, query)
}

/// Index of the most probable label, lowest index on ties.
pub fn label_of(probs: &[f64; 3]) -> NliLabel {
    NliLabel::from_index(argmax(probs).expect("three entries")).expect("index below 3")
}
