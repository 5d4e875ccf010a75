//! Automatic metrics: perplexity, corpus-level distinct-n and the
//! matcher-based entailment ratio.

use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::encoder::{self, TokenId, Vocab, PAD};
use crate::error::{GdrError, Result};
use crate::generator;
use crate::matcher::NliLabel;
use crate::pipeline::{hypothesis_ids, MatcherModel, PipelineTrace, PreparedDialogue, Responder, Variant};
use crate::rewriter;
use crate::Graph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub ppl: f64,
    pub dist1: f64,
    pub dist2: f64,
    pub entailment_ratio: f64,
    pub examples: usize,
    /// Gold target tokens scored by the perplexity.
    pub tokens: usize,
}

/// Summed gold-response NLL under the last decoder of the responder's
/// variant, and the number of scored tokens.
pub fn gold_nll(responder: &Responder<'_>, ex: &PreparedDialogue) -> Result<(f64, usize)> {
    let model = responder.model();
    let (_, targets) = generator::shifted(&ex.response)?;
    let mut g = Graph::inference();
    let logits = match responder.variant() {
        Variant::G => generator::teacher_forced_logits(&mut g, &model.store, &model.cfg, &ex.persona, &ex.query, &ex.response)?,
        _ => {
            let (_, _, masked) = responder.condition(&ex.persona_sentences, &ex.query)?;
            let masked = masked.expect("rewriting variants mask");
            let spec = generator::encoder_spec(&model.cfg);
            let p = encoder::encode(&mut g, &model.store, &model.cfg, spec, &ex.persona)?;
            let m = rewriter::encode_masked_prototype(&mut g, &model.store, &model.cfg, masked.ids())?;
            rewriter::decode_logits(&mut g, &model.store, &model.cfg, &p, &m, &ex.response)?
        }
    };
    let (nll, count) = g.cross_entropy_sum(logits, &targets, PAD)?;
    Ok((g.scalar(nll), count))
}

/// exp of the mean per-token NLL over `data`.
pub fn perplexity(responder: &Responder<'_>, data: &[PreparedDialogue]) -> Result<(f64, usize)> {
    if data.is_empty() {
        return Err(GdrError::Empty("evaluation dialogues"));
    }
    let (mut total, mut tokens) = (0.0, 0usize);
    for ex in data {
        let (nll, n) = gold_nll(responder, ex)?;
        total += nll;
        tokens += n;
    }
    let ppl = (total / tokens as f64).exp();
    if !ppl.is_finite() {
        return Err(GdrError::NonFinite("perplexity".into()));
    }
    Ok((ppl, tokens))
}

/// Distinct n-grams over all n-gram occurrences, pooled across responses.
pub fn distinct_n<T: Hash + Eq>(responses: &[Vec<T>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(GdrError::Invalid("distinct_n: n must be positive".into()));
    }
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for r in responses.iter().filter(|r| r.len() >= n) {
        for w in r.windows(n) {
            seen.insert(w);
            total += 1;
        }
    }
    if total == 0 {
        return Err(GdrError::Empty("responses long enough for distinct-n"));
    }
    Ok(seen.len() as f64 / total as f64)
}

/// Whether some single persona sentence entails `response` (ids without EOS).
pub fn entailed(matcher: &MatcherModel, persona_sentences: &[Vec<TokenId>], response: &[TokenId]) -> Result<bool> {
    if response.is_empty() {
        return Ok(false);
    }
    let hyp = hypothesis_ids(response)?;
    for s in persona_sentences {
        let premise = encoder::unfold(std::slice::from_ref(s))?;
        if matcher.predict(&premise, &hyp)? == NliLabel::Entailment {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Share of (persona sentences, response) pairs judged entailed.
pub fn entailment_ratio(matcher: &MatcherModel, pairs: &[(&[Vec<TokenId>], &[TokenId])]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(GdrError::Empty("entailment pairs"));
    }
    let mut hits = 0usize;
    for (persona, response) in pairs {
        if entailed(matcher, persona, response)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

/// Generates a response for every example, then scores the lot.
pub fn evaluate(
    responder: &Responder<'_>,
    matcher: &MatcherModel,
    data: &[PreparedDialogue],
) -> Result<(EvalReport, Vec<PipelineTrace>)> {
    let (ppl, tokens) = perplexity(responder, data)?;
    let traces = data
        .iter()
        .map(|ex| responder.respond(&ex.persona_sentences, &ex.query))
        .collect::<Result<Vec<_>>>()?;
    let responses: Vec<Vec<TokenId>> = traces.iter().map(|t| t.final_content().to_vec()).collect();
    let pairs: Vec<(&[Vec<TokenId>], &[TokenId])> = data
        .iter()
        .zip(&responses)
        .map(|(ex, r)| (ex.persona_sentences.as_slice(), r.as_slice()))
        .collect();
    let report = EvalReport {
        variant: responder.variant(),
        ppl,
        dist1: distinct_n(&responses, 1)?,
        dist2: distinct_n(&responses, 2)?,
        entailment_ratio: entailment_ratio(matcher, &pairs)?,
        examples: data.len(),
        tokens,
    };
    Ok((report, traces))
}

/// One line of the responses dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub query: String,
    pub prototype: String,
    pub masked: Option<String>,
    #[serde(rename = "final")]
    pub final_response: String,
}

impl ResponseRecord {
    pub fn new(vocab: &Vocab, query: &[TokenId], trace: &PipelineTrace) -> Self {
        Self {
            query: vocab.decode(query),
            prototype: vocab.decode(trace.prototype.content()),
            masked: trace.masked.as_ref().map(|m| vocab.decode(m.ids())),
            final_response: vocab.decode(trace.final_content()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::data::{make_synthetic, SyntheticSpec};
    use crate::numerics::Tensor;
    use crate::pipeline::{prepare_dialogues, DecodeOptions, GdrModel};
    use proptest::prelude::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn distinct_examples() {
        let r = vec![words("i like cats like cats")];
        assert_eq!(distinct_n(&r, 1).unwrap(), 0.6);
        assert_eq!(distinct_n(&r, 2).unwrap(), 0.75);
        let same = vec![words("a b c d e"); 100];
        assert!((distinct_n(&same, 1).unwrap() - 0.01).abs() < 1e-15);
        assert!(distinct_n(&[words("a")], 2).is_err());
        assert!(distinct_n::<String>(&[], 1).is_err());
    }

    proptest! {
        #[test]
        fn distinct_bounded_and_order_free(
            rs in prop::collection::vec(prop::collection::vec(0usize..6, 0..7), 1..8),
            n in 1usize..3,
        ) {
            if let Ok(d) = distinct_n(&rs, n) {
                prop_assert!(d > 0.0 && d <= 1.0);
                let mut rev = rs.clone();
                rev.reverse();
                prop_assert_eq!(distinct_n(&rev, n).unwrap(), d);
            } else {
                prop_assert!(rs.iter().all(|r| r.len() < n));
            }
        }
    }

    fn forced(cfg: &ModelConfig, label: NliLabel) -> MatcherModel {
        let mut m = MatcherModel::init(cfg, 3).unwrap();
        m.store.get_mut("matcher.mlp.w3").unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut b = vec![0.0; 3];
        b[label.index()] = 5.0;
        *m.store.get_mut("matcher.mlp.b3").unwrap() = Tensor::new(vec![3], b).unwrap();
        m
    }

    #[test]
    fn forced_matchers_give_extreme_ratios() {
        let cfg = ModelConfig::tiny(30);
        let persona = vec![vec![7, 8], vec![9]];
        let pairs: Vec<(&[Vec<TokenId>], &[TokenId])> = vec![(&persona, &[10, 11]), (&persona, &[12])];
        assert_eq!(entailment_ratio(&forced(&cfg, NliLabel::Entailment), &pairs).unwrap(), 1.0);
        assert_eq!(entailment_ratio(&forced(&cfg, NliLabel::Neutral), &pairs).unwrap(), 0.0);
        assert!(entailment_ratio(&forced(&cfg, NliLabel::Neutral), &[]).is_err());
    }

    #[test]
    fn uniform_generator_has_vocab_perplexity() {
        let c = make_synthetic(&SyntheticSpec {
            train_dialogues: 6,
            valid_dialogues: 2,
            test_dialogues: 2,
            nli_train: 3,
            nli_test: 3,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let v = c.vocab().unwrap();
        let d = prepare_dialogues(&c.test, &v).unwrap();
        let cfg = ModelConfig::tiny(v.len());
        let mut model = GdrModel::init(&cfg, Variant::Gr, 1).unwrap();
        for name in ["generator.output.w", "generator.output.b", "rewriter.output.w", "rewriter.output.b"] {
            model.store.get_mut(name).unwrap().data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let opts = DecodeOptions { max_len: 6, ..DecodeOptions::default() };
        for variant in [Variant::G, Variant::Gr] {
            let r = Responder::new(&model, None, variant, opts.clone()).unwrap();
            let (ppl, tokens) = perplexity(&r, &d).unwrap();
            assert!((ppl - v.len() as f64).abs() < 1e-9, "{ppl}");
            assert_eq!(tokens, d.iter().map(|e| e.response.len() + 1).sum::<usize>());
            let twice: Vec<PreparedDialogue> = d.iter().chain(&d).cloned().collect();
            assert_eq!(perplexity(&r, &twice).unwrap().0, ppl);
        }
        let r = Responder::new(&model, None, Variant::G, opts).unwrap();
        assert!(perplexity(&r, &[]).is_err());
    }

    #[test]
    fn perplexity_is_exp_of_mean_nll() {
        let c = make_synthetic(&SyntheticSpec {
            train_dialogues: 4,
            valid_dialogues: 2,
            test_dialogues: 3,
            nli_train: 3,
            nli_test: 3,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let v = c.vocab().unwrap();
        let d = prepare_dialogues(&c.test, &v).unwrap();
        let model = GdrModel::init(&ModelConfig::tiny(v.len()), Variant::G, 2).unwrap();
        let r = Responder::new(&model, None, Variant::G, DecodeOptions::default()).unwrap();
        let mut sum = 0.0;
        let mut n = 0;
        for ex in &d {
            let mut g = Graph::new();
            let (loss, count) = generator::generator_loss(&mut g, &model.store, &model.cfg, &ex.persona, &ex.query, &ex.response).unwrap();
            sum += g.scalar(loss);
            n += count;
        }
        let (ppl, _) = perplexity(&r, &d).unwrap();
        assert!((ppl - (sum / n as f64).exp()).abs() < 1e-9 * ppl);
    }

    #[test]
    fn evaluation_is_repeatable() {
        let c = make_synthetic(&SyntheticSpec {
            train_dialogues: 4,
            valid_dialogues: 2,
            test_dialogues: 5,
            nli_train: 3,
            nli_test: 3,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let v = c.vocab().unwrap();
        let d = prepare_dialogues(&c.test, &v).unwrap();
        let cfg = ModelConfig::tiny(v.len());
        let model = GdrModel::init(&cfg, Variant::Gdr, 2).unwrap();
        let m = forced(&cfg, NliLabel::Contradiction);
        let r = Responder::new(&model, Some(&m), Variant::Gdr, DecodeOptions { max_len: 8, ..DecodeOptions::default() }).unwrap();
        match evaluate(&r, &m, &d) {
            Ok((a, traces)) => {
                let (b, _) = evaluate(&r, &m, &d).unwrap();
                assert_eq!(a, b);
                assert!(a.ppl >= 1.0 && (0.0..=1.0).contains(&a.entailment_ratio));
                assert!(a.dist1 > 0.0 && a.dist1 <= 1.0 && a.dist2 > 0.0 && a.dist2 <= 1.0);
                assert_eq!(traces.len(), d.len());
                let rec = ResponseRecord::new(&v, &d[0].query, &traces[0]);
                let json = serde_json::to_string(&rec).unwrap();
                assert!(json.contains("\"final\""));
            }
            // An untrained model may stop immediately everywhere.
            Err(GdrError::Empty(_)) => {}
            Err(e) => panic!("{e}"),
        }
    }
}
