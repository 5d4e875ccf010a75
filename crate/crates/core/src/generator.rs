//! Prototype generator: persona and query encodings feed a decoder whose
//! layers attend to the persona, to the query, and from the persona view
//! over the query view, before averaging the three.

use crate::config::ModelConfig;
use crate::decoding::{self, Attention, Ffn, KvCache, Linear, Norm};
use crate::encoder::{
    self, EncodedSequence, EncoderSpec, TokenId, TokenSequence, BOS, EOS, SHARED_EMBEDDING,
};
use crate::error::{GdrError, Result};
use crate::numerics::init::block_rng;
use crate::numerics::layers::{self, AttentionVars, FfnVars, NormVars};
use crate::numerics::{Graph, Mask, Matrix, ParameterStore, Scalar, Var};

pub const PREFIX: &str = "generator";
pub const ENCODER_PREFIX: &str = "generator.encoder";
pub const OUTPUT_W: &str = "generator.output.w";
pub const OUTPUT_B: &str = "generator.output.b";

/// The generator's encoder; the rewriter reuses it.
pub fn encoder_spec(cfg: &ModelConfig) -> EncoderSpec<'static> {
    EncoderSpec {
        embedding: SHARED_EMBEDDING,
        prefix: ENCODER_PREFIX,
        layers: cfg.generator_layers,
    }
}

fn layer_prefix(layer: usize) -> String {
    format!("generator.decoder.layer{layer}")
}

/// Creates the shared embedding (if absent), encoder, decoder and output
/// projection.
pub fn init_generator<S: Scalar>(store: &mut ParameterStore<S>, cfg: &ModelConfig, seed: u64) -> Result<()> {
    cfg.validate()?;
    if !store.contains(SHARED_EMBEDDING) {
        encoder::init_embedding(store, SHARED_EMBEDDING, cfg, seed)?;
    }
    encoder::init_encoder(store, cfg, ENCODER_PREFIX, cfg.generator_layers, seed)?;
    for l in 0..cfg.generator_layers {
        let p = layer_prefix(l);
        let mut rng = block_rng(seed, &p);
        for (attn, norm) in [
            ("self_attn", "norm_self"),
            ("persona_attn", "norm_persona"),
            ("query_attn", "norm_query"),
            ("pq_attn", "norm_pq"),
        ] {
            layers::init_attention(store, &format!("{p}.{attn}"), cfg.hidden, &mut rng)?;
            layers::init_norm(store, &format!("{p}.{norm}"), cfg.hidden)?;
        }
        layers::init_ffn(store, &format!("{p}.ffn"), cfg.hidden, cfg.ffn_inner, &mut rng)?;
        layers::init_norm(store, &format!("{p}.norm_ffn"), cfg.hidden)?;
    }
    let mut rng = block_rng(seed, "generator.output");
    layers::init_linear(
        store,
        OUTPUT_W.into(),
        OUTPUT_B.into(),
        cfg.hidden,
        cfg.vocab_size,
        &mut rng,
    )
}

/// Per-layer intermediate results, kept for inspection.
pub struct DecoderLayerOutput {
    pub self_out: Var,
    pub persona_out: Var,
    pub query_out: Var,
    pub pq_out: Var,
    pub output: Var,
}

/// One decoder layer. `causal` must be the `t × t` lower-triangular mask for
/// the `t` rows of `y`.
pub fn decoder_layer<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    layer: usize,
    y: Var,
    persona: &EncodedSequence,
    query: &EncodedSequence,
    causal: &Mask,
) -> Result<DecoderLayerOutput> {
    let p = layer_prefix(layer);
    let rows = g.value(y).rows();
    if causal.shape() != (rows, rows) {
        return Err(GdrError::shape(
            "decoder_layer",
            format!("causal mask {:?} for {rows} rows", causal.shape()),
        ));
    }
    let load_attn = |g: &mut Graph<S>, n: &str| AttentionVars::load(g, store, &format!("{p}.{n}"));
    let load_norm = |g: &mut Graph<S>, n: &str| NormVars::load(g, store, &format!("{p}.{n}"));
    let h = cfg.heads;

    let a = load_attn(g, "self_attn")?;
    let n = load_norm(g, "norm_self")?;
    let s = layers::attention(g, &a, h, y, y, y, Some(causal))?;
    let v = layers::residual_norm(g, &n, y, s.output)?;

    let a = load_attn(g, "persona_attn")?;
    let n = load_norm(g, "norm_persona")?;
    let op = persona.output;
    let s = layers::attention(g, &a, h, v, op, op, persona.key_mask(rows).as_ref())?;
    let e = layers::residual_norm(g, &n, v, s.output)?;

    let a = load_attn(g, "query_attn")?;
    let n = load_norm(g, "norm_query")?;
    let oq = query.output;
    let s = layers::attention(g, &a, h, v, oq, oq, query.key_mask(rows).as_ref())?;
    let f = layers::residual_norm(g, &n, v, s.output)?;

    // F rows are target positions, so this one is causal too.
    let a = load_attn(g, "pq_attn")?;
    let n = load_norm(g, "norm_pq")?;
    let s = layers::attention(g, &a, h, e, f, f, Some(causal))?;
    let t = layers::residual_norm(g, &n, e, s.output)?;

    let m = g.mean_of(&[e, f, t])?;
    let ffn = FfnVars::load(g, store, &format!("{p}.ffn"))?;
    let n = load_norm(g, "norm_ffn")?;
    let fo = layers::feed_forward(g, &ffn, m)?;
    let output = layers::residual_norm(g, &n, m, fo)?;
    Ok(DecoderLayerOutput {
        self_out: v,
        persona_out: e,
        query_out: f,
        pq_out: t,
        output,
    })
}

/// Decoder input (`BOS` + gold) and targets (gold + `EOS`).
pub fn shifted(gold: &[TokenId]) -> Result<(Vec<TokenId>, Vec<TokenId>)> {
    if gold.is_empty() {
        return Err(GdrError::Empty("gold response"));
    }
    let mut input = Vec::with_capacity(gold.len() + 1);
    input.push(BOS);
    input.extend_from_slice(gold);
    let mut targets = gold.to_vec();
    targets.push(EOS);
    Ok((input, targets))
}

/// Encodes persona and query with the generator's encoder.
pub fn encode_inputs<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    persona: &[TokenId],
    query: &[TokenId],
) -> Result<(EncodedSequence, EncodedSequence)> {
    let spec = encoder_spec(cfg);
    let p = encoder::encode(g, store, cfg, spec, persona)?;
    let q = encoder::encode(g, store, cfg, spec, query)?;
    Ok((p, q))
}

/// Logits for every target position given pre-encoded inputs.
pub fn decode_logits<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    persona: &EncodedSequence,
    query: &EncodedSequence,
    gold: &[TokenId],
) -> Result<Var> {
    let (input, _) = shifted(gold)?;
    let causal = Mask::causal(input.len());
    let mut y = encoder::embed(g, store, SHARED_EMBEDDING, &input, cfg.max_positions)?;
    for l in 0..cfg.generator_layers {
        y = decoder_layer(g, store, cfg, l, y, persona, query, &causal)?.output;
    }
    let w = g.param(store, OUTPUT_W)?;
    let b = g.param(store, OUTPUT_B)?;
    layers::linear(g, w, b, y)
}

/// `(|gold| + 1) × vocab` logits from one parallel pass.
pub fn teacher_forced_logits<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    persona: &[TokenId],
    query: &[TokenId],
    gold: &[TokenId],
) -> Result<Var> {
    let (p, q) = encode_inputs(g, store, cfg, persona, query)?;
    decode_logits(g, store, cfg, &p, &q, gold)
}

/// Summed NLL of gold + EOS and the number of scored tokens.
pub fn generator_loss<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    persona: &[TokenId],
    query: &[TokenId],
    gold: &[TokenId],
) -> Result<(Var, usize)> {
    let logits = teacher_forced_logits(g, store, cfg, persona, query, gold)?;
    let (_, targets) = shifted(gold)?;
    g.cross_entropy_sum(logits, &targets, encoder::PAD)
}

/// Greedy first-stage output.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    ids: TokenSequence,
    /// Per-step output distributions.
    pub probs: Vec<Vec<f64>>,
}

impl Prototype {
    pub fn new(ids: Vec<TokenId>, vocab_size: usize, max_len: usize) -> Result<Self> {
        if ids.contains(&encoder::PAD) {
            return Err(GdrError::Invalid("prototype contains PAD".into()));
        }
        Ok(Self {
            ids: TokenSequence::new(ids, vocab_size, max_len)?,
            probs: Vec::new(),
        })
    }

    /// Emitted ids including the terminating EOS, if any.
    pub fn ids(&self) -> &[TokenId] {
        self.ids.ids()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids without the trailing EOS.
    pub fn content(&self) -> &[TokenId] {
        let ids = self.ids.ids();
        match ids.last() {
            Some(&EOS) => &ids[..ids.len() - 1],
            _ => ids,
        }
    }

    pub fn ends_with_eos(&self) -> bool {
        self.ids.ids().last() == Some(&EOS)
    }
}

struct LayerRuntime<S> {
    self_attn: Attention<S>,
    norm_self: Norm<S>,
    persona_attn: Attention<S>,
    norm_persona: Norm<S>,
    query_attn: Attention<S>,
    norm_query: Norm<S>,
    pq_attn: Attention<S>,
    norm_pq: Norm<S>,
    ffn: Ffn<S>,
    norm_ffn: Norm<S>,
}

struct LayerState<S> {
    self_cache: KvCache<S>,
    persona: KvCache<S>,
    query: KvCache<S>,
    pq_cache: KvCache<S>,
}

/// Frozen copy of the generator for row-at-a-time decoding.
pub struct GeneratorRuntime<S> {
    cfg: ModelConfig,
    embedding: Matrix<S>,
    layers: Vec<LayerRuntime<S>>,
    output: Linear<S>,
}

impl<S: Scalar> GeneratorRuntime<S> {
    pub fn load(store: &ParameterStore<S>, cfg: &ModelConfig) -> Result<Self> {
        let h = cfg.heads;
        let layers = (0..cfg.generator_layers)
            .map(|l| {
                let p = layer_prefix(l);
                let at = |n: &str| Attention::load(store, &format!("{p}.{n}"), h);
                let nm = |n: &str| Norm::load(store, &format!("{p}.{n}"));
                Ok(LayerRuntime {
                    self_attn: at("self_attn")?,
                    norm_self: nm("norm_self")?,
                    persona_attn: at("persona_attn")?,
                    norm_persona: nm("norm_persona")?,
                    query_attn: at("query_attn")?,
                    norm_query: nm("norm_query")?,
                    pq_attn: at("pq_attn")?,
                    norm_pq: nm("norm_pq")?,
                    ffn: Ffn::load(store, &format!("{p}.ffn"))?,
                    norm_ffn: nm("norm_ffn")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            embedding: store.get(SHARED_EMBEDDING)?.to_matrix()?,
            layers,
            output: Linear::load(store, OUTPUT_W, OUTPUT_B)?,
        })
    }

    /// Runs the decoder over already encoded inputs. `choose` sees each step's
    /// logits and returns the next token, or `None` to stop.
    pub fn run(
        &self,
        persona: &Matrix<S>,
        persona_valid: Option<&[bool]>,
        query: &Matrix<S>,
        query_valid: Option<&[bool]>,
        max_len: usize,
        choose: impl FnMut(usize, &[S]) -> Result<Option<TokenId>>,
    ) -> Result<(Vec<TokenId>, Vec<Vec<S>>)> {
        let mut states: Vec<LayerState<S>> = self
            .layers
            .iter()
            .map(|l| LayerState {
                self_cache: KvCache::default(),
                persona: l.persona_attn.memory(persona, persona_valid),
                query: l.query_attn.memory(query, query_valid),
                pq_cache: KvCache::default(),
            })
            .collect();
        let step = |token: TokenId, pos: usize| -> Result<Vec<S>> {
            let mut x = decoding::embed_row(&self.embedding, token, pos)?;
            for (l, st) in self.layers.iter().zip(states.iter_mut()) {
                l.self_attn.push(&mut st.self_cache, &x);
                let v = l.norm_self.residual(&x, &l.self_attn.attend(&st.self_cache, &x)?);
                let e = l.norm_persona.residual(&v, &l.persona_attn.attend(&st.persona, &v)?);
                let f = l.norm_query.residual(&v, &l.query_attn.attend(&st.query, &v)?);
                l.pq_attn.push(&mut st.pq_cache, &f);
                let t = l.norm_pq.residual(&e, &l.pq_attn.attend(&st.pq_cache, &e)?);
                let third = S::one() / S::of(3.0);
                let m: Vec<S> = (0..e.len()).map(|c| (e[c] + f[c] + t[c]) * third).collect();
                x = l.norm_ffn.residual(&m, &l.ffn.apply(&m));
            }
            Ok(self.output.apply(&x))
        };
        decoding::run_decoder(max_len, self.cfg.max_positions, step, choose)
    }

    /// Greedy decoding from pre-encoded inputs.
    pub fn greedy(
        &self,
        persona: &Matrix<S>,
        persona_valid: Option<&[bool]>,
        query: &Matrix<S>,
        query_valid: Option<&[bool]>,
        max_len: usize,
    ) -> Result<Prototype> {
        let (ids, logits) = self.run(persona, persona_valid, query, query_valid, max_len, |_, l| {
            decoding::pick(l).map(Some)
        })?;
        let mut proto = Prototype::new(ids, self.cfg.vocab_size, max_len)?;
        proto.probs = logits
            .iter()
            .map(|l| decoding::softmax_row(l))
            .collect::<Result<_>>()?;
        Ok(proto)
    }
}

/// Greedy decoding from BOS until EOS or `max_len` tokens; PAD, BOS and MASK
/// are never emitted and ties go to the lowest id.
pub fn generate_prototype<S: Scalar>(
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    persona: &[TokenId],
    query: &[TokenId],
    max_len: usize,
) -> Result<Prototype> {
    let mut g = Graph::inference();
    let (p, q) = encode_inputs(&mut g, store, cfg, persona, query)?;
    let rt = GeneratorRuntime::load(store, cfg)?;
    rt.greedy(
        g.value(p.output),
        p.key_valid.as_deref(),
        g.value(q.output),
        q.key_valid.as_deref(),
        max_len,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ops::{self, AttentionParams};
    use crate::numerics::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const V: usize = 14;

    fn tiny() -> (ModelConfig, ParameterStore<f64>) {
        let cfg = ModelConfig::tiny(V);
        let mut s = ParameterStore::new();
        init_generator(&mut s, &cfg, 11).unwrap();
        // Non-zero biases so they are exercised.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (name, t) in s.iter_mut() {
            if name.contains(".b") {
                t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
            }
        }
        (cfg, s)
    }

    fn attn_params(s: &ParameterStore<f64>, p: &str) -> AttentionParams<f64> {
        let m = |n: &str| s.get(&format!("{p}.{n}")).unwrap().to_matrix().unwrap();
        let v = |n: &str| s.get(&format!("{p}.{n}")).unwrap().data().to_vec();
        AttentionParams {
            heads: 2,
            wq: m("wq"),
            bq: v("bq"),
            wk: m("wk"),
            bk: v("bk"),
            wv: m("wv"),
            bv: v("bv"),
            wo: m("wo"),
            bo: v("bo"),
        }
    }

    fn res_norm(s: &ParameterStore<f64>, p: &str, x: &Matrix<f64>, sub: &Matrix<f64>) -> Matrix<f64> {
        let v = |n: &str| s.get(&format!("{p}.{n}")).unwrap().data().to_vec();
        ops::residual_layer_norm(x, sub, &v("gain"), &v("bias")).unwrap()
    }

    #[test]
    fn decoder_layer_matches_compositional_oracle() {
        let (cfg, s) = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rand_m = |r: usize| {
            Matrix::from_vec(r, 8, (0..r * 8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let (pm, qm, ym) = (rand_m(3), rand_m(2), rand_m(2));

        let mut g = Graph::<f64>::inference();
        let wrap = |g: &mut Graph<f64>, m: &Matrix<f64>| EncodedSequence {
            output: g.constant(m.clone()).unwrap(),
            attention: vec![],
            key_valid: None,
        };
        let pe = wrap(&mut g, &pm);
        let qe = wrap(&mut g, &qm);
        let y = g.constant(ym.clone()).unwrap();
        let out = decoder_layer(&mut g, &s, &cfg, 0, y, &pe, &qe, &Mask::causal(2)).unwrap();

        let p = "generator.decoder.layer0";
        let causal = Mask::causal(2);
        let mha = |q: &Matrix<f64>, k: &Matrix<f64>, n: &str, m: Option<&Mask>| {
            ops::multi_head_attention(q, k, k, &attn_params(&s, &format!("{p}.{n}")), m).unwrap()
        };
        let v = res_norm(&s, &format!("{p}.norm_self"), &ym, &mha(&ym, &ym, "self_attn", Some(&causal)));
        let e = res_norm(&s, &format!("{p}.norm_persona"), &v, &mha(&v, &pm, "persona_attn", None));
        let f = res_norm(&s, &format!("{p}.norm_query"), &v, &mha(&v, &qm, "query_attn", None));
        let t = res_norm(&s, &format!("{p}.norm_pq"), &e, &mha(&e, &f, "pq_attn", Some(&causal)));
        let mut m = Matrix::zeros(2, 8);
        for r in 0..2 {
            for c in 0..8 {
                m.set(r, c, (e.get(r, c) + f.get(r, c) + t.get(r, c)) / 3.0);
            }
        }
        let w = |n: &str| s.get(&format!("{p}.ffn.{n}")).unwrap().to_matrix().unwrap();
        let b = |n: &str| s.get(&format!("{p}.ffn.{n}")).unwrap().data().to_vec();
        let fo = ops::feed_forward(&m, &w("w1"), &b("b1"), &w("w2"), &b("b2")).unwrap();
        let expect = res_norm(&s, &format!("{p}.norm_ffn"), &m, &fo);
        assert!(g.value(out.output).max_abs_diff(&expect) < 1e-10);
        assert!(g.value(out.pq_out).max_abs_diff(&t) < 1e-10);
    }

    #[test]
    fn equal_branches_average_to_themselves() {
        // Identity projections and identical persona / query inputs make E = F;
        // with one position T attends only to F = E as well.
        let cfg = ModelConfig::tiny(V);
        let mut s = ParameterStore::<f64>::new();
        let p = "generator.decoder.layer0";
        for n in ["self_attn", "persona_attn", "query_attn", "pq_attn"] {
            AttentionParams::identity(8, 2).install(&mut s, &format!("{p}.{n}")).unwrap();
        }
        for n in ["norm_self", "norm_persona", "norm_query", "norm_pq", "norm_ffn"] {
            layers::init_norm(&mut s, &format!("{p}.{n}"), 8).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        layers::init_ffn(&mut s, &format!("{p}.ffn"), 8, 12, &mut rng).unwrap();
        let mut g = Graph::<f64>::inference();
        let mem = Matrix::from_vec(1, 8, (0..8).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let pe = EncodedSequence {
            output: g.constant(mem.clone()).unwrap(),
            attention: vec![],
            key_valid: None,
        };
        let qe = EncodedSequence {
            output: g.constant(mem).unwrap(),
            attention: vec![],
            key_valid: None,
        };
        let y = g
            .constant(Matrix::from_vec(1, 8, (0..8).map(|i| (i as f64).sin()).collect()).unwrap())
            .unwrap();
        let out = decoder_layer(&mut g, &s, &cfg, 0, y, &pe, &qe, &Mask::causal(1)).unwrap();
        assert_eq!(g.value(out.persona_out), g.value(out.query_out));
        let mean = g.mean_of(&[out.persona_out, out.persona_out]).unwrap();
        assert!(g.value(mean).max_abs_diff(g.value(out.persona_out)) < 1e-15);
    }

    #[test]
    fn logits_shape_and_prefix_invariance() {
        let (cfg, s) = tiny();
        let mut g = Graph::<f64>::inference();
        let a = teacher_forced_logits(&mut g, &s, &cfg, &[5, 6, 2], &[7, 8], &[9, 10, 11]).unwrap();
        let b = teacher_forced_logits(&mut g, &s, &cfg, &[5, 6, 2], &[7, 8], &[9, 12, 13]).unwrap();
        assert_eq!(g.value(a).shape(), (4, V));
        assert_eq!(g.value(a).row(0), g.value(b).row(0));
        assert_eq!(g.value(a).row(1), g.value(b).row(1));
        assert_ne!(g.value(a).row(2), g.value(b).row(2));
        assert!(teacher_forced_logits(&mut g, &s, &cfg, &[5], &[7], &[]).is_err());
    }

    #[test]
    fn teacher_forcing_matches_incremental_decoder() {
        let (cfg, s) = tiny();
        let (persona, query, gold) = ([5, 6, 2, 9, 2], [7, 8, 13], [9, 10, 11, 12]);
        let mut g = Graph::<f64>::new();
        let logits = teacher_forced_logits(&mut g, &s, &cfg, &persona, &query, &gold).unwrap();
        let (_, targets) = shifted(&gold).unwrap();
        let (loss, count) = g.cross_entropy_sum(logits, &targets, 0).unwrap();
        assert_eq!(count, 5);

        let rt = GeneratorRuntime::load(&s, &cfg).unwrap();
        let mut ig = Graph::inference();
        let (pe, qe) = encode_inputs(&mut ig, &s, &cfg, &persona, &query).unwrap();
        let (_, steps) = rt
            .run(ig.value(pe.output), None, ig.value(qe.output), None, 10, |i, _| {
                Ok(Some(targets[i]))
            })
            .unwrap();
        assert_eq!(steps.len(), 5);
        let mut step_loss = 0.0;
        for (i, l) in steps.iter().enumerate() {
            let max = l.iter().cloned().fold(f64::MIN, f64::max);
            let lse = max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            step_loss += lse - l[targets[i]];
            for (a, b) in l.iter().zip(g.value(logits).row(i)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        assert!((step_loss - g.scalar(loss)).abs() < 1e-10);
    }

    #[test]
    fn greedy_is_deterministic_and_well_formed() {
        let (cfg, s) = tiny();
        let a = generate_prototype(&s, &cfg, &[5, 6, 2], &[7, 8], 6).unwrap();
        let b = generate_prototype(&s, &cfg, &[5, 6, 2], &[7, 8], 6).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 6);
        assert!(a.ids().iter().all(|id| !decoding::BANNED_OUTPUTS.contains(id)));
        for p in &a.probs {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(generate_prototype(&s, &cfg, &[5], &[7], 0).is_err());
    }

    #[test]
    fn eos_biased_projection_stops_immediately() {
        let (cfg, mut s) = tiny();
        s.get_mut(OUTPUT_W).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut bias = vec![0.0; V];
        bias[EOS] = 5.0;
        *s.get_mut(OUTPUT_B).unwrap() = Tensor::new(vec![V], bias).unwrap();
        let p = generate_prototype(&s, &cfg, &[5, 6], &[7], 8).unwrap();
        assert_eq!(p.ids(), &[EOS]);
        assert!(p.content().is_empty());
    }

    #[test]
    fn pad_extended_inputs_do_not_change_output() {
        let (cfg, s) = tiny();
        let mut g = Graph::<f64>::inference();
        let a = teacher_forced_logits(&mut g, &s, &cfg, &[5, 6, 2], &[7, 8], &[9, 10]).unwrap();
        let b = teacher_forced_logits(&mut g, &s, &cfg, &[5, 6, 2, 0, 0], &[7, 8, 0], &[9, 10]).unwrap();
        assert!(g.value(a).max_abs_diff(g.value(b)) < 1e-12);
        let pa = generate_prototype(&s, &cfg, &[5, 6, 2], &[7, 8], 6).unwrap();
        let pb = generate_prototype(&s, &cfg, &[5, 6, 2, 0], &[7, 8, 0, 0], 6).unwrap();
        assert_eq!(pa.ids(), pb.ids());
    }
}
