//! Masked-prototype rewriter: a decoder that attends to the persona, then
//! from that view to the masked prototype. It never sees the query.

use crate::config::ModelConfig;
use crate::decoding::{self, Attention, Ffn, KvCache, Linear, Norm};
use crate::encoder::{self, EncodedSequence, TokenId, TokenSequence, SHARED_EMBEDDING};
use crate::error::{GdrError, Result};
use crate::generator::{self, shifted};
use crate::matcher::MaskedPrototype;
use crate::numerics::init::block_rng;
use crate::numerics::layers::{self, AttentionVars, FfnVars, NormVars};
use crate::numerics::{Graph, Mask, Matrix, ParameterStore, Scalar, Var};

pub const PREFIX: &str = "rewriter";
pub const OUTPUT_W: &str = "rewriter.output.w";
pub const OUTPUT_B: &str = "rewriter.output.b";

fn layer_prefix(layer: usize) -> String {
    format!("rewriter.decoder.layer{layer}")
}

/// Decoder layers and output projection. The encoder and embedding belong
/// to the generator and must already exist.
pub fn init_rewriter<S: Scalar>(store: &mut ParameterStore<S>, cfg: &ModelConfig, seed: u64) -> Result<()> {
    cfg.validate()?;
    if !store.contains(SHARED_EMBEDDING) || !store.has_prefix(generator::ENCODER_PREFIX) {
        return Err(GdrError::MissingParam(
            "rewriter needs the generator encoder and shared embedding".into(),
        ));
    }
    for l in 0..cfg.rewriter_layers {
        let p = layer_prefix(l);
        let mut rng = block_rng(seed, &p);
        for (attn, norm) in [
            ("self_attn", "norm_self"),
            ("persona_attn", "norm_persona"),
            ("proto_attn", "norm_proto"),
        ] {
            layers::init_attention(store, &format!("{p}.{attn}"), cfg.hidden, &mut rng)?;
            layers::init_norm(store, &format!("{p}.{norm}"), cfg.hidden)?;
        }
        layers::init_ffn(store, &format!("{p}.ffn"), cfg.hidden, cfg.ffn_inner, &mut rng)?;
        layers::init_norm(store, &format!("{p}.norm_ffn"), cfg.hidden)?;
    }
    let mut rng = block_rng(seed, "rewriter.output");
    layers::init_linear(
        store,
        OUTPUT_W.into(),
        OUTPUT_B.into(),
        cfg.hidden,
        cfg.vocab_size,
        &mut rng,
    )
}

/// Masked prototype through the generator's encoder.
pub fn encode_masked_prototype<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    masked: &[TokenId],
) -> Result<EncodedSequence> {
    encoder::encode(g, store, cfg, generator::encoder_spec(cfg), masked)
}

pub struct RewriterLayerOutput {
    pub self_out: Var,
    pub persona_out: Var,
    pub proto_out: Var,
    pub output: Var,
}

pub fn rewriter_layer<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    layer: usize,
    y: Var,
    persona: &EncodedSequence,
    prototype: &EncodedSequence,
    causal: &Mask,
) -> Result<RewriterLayerOutput> {
    let p = layer_prefix(layer);
    let rows = g.value(y).rows();
    if causal.shape() != (rows, rows) {
        return Err(GdrError::shape(
            "rewriter_layer",
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
    let sp = layers::residual_norm(g, &n, v, s.output)?;

    let a = load_attn(g, "proto_attn")?;
    let n = load_norm(g, "norm_proto")?;
    let om = prototype.output;
    let s = layers::attention(g, &a, h, sp, om, om, prototype.key_mask(rows).as_ref())?;
    let k = layers::residual_norm(g, &n, sp, s.output)?;

    let m = g.mean_of(&[sp, k])?;
    let ffn = FfnVars::load(g, store, &format!("{p}.ffn"))?;
    let n = load_norm(g, "norm_ffn")?;
    let fo = layers::feed_forward(g, &ffn, m)?;
    let output = layers::residual_norm(g, &n, m, fo)?;
    Ok(RewriterLayerOutput {
        self_out: v,
        persona_out: sp,
        proto_out: k,
        output,
    })
}

/// Logits given pre-encoded persona and masked prototype.
pub fn decode_logits<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    persona: &EncodedSequence,
    prototype: &EncodedSequence,
    gold: &[TokenId],
) -> Result<Var> {
    let (input, _) = shifted(gold)?;
    let causal = Mask::causal(input.len());
    let mut y = encoder::embed(g, store, SHARED_EMBEDDING, &input, cfg.max_positions)?;
    for l in 0..cfg.rewriter_layers {
        y = rewriter_layer(g, store, cfg, l, y, persona, prototype, &causal)?.output;
    }
    let w = g.param(store, OUTPUT_W)?;
    let b = g.param(store, OUTPUT_B)?;
    layers::linear(g, w, b, y)
}

/// `(|gold| + 1) × vocab` logits conditioned on persona and masked prototype.
pub fn teacher_forced_logits<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    persona: &[TokenId],
    masked: &[TokenId],
    gold: &[TokenId],
) -> Result<Var> {
    let spec = generator::encoder_spec(cfg);
    let p = encoder::encode(g, store, cfg, spec, persona)?;
    let m = encode_masked_prototype(g, store, cfg, masked)?;
    decode_logits(g, store, cfg, &p, &m, gold)
}

struct LayerRuntime<S> {
    self_attn: Attention<S>,
    norm_self: Norm<S>,
    persona_attn: Attention<S>,
    norm_persona: Norm<S>,
    proto_attn: Attention<S>,
    norm_proto: Norm<S>,
    ffn: Ffn<S>,
    norm_ffn: Norm<S>,
}

struct LayerState<S> {
    self_cache: KvCache<S>,
    persona: KvCache<S>,
    proto: KvCache<S>,
}

/// Frozen copy of the rewriter for row-at-a-time decoding.
pub struct RewriterRuntime<S> {
    cfg: ModelConfig,
    embedding: Matrix<S>,
    layers: Vec<LayerRuntime<S>>,
    output: Linear<S>,
}

impl<S: Scalar> RewriterRuntime<S> {
    pub fn load(store: &ParameterStore<S>, cfg: &ModelConfig) -> Result<Self> {
        let h = cfg.heads;
        let layers = (0..cfg.rewriter_layers)
            .map(|l| {
                let p = layer_prefix(l);
                let at = |n: &str| Attention::load(store, &format!("{p}.{n}"), h);
                let nm = |n: &str| Norm::load(store, &format!("{p}.{n}"));
                Ok(LayerRuntime {
                    self_attn: at("self_attn")?,
                    norm_self: nm("norm_self")?,
                    persona_attn: at("persona_attn")?,
                    norm_persona: nm("norm_persona")?,
                    proto_attn: at("proto_attn")?,
                    norm_proto: nm("norm_proto")?,
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

    pub fn run(
        &self,
        persona: &Matrix<S>,
        persona_valid: Option<&[bool]>,
        prototype: &Matrix<S>,
        prototype_valid: Option<&[bool]>,
        max_len: usize,
        choose: impl FnMut(usize, &[S]) -> Result<Option<TokenId>>,
    ) -> Result<(Vec<TokenId>, Vec<Vec<S>>)> {
        let mut states: Vec<LayerState<S>> = self
            .layers
            .iter()
            .map(|l| LayerState {
                self_cache: KvCache::default(),
                persona: l.persona_attn.memory(persona, persona_valid),
                proto: l.proto_attn.memory(prototype, prototype_valid),
            })
            .collect();
        let step = |token: TokenId, pos: usize| -> Result<Vec<S>> {
            let mut x = decoding::embed_row(&self.embedding, token, pos)?;
            for (l, st) in self.layers.iter().zip(states.iter_mut()) {
                l.self_attn.push(&mut st.self_cache, &x);
                let v = l.norm_self.residual(&x, &l.self_attn.attend(&st.self_cache, &x)?);
                let s = l.norm_persona.residual(&v, &l.persona_attn.attend(&st.persona, &v)?);
                let k = l.norm_proto.residual(&s, &l.proto_attn.attend(&st.proto, &s)?);
                let half = S::one() / S::of(2.0);
                let m: Vec<S> = s.iter().zip(&k).map(|(&a, &b)| (a + b) * half).collect();
                x = l.norm_ffn.residual(&m, &l.ffn.apply(&m));
            }
            Ok(self.output.apply(&x))
        };
        decoding::run_decoder(max_len, self.cfg.max_positions, step, choose)
    }

    pub fn greedy(
        &self,
        persona: &Matrix<S>,
        persona_valid: Option<&[bool]>,
        prototype: &Matrix<S>,
        prototype_valid: Option<&[bool]>,
        max_len: usize,
    ) -> Result<TokenSequence> {
        let (ids, _) = self.run(persona, persona_valid, prototype, prototype_valid, max_len, |_, l| {
            decoding::pick(l).map(Some)
        })?;
        TokenSequence::new(ids, self.cfg.vocab_size, max_len)
    }
}

/// Greedy final response; MASK, PAD and BOS are never emitted. The output
/// includes the terminating EOS when one was produced.
pub fn rewrite<S: Scalar>(
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    masked: &MaskedPrototype,
    persona: &[TokenId],
    max_len: usize,
) -> Result<TokenSequence> {
    let mut g = Graph::inference();
    let p = encoder::encode(&mut g, store, cfg, generator::encoder_spec(cfg), persona)?;
    let m = encode_masked_prototype(&mut g, store, cfg, masked.ids())?;
    RewriterRuntime::load(store, cfg)?.greedy(
        g.value(p.output),
        p.key_valid.as_deref(),
        g.value(m.output),
        m.key_valid.as_deref(),
        max_len,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EOS, MASK};
    use crate::numerics::ops::{self, AttentionParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const V: usize = 14;

    fn tiny() -> (ModelConfig, ParameterStore<f64>) {
        let cfg = ModelConfig::tiny(V);
        let mut s = ParameterStore::new();
        generator::init_generator(&mut s, &cfg, 21).unwrap();
        init_rewriter(&mut s, &cfg, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (name, t) in s.iter_mut() {
            if name.contains(".b") {
                t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
            }
        }
        (cfg, s)
    }

    #[test]
    fn needs_generator_first() {
        let cfg = ModelConfig::tiny(V);
        let mut s = ParameterStore::<f64>::new();
        assert!(init_rewriter(&mut s, &cfg, 1).is_err());
    }

    #[test]
    fn layer_matches_compositional_oracle() {
        let (cfg, s) = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rand_m = |r: usize| {
            Matrix::from_vec(r, 8, (0..r * 8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let (pm, mm, ym) = (rand_m(3), rand_m(4), rand_m(3));
        let mut g = Graph::<f64>::inference();
        let pe = EncodedSequence {
            output: g.constant(pm.clone()).unwrap(),
            attention: vec![],
            key_valid: None,
        };
        let me = EncodedSequence {
            output: g.constant(mm.clone()).unwrap(),
            attention: vec![],
            key_valid: None,
        };
        let y = g.constant(ym.clone()).unwrap();
        let causal = Mask::causal(3);
        let out = rewriter_layer(&mut g, &s, &cfg, 1, y, &pe, &me, &causal).unwrap();

        let p = "rewriter.decoder.layer1";
        let mat = |n: &str| s.get(&format!("{p}.{n}")).unwrap().to_matrix().unwrap();
        let vecp = |n: &str| s.get(&format!("{p}.{n}")).unwrap().data().to_vec();
        let attn = |n: &str| AttentionParams {
            heads: 2,
            wq: mat(&format!("{n}.wq")),
            bq: vecp(&format!("{n}.bq")),
            wk: mat(&format!("{n}.wk")),
            bk: vecp(&format!("{n}.bk")),
            wv: mat(&format!("{n}.wv")),
            bv: vecp(&format!("{n}.bv")),
            wo: mat(&format!("{n}.wo")),
            bo: vecp(&format!("{n}.bo")),
        };
        let rn = |n: &str, x: &Matrix<f64>, sub: &Matrix<f64>| {
            ops::residual_layer_norm(x, sub, &vecp(&format!("{n}.gain")), &vecp(&format!("{n}.bias"))).unwrap()
        };
        let v = rn(
            "norm_self",
            &ym,
            &ops::multi_head_attention(&ym, &ym, &ym, &attn("self_attn"), Some(&causal)).unwrap(),
        );
        let sp = rn(
            "norm_persona",
            &v,
            &ops::multi_head_attention(&v, &pm, &pm, &attn("persona_attn"), None).unwrap(),
        );
        let k = rn(
            "norm_proto",
            &sp,
            &ops::multi_head_attention(&sp, &mm, &mm, &attn("proto_attn"), None).unwrap(),
        );
        let mut m = Matrix::zeros(3, 8);
        for r in 0..3 {
            for c in 0..8 {
                m.set(r, c, (sp.get(r, c) + k.get(r, c)) / 2.0);
            }
        }
        let fo = ops::feed_forward(&m, &mat("ffn.w1"), &vecp("ffn.b1"), &mat("ffn.w2"), &vecp("ffn.b2")).unwrap();
        let expect = rn("norm_ffn", &m, &fo);
        assert!(g.value(out.output).max_abs_diff(&expect) < 1e-10);
    }

    #[test]
    fn unmasked_prototype_encodes_like_raw() {
        let (cfg, s) = tiny();
        let mut g = Graph::<f64>::inference();
        let masked = MaskedPrototype::unmasked(&[7, 8, 9, EOS]).unwrap();
        let a = encode_masked_prototype(&mut g, &s, &cfg, masked.ids()).unwrap();
        let b = encoder::encode(&mut g, &s, &cfg, generator::encoder_spec(&cfg), &[7, 8, 9, EOS]).unwrap();
        assert_eq!(g.value(a.output), g.value(b.output));
        assert_eq!(g.value(a.output).rows(), 4);
    }

    #[test]
    fn causal_and_shape() {
        let (cfg, s) = tiny();
        let mut g = Graph::<f64>::inference();
        let a = teacher_forced_logits(&mut g, &s, &cfg, &[5, 6, 2], &[7, MASK, 2], &[9, 10, 11]).unwrap();
        let b = teacher_forced_logits(&mut g, &s, &cfg, &[5, 6, 2], &[7, MASK, 2], &[12, 10, 13]).unwrap();
        assert_eq!(g.value(a).shape(), (4, V));
        assert_eq!(g.value(a).row(0), g.value(b).row(0));
        assert_ne!(g.value(a).row(1), g.value(b).row(1));
    }

    #[test]
    fn incremental_decoder_matches_teacher_forcing() {
        let (cfg, s) = tiny();
        let (persona, proto, gold) = ([5, 6, 2], [7, MASK, 9, 2], [10, 11, 12]);
        let mut g = Graph::<f64>::inference();
        let logits = teacher_forced_logits(&mut g, &s, &cfg, &persona, &proto, &gold).unwrap();
        let pe = encoder::encode(&mut g, &s, &cfg, generator::encoder_spec(&cfg), &persona).unwrap();
        let me = encode_masked_prototype(&mut g, &s, &cfg, &proto).unwrap();
        let (_, targets) = shifted(&gold).unwrap();
        let rt = RewriterRuntime::load(&s, &cfg).unwrap();
        let (_, steps) = rt
            .run(g.value(pe.output), None, g.value(me.output), None, 8, |i, _| Ok(Some(targets[i])))
            .unwrap();
        assert_eq!(steps.len(), 4);
        for (i, l) in steps.iter().enumerate() {
            for (a, b) in l.iter().zip(g.value(logits).row(i)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rewrite_never_emits_mask_and_is_deterministic() {
        let (cfg, mut s) = tiny();
        // Make MASK the favourite output.
        let b = s.get_mut(OUTPUT_B).unwrap();
        b.data_mut()[MASK] = 100.0;
        let masked = MaskedPrototype::new(&[7, 8, 9, EOS], [1]).unwrap();
        let a = rewrite(&s, &cfg, &masked, &[5, 6, 2], 6).unwrap();
        let b = rewrite(&s, &cfg, &masked, &[5, 6, 2], 6).unwrap();
        assert_eq!(a, b);
        assert!(!a.ids().contains(&MASK));
    }

    #[test]
    fn shared_embedding_reaches_both_decoders() {
        let (cfg, mut s) = tiny();
        let mut g = Graph::<f64>::inference();
        let gen0 = generator::teacher_forced_logits(&mut g, &s, &cfg, &[5], &[6], &[7]).unwrap();
        let rw0 = teacher_forced_logits(&mut g, &s, &cfg, &[5], &[6], &[7]).unwrap();
        let (gen0, rw0) = (g.value(gen0).clone(), g.value(rw0).clone());
        s.get_mut(SHARED_EMBEDDING).unwrap().data_mut()[1 * 8] += 0.5; // BOS row
        let mut g = Graph::<f64>::inference();
        let gen1 = generator::teacher_forced_logits(&mut g, &s, &cfg, &[5], &[6], &[7]).unwrap();
        let rw1 = teacher_forced_logits(&mut g, &s, &cfg, &[5], &[6], &[7]).unwrap();
        assert_ne!(&gen0, g.value(gen1));
        assert_ne!(&rw0, g.value(rw1));
        assert!(!s.names().any(|n| n.starts_with("rewriter") && n.contains("embedding")));
    }

    #[test]
    fn too_long_gold_is_rejected() {
        let (mut cfg, s) = tiny();
        cfg.max_positions = 4;
        let mut g = Graph::<f64>::inference();
        assert!(teacher_forced_logits(&mut g, &s, &cfg, &[5], &[6], &[7, 7, 7, 7]).is_err());
    }
}
