//! Helpers shared by the integration suites.
#![allow(dead_code)]

use gdr_core::config::ModelConfig;
use gdr_core::encoder::{TokenId, MASK};
use gdr_core::matcher::{self, NliLabel};
use gdr_core::numerics::gradcheck::{check_gradients, GradCheckReport};
use gdr_core::{generator, rewriter, ParameterStore};

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_STEP: f64 = 1e-5;

pub fn grad_config() -> ModelConfig {
    ModelConfig {
        max_positions: 24,
        ..ModelConfig::tiny(14)
    }
}

const PERSONA: [TokenId; 7] = [5, 6, 7, 2, 8, 9, 2];
const QUERY: [TokenId; 4] = [10, 11, 12, 13];
const GOLD: [TokenId; 5] = [7, 12, 6, 9, 5];
const MASKED: [TokenId; 5] = [7, MASK, 6, 9, 2];

pub fn generator_store(cfg: &ModelConfig) -> ParameterStore {
    let mut s = ParameterStore::new();
    generator::init_generator(&mut s, cfg, 11).unwrap();
    rewriter::init_rewriter(&mut s, cfg, 11).unwrap();
    s
}

pub fn matcher_store(cfg: &ModelConfig) -> ParameterStore {
    let mut s = ParameterStore::new();
    matcher::init_matcher(&mut s, cfg, 12).unwrap();
    s
}

pub fn check_generator(store: &mut ParameterStore, cfg: &ModelConfig, prefixes: &[&str]) -> GradCheckReport {
    check_gradients(store, prefixes, GRAD_STEP, 6, |g, s| {
        Ok(generator::generator_loss(g, s, cfg, &PERSONA, &QUERY, &GOLD)?.0)
    })
    .unwrap()
}

pub fn check_rewriter(store: &mut ParameterStore, cfg: &ModelConfig, prefixes: &[&str]) -> GradCheckReport {
    check_gradients(store, prefixes, GRAD_STEP, 6, |g, s| {
        let logits = rewriter::teacher_forced_logits(g, s, cfg, &PERSONA, &MASKED, &GOLD)?;
        let (_, targets) = generator::shifted(&GOLD)?;
        Ok(g.cross_entropy_sum(logits, &targets, 0)?.0)
    })
    .unwrap()
}

pub fn check_matcher(store: &mut ParameterStore, cfg: &ModelConfig, prefixes: &[&str]) -> GradCheckReport {
    check_gradients(store, prefixes, GRAD_STEP, 6, |g, s| {
        matcher::nli_loss(g, s, cfg, &PERSONA, &[7, 12, 9, 2], NliLabel::Contradiction)
    })
    .unwrap()
}

/// Every trainable sublayer against its loss: (label, report).
pub fn gradient_suite() -> Vec<(String, GradCheckReport)> {
    let cfg = grad_config();
    let mut out = Vec::new();
    let mut gs = generator_store(&cfg);
    for part in [
        "shared.word_embedding",
        "generator.encoder.layer0.",
        "generator.encoder.layer1.",
        "generator.decoder.layer0.self_attn",
        "generator.decoder.layer0.persona_attn",
        "generator.decoder.layer0.query_attn",
        "generator.decoder.layer0.pq_attn",
        "generator.decoder.layer0.ffn",
        "generator.decoder.layer0.norm",
        "generator.decoder.layer1.",
        "generator.output",
    ] {
        out.push((format!("generator loss / {part}"), check_generator(&mut gs, &cfg, &[part])));
    }
    for part in [
        "shared.word_embedding",
        "generator.encoder.",
        "rewriter.decoder.layer0.self_attn",
        "rewriter.decoder.layer0.persona_attn",
        "rewriter.decoder.layer0.proto_attn",
        "rewriter.decoder.layer0.ffn",
        "rewriter.decoder.layer0.norm",
        "rewriter.decoder.layer1.",
        "rewriter.output",
    ] {
        out.push((format!("rewriter loss / {part}"), check_rewriter(&mut gs, &cfg, &[part])));
    }
    let mut ms = matcher_store(&cfg);
    for part in ["matcher.word_embedding", "matcher.encoder.", "matcher.mlp"] {
        out.push((format!("matcher loss / {part}"), check_matcher(&mut ms, &cfg, &[part])));
    }
    out
}
