use std::fs;
use std::path::{Path, PathBuf};

use gdr_core::config::ModelConfig;
use gdr_core::data::{self, SyntheticSpec};
use gdr_core::encoder::{self, Vocab};
use gdr_core::eval::{self, ResponseRecord};
use gdr_core::pipeline::{
    self, DecodeOptions, GdrModel, MatcherModel, MatcherTrainingConfig, Responder, TrainingConfig, Variant,
};
use gdr_core::GdrError;
use serde::Serialize;
use serde_json::json;

use crate::artifacts::{self, JsonLines, ModelCard, ModelKind, RunManifest};
use crate::{CliError, EvalArgs, ModelArgs, OptimArgs, RespondArgs, SynthArgs, TrainGdrArgs, TrainMatcherArgs};

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

/// `explicit`, else `dir/name`, else a usage error naming `flag`.
fn input(explicit: &Option<PathBuf>, dir: &Option<PathBuf>, name: &str, flag: &str) -> Result<PathBuf, CliError> {
    explicit
        .clone()
        .or_else(|| dir.as_ref().map(|d| d.join(name)))
        .ok_or_else(|| CliError::Usage(format!("--{flag} (or --data) is required")))
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        seed: a.seed.unwrap_or(d.seed),
        topics: a.topics.unwrap_or(d.topics),
        values_per_topic: a.values.unwrap_or(d.values_per_topic),
        persona_size: a.persona_size.unwrap_or(d.persona_size),
        train_dialogues: a.train_dialogues.unwrap_or(d.train_dialogues),
        valid_dialogues: a.valid_dialogues.unwrap_or(d.valid_dialogues),
        test_dialogues: a.test_dialogues.unwrap_or(d.test_dialogues),
        nli_train: a.nli_train.unwrap_or(d.nli_train),
        nli_test: a.nli_test.unwrap_or(d.nli_test),
        nli_persona_premise: a.persona_premise.unwrap_or(d.nli_persona_premise),
        ..d
    };
    spec.validate()?;
    artifacts::create_dir(&a.out_dir)?;
    let corpus = data::make_synthetic(&spec)?;
    corpus.write(&a.out_dir)?;
    artifacts::write_json(&a.out_dir.join("spec.json"), &spec)?;
    println!(
        "{}",
        json!({
            "train": corpus.train.len(),
            "valid": corpus.valid.len(),
            "test": corpus.test.len(),
            "nli_train": corpus.nli_train.len(),
            "nli_test": corpus.nli_test.len(),
            "vocab": corpus.vocab()?.len(),
        })
    );
    Ok(())
}

fn model_config(m: &ModelArgs, vocab_size: usize) -> Result<ModelConfig, CliError> {
    let d = ModelConfig::desk(vocab_size);
    let hidden = m.hidden.unwrap_or(d.hidden);
    let layers = |own: Option<usize>, fallback: usize| own.or(m.layers).unwrap_or(fallback);
    let cfg = ModelConfig {
        vocab_size,
        hidden,
        heads: m.heads.unwrap_or(d.heads),
        ffn_inner: m.ffn_inner.unwrap_or(if m.hidden.is_some() { 2 * hidden } else { d.ffn_inner }),
        generator_layers: layers(m.generator_layers, d.generator_layers),
        matcher_layers: layers(m.matcher_layers, d.matcher_layers),
        rewriter_layers: layers(m.rewriter_layers, d.rewriter_layers),
        matcher_mlp_hidden: m.mlp_hidden.unwrap_or(if m.hidden.is_some() { hidden } else { d.matcher_mlp_hidden }),
        max_positions: d.max_positions,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_vocab(path: &Path) -> Result<Vocab, CliError> {
    Ok(Vocab::load(path)?)
}

pub fn train_matcher(a: &TrainMatcherArgs) -> Result<(), CliError> {
    let train_path = input(&a.train, &a.data, "nli.train.jsonl", "train")?;
    let heldout_path = a.heldout.clone().or_else(|| a.data.as_ref().map(|d| d.join("nli.test.jsonl")));
    let vocab_path = input(&a.vocab, &a.data, "vocab.txt", "vocab")?;
    let vocab = load_vocab(&vocab_path)?;
    let mut cfg = MatcherTrainingConfig::desk(model_config(&a.model, vocab.len())?);
    apply_optim(&a.optim, &mut cfg.seed, &mut cfg.epochs, &mut cfg.max_steps, &mut cfg.token_batch_size, &mut cfg.lr_warmup_steps, &mut cfg.lr_scale);
    cfg.validate()?;

    let train = pipeline::prepare_nli(&data::load_nli(&train_path)?, &vocab)?;
    let heldout = match &heldout_path {
        Some(p) => Some(pipeline::prepare_nli(&data::load_nli(p)?, &vocab)?),
        None => None,
    };
    artifacts::create_dir(&a.out_dir)?;
    let manifest = RunManifest::begin(
        &a.out_dir,
        "train-matcher",
        cfg.seed,
        json!({"training": to_value(&cfg), "train": train_path, "heldout": heldout_path, "vocab": vocab_path}),
    )?;
    let mut log = JsonLines::create(&a.out_dir.join(artifacts::LOG))?;
    let mut log_err = Ok(());
    let out = pipeline::train_matcher(&train, heldout.as_deref(), &cfg, |l| {
        if log_err.is_ok() {
            log_err = log.push(l);
        }
    })?;
    log_err?;
    log.close()?;
    for e in &out.epochs {
        eprintln!(
            "epoch {} steps {} loss {:.4} heldout {}",
            e.epoch,
            e.steps,
            e.train_loss,
            e.heldout_accuracy.map_or("-".to_string(), |x| format!("{x:.4}"))
        );
    }
    let card = ModelCard {
        kind: ModelKind::Matcher,
        variant: None,
        model: cfg.model.clone(),
        decode: None,
    };
    artifacts::save_model(&a.out_dir, &card, &out.model.store, &vocab)?;
    artifacts::write_json(&a.out_dir.join(artifacts::METRICS), &out.epochs)?;
    manifest.finish(
        &a.out_dir,
        &[artifacts::PARAMS, artifacts::CARD, artifacts::VOCAB, artifacts::LOG, artifacts::METRICS],
    )
}

fn apply_optim(
    o: &OptimArgs,
    seed: &mut u64,
    epochs: &mut usize,
    max_steps: &mut Option<u64>,
    batch: &mut usize,
    lr_warmup: &mut u64,
    lr_scale: &mut f64,
) {
    if let Some(v) = o.seed {
        *seed = v;
    }
    if let Some(v) = o.epochs {
        *epochs = v;
    }
    if o.max_steps.is_some() {
        *max_steps = o.max_steps;
    }
    if let Some(v) = o.batch_tokens {
        *batch = v;
    }
    if let Some(v) = o.lr_warmup_steps {
        *lr_warmup = v;
    }
    if let Some(v) = o.lr_scale {
        *lr_scale = v;
    }
}

fn same_vocab(a: &Vocab, b: &Vocab, what: &str) -> Result<(), CliError> {
    if a.tokens() != b.tokens() {
        return Err(CliError::Core(GdrError::Checkpoint(format!(
            "{what} was trained with a different vocabulary"
        ))));
    }
    Ok(())
}

pub fn train_gdr(a: &TrainGdrArgs) -> Result<(), CliError> {
    if a.variant.needs_matcher() && a.matcher.is_none() {
        return Err(CliError::Usage("--variant gdr requires --matcher".into()));
    }
    let train_path = input(&a.train, &a.data, "dialogues.train.jsonl", "train")?;
    let vocab_path = input(&a.vocab, &a.data, "vocab.txt", "vocab")?;
    let vocab = load_vocab(&vocab_path)?;
    let mut cfg = TrainingConfig::desk(model_config(&a.model, vocab.len())?, a.variant);
    apply_optim(&a.optim, &mut cfg.seed, &mut cfg.epochs, &mut cfg.max_steps, &mut cfg.token_batch_size, &mut cfg.lr_warmup_steps, &mut cfg.lr_scale);
    if let Some(v) = a.warmup_steps {
        cfg.warmup_steps = v;
    }
    if let Some(v) = a.delete_prob {
        cfg.warmup_delete_prob = v;
    }
    if let Some(v) = a.delete_fraction {
        cfg.delete_fraction = v;
    }
    if let Some(v) = a.max_decode_len {
        cfg.max_decode_len = v;
    }
    if let Some(v) = a.match_premise {
        cfg.match_premise = v;
    }
    cfg.validate()?;
    let matcher = match (&a.matcher, a.variant.needs_matcher()) {
        (Some(dir), true) => {
            let m = artifacts::load_matcher(dir)?;
            same_vocab(&m.vocab, &vocab, "the matcher")?;
            Some(m.model)
        }
        _ => None,
    };
    let train = pipeline::prepare_dialogues(&data::load_dialogues(&train_path)?, &vocab)?;

    artifacts::create_dir(&a.out_dir)?;
    let manifest = RunManifest::begin(
        &a.out_dir,
        "train-gdr",
        cfg.seed,
        json!({"training": to_value(&cfg), "train": train_path, "vocab": vocab_path, "matcher": a.matcher}),
    )?;
    let mut log = JsonLines::create(&a.out_dir.join(artifacts::LOG))?;
    let mut log_err = Ok(());
    let init = GdrModel::init(&cfg.model, cfg.variant, cfg.seed)?;
    let out = pipeline::train_gdr_from(init, &train, matcher.as_ref(), &cfg, |l, _| {
        if l.step % 100 == 0 {
            eprintln!("step {} [{}] loss {:.4} (g {:.4} r {:.4})", l.step, l.phase, l.loss, l.loss_g, l.loss_r);
        }
        if log_err.is_ok() {
            log_err = log.push(l);
        }
    })?;
    log_err?;
    log.close()?;
    let card = ModelCard {
        kind: ModelKind::Pipeline,
        variant: Some(cfg.variant),
        model: cfg.model.clone(),
        decode: Some(cfg.decode_options()),
    };
    artifacts::save_model(&a.out_dir, &card, &out.model.store, &vocab)?;
    manifest.finish(&a.out_dir, &[artifacts::PARAMS, artifacts::CARD, artifacts::VOCAB, artifacts::LOG])
}

/// Checkpoint, optional matcher and decode settings shared by respond / eval.
struct Session {
    pipeline: artifacts::Loaded<GdrModel>,
    matcher: Option<MatcherModel>,
    variant: Variant,
    opts: DecodeOptions,
}

impl Session {
    fn open(
        checkpoint: &Path,
        matcher: Option<&Path>,
        variant: Option<Variant>,
        seed: Option<u64>,
        max_len: Option<usize>,
    ) -> Result<Self, CliError> {
        let pipeline = artifacts::load_pipeline(checkpoint)?;
        let variant = variant.or(pipeline.card.variant).unwrap_or(Variant::G);
        if variant.needs_matcher() && matcher.is_none() {
            return Err(CliError::Usage("--variant gdr requires --matcher".into()));
        }
        let matcher = match matcher {
            Some(dir) => {
                let m = artifacts::load_matcher(dir)?;
                same_vocab(&m.vocab, &pipeline.vocab, "the matcher")?;
                Some(m.model)
            }
            None => None,
        };
        let mut opts = pipeline.card.decode.clone().unwrap_or_default();
        if let Some(s) = seed {
            opts.seed = s;
        }
        if let Some(n) = max_len {
            opts.max_len = n;
        }
        Ok(Self {
            pipeline,
            matcher,
            variant,
            opts,
        })
    }

    fn responder(&self) -> Result<Responder<'_>, CliError> {
        Ok(Responder::new(
            &self.pipeline.model,
            self.matcher.as_ref(),
            self.variant,
            self.opts.clone(),
        )?)
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| GdrError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

#[derive(Serialize)]
struct TraceLine {
    query: String,
    prototype: String,
    label: Option<String>,
    probs: Option<[f64; 3]>,
    response_weights: Option<Vec<f64>>,
    persona_weights: Option<Vec<f64>>,
    masked: Option<String>,
    masked_positions: Option<Vec<usize>>,
    #[serde(rename = "final")]
    final_response: String,
}

pub fn respond(a: &RespondArgs) -> Result<(), CliError> {
    let session = Session::open(&a.checkpoint, a.matcher.as_deref(), a.variant, a.seed, a.max_decode_len)?;
    let vocab = &session.pipeline.vocab;
    let sentences: Vec<Vec<usize>> = read_lines(&a.persona)?.iter().map(|s| vocab.encode(s)).collect();
    if sentences.is_empty() {
        return Err(GdrError::Empty("persona file").into());
    }
    let mut queries = a.query.clone();
    if let Some(p) = &a.queries {
        queries.extend(read_lines(p)?);
    }
    let responder = session.responder()?;
    for q in &queries {
        let ids = vocab.encode(q);
        if ids.is_empty() {
            return Err(GdrError::Empty("query").into());
        }
        let t = responder.respond(&sentences, &ids)?;
        let line = TraceLine {
            query: encoder::normalize(q),
            prototype: vocab.decode(t.prototype.content()),
            label: t.verdict.as_ref().map(|v| v.label.to_string()),
            probs: t.verdict.as_ref().map(|v| v.probs),
            response_weights: t.verdict.as_ref().map(|v| v.response_weights.clone()),
            persona_weights: t.verdict.as_ref().map(|v| v.persona_weights.clone()),
            masked: t.masked.as_ref().map(|m| vocab.decode(m.ids())),
            masked_positions: t.masked.as_ref().map(|m| m.masked_positions().to_vec()),
            final_response: vocab.decode(t.final_content()),
        };
        println!("{}", serde_json::to_string(&line).expect("serializable"));
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let session = Session::open(&a.checkpoint, Some(&a.matcher), a.variant, a.seed, a.max_decode_len)?;
    let path = input(&a.dialogues, &a.data, "dialogues.test.jsonl", "dialogues")?;
    let vocab = &session.pipeline.vocab;
    let data = pipeline::prepare_dialogues(&data::load_dialogues(&path)?, vocab)?;
    if data.is_empty() {
        return Err(GdrError::Empty("evaluation dialogues").into());
    }
    let responder = session.responder()?;
    let matcher = session.matcher.as_ref().expect("eval always loads a matcher");
    let (report, traces) = eval::evaluate(&responder, matcher, &data)?;
    let text = serde_json::to_string_pretty(&report).expect("serializable");
    println!("{text}");
    if let Some(dir) = &a.out_dir {
        artifacts::create_dir(dir)?;
        artifacts::write_json(&dir.join("report.json"), &report)?;
        let mut out = JsonLines::create(&dir.join("responses.jsonl"))?;
        for (ex, t) in data.iter().zip(&traces) {
            out.push(&ResponseRecord::new(vocab, &ex.query, t))?;
        }
        out.close()?;
    }
    Ok(())
}
