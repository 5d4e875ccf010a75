//! On-disk layout of trained models and run manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use gdr_core::config::ModelConfig;
use gdr_core::encoder::Vocab;
use gdr_core::pipeline::{DecodeOptions, GdrModel, MatcherModel, Variant};
use gdr_core::{GdrError, ParameterStore};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const PARAMS: &str = "model.gdr";
pub const CARD: &str = "model.json";
pub const VOCAB: &str = "vocab.txt";
pub const LOG: &str = "log.jsonl";
pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Matcher,
    Pipeline,
}

/// Everything besides the weights needed to use a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub kind: ModelKind,
    pub variant: Option<Variant>,
    pub model: ModelConfig,
    pub decode: Option<DecodeOptions>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub started: String,
    pub finished: Option<String>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    /// Creates the manifest and writes it before any work starts.
    pub fn begin(dir: &Path, command: &str, seed: u64, config: serde_json::Value) -> Result<Self, CliError> {
        let m = Self {
            command: command.to_string(),
            version: concat!("v", env!("CARGO_PKG_VERSION")).to_string(),
            seed,
            config,
            started: now(),
            finished: None,
            outputs: Vec::new(),
        };
        m.write(dir)?;
        Ok(m)
    }

    pub fn finish(mut self, dir: &Path, outputs: &[&str]) -> Result<(), CliError> {
        self.finished = Some(now());
        self.outputs = outputs.iter().map(|o| dir.join(o)).collect();
        self.write(dir)
    }

    fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_json(&dir.join(MANIFEST), self)
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| GdrError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| GdrError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn read_card(dir: &Path) -> Result<ModelCard, CliError> {
    let path = dir.join(CARD);
    let text = fs::read_to_string(&path).map_err(|e| GdrError::Io { path: path.clone(), source: e })?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Core(GdrError::Checkpoint(format!("{}: {e}", path.display())))
    })
}

pub fn save_model(dir: &Path, card: &ModelCard, store: &ParameterStore, vocab: &Vocab) -> Result<(), CliError> {
    store.save(&dir.join(PARAMS))?;
    write_json(&dir.join(CARD), card)?;
    vocab.save(&dir.join(VOCAB))?;
    Ok(())
}

pub struct Loaded<M> {
    pub card: ModelCard,
    pub model: M,
    pub vocab: Vocab,
}

fn load_parts(dir: &Path, kind: ModelKind) -> Result<(ModelCard, ParameterStore, Vocab), CliError> {
    let card = read_card(dir)?;
    if card.kind != kind {
        return Err(CliError::Core(GdrError::Checkpoint(format!(
            "{} holds a {:?} model, expected {:?}",
            dir.display(),
            card.kind,
            kind
        ))));
    }
    let store = ParameterStore::load(&dir.join(PARAMS))?;
    let vocab = Vocab::load(&dir.join(VOCAB))?;
    if vocab.len() != card.model.vocab_size {
        return Err(CliError::Core(GdrError::Checkpoint(format!(
            "{}: vocabulary has {} entries, model expects {}",
            dir.display(),
            vocab.len(),
            card.model.vocab_size
        ))));
    }
    Ok((card, store, vocab))
}

pub fn load_pipeline(dir: &Path) -> Result<Loaded<GdrModel>, CliError> {
    let (card, store, vocab) = load_parts(dir, ModelKind::Pipeline)?;
    let model = GdrModel {
        cfg: card.model.clone(),
        store,
    };
    Ok(Loaded { card, model, vocab })
}

pub fn load_matcher(dir: &Path) -> Result<Loaded<MatcherModel>, CliError> {
    let (card, store, vocab) = load_parts(dir, ModelKind::Matcher)?;
    let model = MatcherModel {
        cfg: card.model.clone(),
        store,
    };
    Ok(Loaded { card, model, vocab })
}

/// Streams one JSON object per line.
pub struct JsonLines {
    out: std::io::BufWriter<fs::File>,
    path: PathBuf,
}

impl JsonLines {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let f = fs::File::create(path).map_err(|e| GdrError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(Self {
            out: std::io::BufWriter::new(f),
            path: path.to_path_buf(),
        })
    }

    pub fn push<T: Serialize>(&mut self, value: &T) -> Result<(), CliError> {
        let line = serde_json::to_string(value).expect("serializable");
        writeln!(self.out, "{line}").map_err(|e| self.io(e))
    }

    pub fn close(mut self) -> Result<(), CliError> {
        self.out.flush().map_err(|e| self.io(e))
    }

    fn io(&self, e: std::io::Error) -> CliError {
        CliError::Core(GdrError::Io {
            path: self.path.clone(),
            source: e,
        })
    }
}
