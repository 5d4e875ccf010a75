//! `gdr`: synthetic data, matcher and pipeline training, inference and
//! evaluation from the command line.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gdr_core::pipeline::{MatchPremise, Variant};
use gdr_core::GdrError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] GdrError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(GdrError::Invalid(_)) => 1,
            CliError::Core(GdrError::NonFinite(_) | GdrError::MissingGrad(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gdr", version, about = "Persona-consistent dialogue: generate, delete, rewrite")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic dialogue / NLI corpus.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Train the consistency matcher on NLI triples.
    #[command(args_override_self = true)]
    TrainMatcher(TrainMatcherArgs),
    /// Train the generator (and rewriter) on dialogues.
    #[command(args_override_self = true)]
    TrainGdr(TrainGdrArgs),
    /// Run the pipeline on queries and print one JSON trace per query.
    #[command(args_override_self = true)]
    Respond(RespondArgs),
    /// Perplexity, distinct-n and entailment ratio on a dialogue file.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Flat `key = value` file; command-line flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub values: Option<usize>,
    #[arg(long)]
    pub persona_size: Option<usize>,
    #[arg(long)]
    pub train_dialogues: Option<usize>,
    #[arg(long)]
    pub valid_dialogues: Option<usize>,
    #[arg(long)]
    pub test_dialogues: Option<usize>,
    #[arg(long)]
    pub nli_train: Option<usize>,
    #[arg(long)]
    pub nli_test: Option<usize>,
    /// Share of NLI premises that are a whole persona.
    #[arg(long)]
    pub persona_premise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn_inner: Option<usize>,
    /// Layer count for every stack not set individually.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub generator_layers: Option<usize>,
    #[arg(long)]
    pub rewriter_layers: Option<usize>,
    #[arg(long)]
    pub matcher_layers: Option<usize>,
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Token budget per batch.
    #[arg(long)]
    pub batch_tokens: Option<usize>,
    #[arg(long)]
    pub lr_warmup_steps: Option<u64>,
    #[arg(long)]
    pub lr_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainMatcherArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory written by `synth`; supplies defaults for the file flags.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct TrainGdrArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "gdr")]
    pub variant: Variant,
    /// Trained matcher directory (required for variant gdr).
    #[arg(long)]
    pub matcher: Option<PathBuf>,
    /// Steps of random deletion before the matcher takes over.
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    #[arg(long)]
    pub delete_prob: Option<f64>,
    #[arg(long)]
    pub delete_fraction: Option<f64>,
    #[arg(long)]
    pub max_decode_len: Option<usize>,
    #[arg(long)]
    pub match_premise: Option<MatchPremise>,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct RespondArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory written by `train-gdr`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub matcher: Option<PathBuf>,
    /// Defaults to the variant the checkpoint was trained as.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Persona sentences, one per line.
    #[arg(long)]
    pub persona: PathBuf,
    #[arg(long, required_unless_present = "queries")]
    pub query: Vec<String>,
    /// Queries, one per line.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Overrides the seed used by random deletion at inference.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_decode_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Matcher used for the entailment ratio (and deletion for variant gdr).
    #[arg(long)]
    pub matcher: PathBuf,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Directory written by `synth`; its test split is the default input.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub dialogues: Option<PathBuf>,
    /// Writes report.json and responses.jsonl here as well.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_decode_len: Option<usize>,
}

fn run() -> Result<(), CliError> {
    let argv = config::expand_args(std::env::args_os().collect())?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::TrainMatcher(a) => commands::train_matcher(&a),
        Command::TrainGdr(a) => commands::train_gdr(&a),
        Command::Respond(a) => commands::respond(&a),
        Command::Eval(a) => commands::eval(&a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            eprintln!("error: {}", msg.trim_start_matches("error: ").trim_end());
            ExitCode::from(e.exit_code())
        }
    }
}
