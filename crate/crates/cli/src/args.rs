use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use varybalance::evaluation::ScoreField;
use varybalance::scorer::TokenizerMode;
use varybalance::{Label, Variant};

#[derive(Parser, Debug)]
#[command(
    name = "varybalance",
    version,
    about = "Detect machine-generated text from how much its rewrites vary"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Score every sample of a corpus
    Detect(DetectArgs),
    /// AUROC, ROC curve and class statistics for a scores file
    Eval(EvalArgs),
    /// MSD comparison of paired human/machine answers
    Study(StudyArgs),
    /// Produce and cache rewrites only
    Rewrite(CorpusArgs),
    /// Log-perplexity of each sample only
    Score(CorpusArgs),
    /// Inspect the response cache
    Cache {
        #[command(subcommand)]
        action: CacheCommand,
    },
    /// Fit an add-k n-gram scorer
    FitNgram(FitArgs),
    /// Write a synthetic paired corpus with a planted scorer table
    Synth(SynthArgs),
}

#[derive(Subcommand, Debug)]
pub enum CacheCommand {
    /// Entry counts and lifetime hit rate
    Stats {
        #[arg(long, env = "VARYBALANCE_CACHE_DIR")]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

/// Detector settings. Flags beat environment variables, which beat the
/// config file, which beats built-in defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct ProviderArgs {
    /// TOML config file
    #[arg(long, env = "VARYBALANCE_CONFIG")]
    pub config: Option<PathBuf>,
    /// ngram:PATH, table:PATH or openai-completions:MODEL
    #[arg(long, env = "VARYBALANCE_SCORER")]
    pub scorer: Option<String>,
    /// mock, identity or openai-chat:MODEL
    #[arg(long, env = "VARYBALANCE_REWRITER")]
    pub rewriter: Option<String>,
    /// Base URL for openai-* providers
    #[arg(long, env = "VARYBALANCE_BASE_URL")]
    pub base_url: Option<String>,
    /// Environment variable holding the API token for openai-* providers
    #[arg(long, env = "VARYBALANCE_API_KEY_ENV")]
    pub api_key_env: Option<String>,
    /// Rewrites per sample
    #[arg(long, env = "VARYBALANCE_K")]
    pub k: Option<usize>,
    #[arg(long, env = "VARYBALANCE_VARIANT")]
    pub variant: Option<Variant>,
    #[arg(long, env = "VARYBALANCE_RHO_CAP")]
    pub rho_cap: Option<f64>,
    /// Rewriter/generator seed
    #[arg(long, env = "VARYBALANCE_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "VARYBALANCE_TEMPERATURE")]
    pub temperature: Option<f64>,
    #[arg(long, env = "VARYBALANCE_PROMPT")]
    pub prompt: Option<String>,
    #[arg(long, env = "VARYBALANCE_MIN_TOKENS")]
    pub min_tokens: Option<usize>,
    #[arg(long, env = "VARYBALANCE_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub no_cache: bool,
    /// Upper bound on concurrent provider requests
    #[arg(long, env = "VARYBALANCE_MAX_INFLIGHT")]
    pub max_inflight: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct OutArgs {
    /// Parent directory for run directories
    #[arg(long, env = "VARYBALANCE_OUT", default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// JSON-lines corpus
    pub corpus: PathBuf,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub out: OutArgs,
    /// Also write predicted labels using this threshold
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CorpusArgs {
    pub corpus: PathBuf,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// scores.jsonl written by `detect`
    pub scores: PathBuf,
    /// Corpus carrying the labels
    #[arg(long, required_unless_present = "pairs")]
    pub labels: Option<PathBuf>,
    /// Paired corpus; gives labels and aligned pairs for the MSD summary
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long, default_value = "human")]
    pub positive: Label,
    /// auto, base, expansion or log-ppl
    #[arg(long, default_value = "auto")]
    pub field: ScoreField,
    /// Fixed decision threshold; otherwise one is calibrated
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, default_value_t = 0.2)]
    pub calibration_fraction: f64,
    /// Split seed for calibration
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = varybalance::config::DEFAULT_RHO_CAP)]
    pub rho_cap: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct StudyArgs {
    /// Paired corpus
    pub pairs: PathBuf,
    /// Replace the machine answers with fresh ones generated from the questions
    #[arg(long)]
    pub regenerate: bool,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Training files: .jsonl corpora or plain text, one document per line
    #[arg(required = true)]
    pub train: Vec<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    #[arg(long, default_value_t = 0.1)]
    pub smoothing: f64,
    #[arg(long, default_value = "whitespace")]
    pub tokenizer: TokenizerMode,
    /// Model file to write
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 400)]
    pub pairs: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Share of human answers with machine-sized deviations
    #[arg(long, default_value_t = 0.04)]
    pub overlap: f64,
    /// Directory for pairs.jsonl, corpus.jsonl, table.jsonl and config.toml
    #[arg(long)]
    pub output: PathBuf,
}
