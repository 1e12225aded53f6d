use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure talking to a rewrite, generation or scoring backend.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("{provider}: {message} (attempts: {attempts}{})", status.map(|s| format!(", status {s}")).unwrap_or_default())]
pub struct ProviderError {
    pub provider: String,
    pub message: String,
    /// HTTP status of the last attempt, when there was one.
    pub status: Option<u16>,
    pub attempts: u32,
    pub retryable: bool,
}

impl ProviderError {
    pub fn new(provider: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            provider: provider.into(),
            message: message.into(),
            status: None,
            attempts: 1,
            retryable: false,
        }
    }
}

/// Pipeline stage a per-sample error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Validate,
    Rewrite,
    ScoreOriginal,
    ScoreRewrite(usize),
    Combine,
    Generate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Validate => f.write_str("validate"),
            Stage::Rewrite => f.write_str("rewrite"),
            Stage::ScoreOriginal => f.write_str("score-original"),
            Stage::ScoreRewrite(i) => write!(f, "score-rewrite-{i}"),
            Stage::Combine => f.write_str("combine"),
            Stage::Generate => f.write_str("generate"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Provider(#[from] ProviderError),

    #[error("text is empty after trimming")]
    InvalidText,

    #[error("only {scored} scored tokens, at least {min} required")]
    TooShort { scored: usize, min: usize },

    #[error("rewrite {index} came back empty after {attempts} attempts")]
    EmptyRewrite { index: usize, attempts: u32 },

    #[error("no rewrite log-perplexities supplied")]
    EmptyRewrites,

    #[error("expansion score needs at least 2 rewrites, got {n}")]
    TooFewRewrites { n: usize },

    #[error("{what} is not finite")]
    NonFinite { what: &'static str },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("no samples in class {0}")]
    EmptyClass(&'static str),

    #[error("sample {0} has no human/machine label")]
    UnlabeledSample(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),

    #[error("split would leave class {label} empty in one part ({count} samples, fraction {fraction})")]
    TooFewSamples { label: String, count: usize, fraction: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid model file: {0}")]
    InvalidModel(String),

    #[error("cache store not writable at {path}: {source}")]
    StoreUnwritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("sample {sample_id} [{stage}]: {source}")]
    Stage {
        sample_id: String,
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at(self, sample_id: &str, stage: Stage) -> Error {
        Error::Stage {
            sample_id: sample_id.to_string(),
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, with any stage annotations peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
