//! Effective detector configuration: defaults, then the TOML file, then
//! environment variables and flags (clap resolves those two).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use varybalance::config::{RewriterSettings, ScorerSettings};
use varybalance::{CacheStore, DetectorConfig, RemoteSettings, RunContext};

use crate::args::ProviderArgs;

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_CACHE_DIR: &str = ".varybalance-cache";

pub fn load_file(path: &Path) -> Result<DetectorConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg: DetectorConfig =
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let rebase = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    match &mut cfg.scorer {
        Some(ScorerSettings::Ngram { model }) => rebase(model),
        Some(ScorerSettings::Table { path }) => rebase(path),
        _ => {}
    }
    if let Some(dir) = &mut cfg.cache.dir {
        rebase(dir);
    }
    Ok(cfg)
}

fn remote(model: &str, args: &ProviderArgs, existing: Option<&RemoteSettings>) -> RemoteSettings {
    let mut s = existing
        .cloned()
        .unwrap_or_else(|| RemoteSettings::new(DEFAULT_BASE_URL, model));
    s.model = model.to_string();
    if let Some(url) = &args.base_url {
        s.base_url = url.clone();
    }
    if let Some(env) = &args.api_key_env {
        s.api_key_env = env.clone();
    }
    s
}

fn parse_scorer(spec: &str, args: &ProviderArgs, current: Option<&ScorerSettings>) -> Result<ScorerSettings> {
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    if rest.is_empty() {
        bail!("--scorer expects ngram:PATH, table:PATH or openai-completions:MODEL, got {spec:?}");
    }
    Ok(match kind {
        "ngram" => ScorerSettings::Ngram { model: rest.into() },
        "table" => ScorerSettings::Table { path: rest.into() },
        "openai-completions" | "openai" => {
            let existing = match current {
                Some(ScorerSettings::OpenaiCompletions(s)) => Some(s),
                _ => None,
            };
            ScorerSettings::OpenaiCompletions(remote(rest, args, existing))
        }
        other => bail!("unknown scorer kind {other:?}"),
    })
}

fn parse_rewriter(spec: &str, args: &ProviderArgs, current: &RewriterSettings) -> Result<RewriterSettings> {
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    Ok(match kind {
        "mock" => RewriterSettings::Mock,
        "identity" => RewriterSettings::Identity,
        "openai-chat" | "openai" if !rest.is_empty() => {
            let existing = match current {
                RewriterSettings::OpenaiChat(s) => Some(s),
                _ => None,
            };
            RewriterSettings::OpenaiChat(remote(rest, args, existing))
        }
        _ => bail!("--rewriter expects mock, identity or openai-chat:MODEL, got {spec:?}"),
    })
}

/// Builds the effective configuration for a run.
pub fn resolve(args: &ProviderArgs) -> Result<DetectorConfig> {
    let mut cfg = match &args.config {
        Some(path) => load_file(path)?,
        None => DetectorConfig::default(),
    };
    if let Some(spec) = &args.scorer {
        cfg.scorer = Some(parse_scorer(spec, args, cfg.scorer.as_ref())?);
    }
    if let Some(spec) = &args.rewriter {
        cfg.rewriter = parse_rewriter(spec, args, &cfg.rewriter)?;
    }
    // --base-url / --api-key-env also apply to remote providers from the file
    if args.base_url.is_some() || args.api_key_env.is_some() {
        if let RewriterSettings::OpenaiChat(s) = &mut cfg.rewriter {
            *s = remote(&s.model.clone(), args, Some(s));
        }
        if let Some(ScorerSettings::OpenaiCompletions(s)) = &mut cfg.scorer {
            *s = remote(&s.model.clone(), args, Some(s));
        }
    }
    if let Some(k) = args.k {
        cfg.n_rewrites = k;
    }
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    if let Some(r) = args.rho_cap {
        cfg.rho_cap = r;
    }
    if let Some(seed) = args.seed {
        cfg.params.seed = Some(seed);
    }
    if let Some(t) = args.temperature {
        cfg.params.temperature = Some(t);
    }
    if let Some(p) = &args.prompt {
        cfg.prompt = p.clone();
    }
    if let Some(m) = args.min_tokens {
        cfg.min_tokens = m;
    }
    if let Some(dir) = &args.cache_dir {
        cfg.cache.dir = Some(dir.clone());
    }
    if args.no_cache {
        cfg.cache.enabled = false;
    }
    if let Some(n) = args.max_inflight {
        cfg.max_inflight = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cache_dir(cfg: &DetectorConfig) -> PathBuf {
    cfg.cache
        .dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR))
}

pub fn run_context(cfg: &DetectorConfig) -> Result<RunContext> {
    let mut ctx = if cfg.cache.enabled {
        let dir = cache_dir(cfg);
        let store = CacheStore::open(&dir).with_context(|| format!("opening cache {}", dir.display()))?;
        RunContext::with_cache(Arc::new(store))
    } else {
        RunContext::default()
    };
    ctx.empty_retries = cfg.empty_retries;
    Ok(ctx)
}

pub fn require_scorer(cfg: &DetectorConfig) -> Result<&ScorerSettings> {
    cfg.scorer
        .as_ref()
        .context("no scorer configured; pass --scorer or set [scorer] in the config file")
}
