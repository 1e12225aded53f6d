//! Lookup-table scorer: returns a fixed log-perplexity for each known text.
//!
//! Used by the synthetic study fixtures to plant per-text log-perplexities
//! while still running the full rewrite/score/combine pipeline.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScorerProvider;
use crate::error::{Error, ProviderError, Result};
use crate::types::{text_digest, TokenLogProbs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub text_digest: String,
    pub log_ppl: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TableScorer {
    table: BTreeMap<String, f64>,
    model_id: String,
}

impl TableScorer {
    pub fn from_entries(entries: impl IntoIterator<Item = TableEntry>) -> Result<Self> {
        let mut table = BTreeMap::new();
        for e in entries {
            if !(e.log_ppl.is_finite() && e.log_ppl >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "planted log-perplexity {} must be finite and >= 0",
                    e.log_ppl
                )));
            }
            table.insert(e.text_digest, e.log_ppl);
        }
        let mut scorer = Self {
            table,
            model_id: String::new(),
        };
        let digest = text_digest(&serde_json::to_string(&scorer.table).expect("table serializes"));
        scorer.model_id = format!("table-{}", &digest[..12]);
        Ok(scorer)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn get(&self, text: &str) -> Option<f64> {
        self.table.get(&text_digest(text)).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = TableEntry> + '_ {
        self.table.iter().map(|(d, v)| TableEntry {
            text_digest: d.clone(),
            log_ppl: *v,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: TableEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(e);
        }
        Self::from_entries(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for e in self.entries() {
            serde_json::to_writer(&mut out, &e)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

impl ScorerProvider for TableScorer {
    fn provider_id(&self) -> &str {
        "table"
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    /// Every whitespace token gets the planted value, so the mean is exact.
    fn token_logprobs(&self, text: &str) -> Result<TokenLogProbs, ProviderError> {
        let target = self
            .get(text)
            .ok_or_else(|| ProviderError::new(self.scorer_id(), "text not present in score table"))?;
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        let logprobs = vec![-target; tokens.len()];
        Ok(TokenLogProbs {
            scorer_id: self.scorer_id(),
            tokens,
            logprobs,
            skipped_prefix: 0,
        })
    }
}
