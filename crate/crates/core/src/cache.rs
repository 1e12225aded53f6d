//! Content-addressed on-disk store for provider outputs.
//!
//! Layout under the cache root:
//!
//! ```text
//! v1/<d0d1>/<d2d3>/<digest>.entry   one file per key
//! quarantine/                        entries that failed their checksum
//! usage.jsonl                        per-run hit/miss counters
//! ```
//!
//! An entry is a single JSON header line (format version, the full key,
//! payload checksum) followed by the JSON payload. Writers go through a
//! temporary file in the target directory and an atomic rename, so readers
//! never observe a partial entry. Only raw provider output is stored, never
//! derived scores.

use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::TokenLogProbs;

pub const CACHE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheKind {
    Rewrite,
    Score,
    Generate,
}

impl CacheKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CacheKind::Rewrite => "rewrite",
            CacheKind::Score => "score",
            CacheKind::Generate => "generate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub kind: CacheKind,
    pub provider_id: String,
    pub model_id: String,
    /// Instruction text for rewrites; empty for scores.
    pub prompt: String,
    pub params_digest: String,
    /// SHA-256 of the input text.
    pub text_digest: String,
    /// Rewrite index; 0 for scores and originals.
    pub index: usize,
}

impl CacheKey {
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(CACHE_FORMAT_VERSION.to_le_bytes());
        for field in [
            self.kind.as_str(),
            &self.provider_id,
            &self.model_id,
            &self.prompt,
            &self.params_digest,
            &self.text_digest,
        ] {
            h.update((field.len() as u64).to_le_bytes());
            h.update(field.as_bytes());
        }
        h.update((self.index as u64).to_le_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum CachedValue {
    Text(String),
    LogProbs(TokenLogProbs),
}

#[derive(Debug, Serialize, Deserialize)]
struct EntryHeader {
    version: u32,
    key: CacheKey,
    checksum: String,
}

/// In-process access counters.
#[derive(Debug, Default)]
struct Counters {
    hits: AtomicU64,
    misses: AtomicU64,
    writes: AtomicU64,
    corrupt: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessCounts {
    pub hits: u64,
    pub misses: u64,
    pub writes: u64,
    pub corrupt: u64,
}

impl AccessCounts {
    pub fn hit_rate(&self) -> Option<f64> {
        let total = self.hits + self.misses;
        (total > 0).then(|| self.hits as f64 / total as f64)
    }
}

/// One line of `usage.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub command: String,
    pub counts: AccessCounts,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StoreStats {
    pub entries: std::collections::BTreeMap<String, u64>,
    pub total_entries: u64,
    pub quarantined: u64,
    /// Counters summed over every recorded run.
    pub lifetime: AccessCounts,
    pub runs: u64,
}

#[derive(Debug)]
pub struct CacheStore {
    root: PathBuf,
    counters: Counters,
}

impl CacheStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let data = root.join(format!("v{CACHE_FORMAT_VERSION}"));
        fs::create_dir_all(&data).map_err(|source| Error::StoreUnwritable {
            path: data.clone(),
            source,
        })?;
        Ok(Self {
            root,
            counters: Counters::default(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry_path(&self, key: &CacheKey) -> PathBuf {
        let d = key.digest();
        self.root
            .join(format!("v{CACHE_FORMAT_VERSION}"))
            .join(&d[0..2])
            .join(&d[2..4])
            .join(format!("{d}.entry"))
    }

    pub fn counts(&self) -> AccessCounts {
        AccessCounts {
            hits: self.counters.hits.load(Ordering::Relaxed),
            misses: self.counters.misses.load(Ordering::Relaxed),
            writes: self.counters.writes.load(Ordering::Relaxed),
            corrupt: self.counters.corrupt.load(Ordering::Relaxed),
        }
    }

    /// Looks up `key`. Corrupt entries are moved aside and reported as a miss.
    pub fn get(&self, key: &CacheKey) -> Result<Option<CachedValue>> {
        let found = self.read_entry(key)?;
        let counter = if found.is_some() {
            &self.counters.hits
        } else {
            &self.counters.misses
        };
        counter.fetch_add(1, Ordering::Relaxed);
        Ok(found)
    }

    fn read_entry(&self, key: &CacheKey) -> Result<Option<CachedValue>> {
        let path = self.entry_path(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let Some(split) = bytes.iter().position(|b| *b == b'\n') else {
            self.quarantine(&path, "missing header");
            return Ok(None);
        };
        let (head, payload) = (&bytes[..split], &bytes[split + 1..]);
        let header: EntryHeader = match serde_json::from_slice(head) {
            Ok(h) => h,
            Err(_) => {
                self.quarantine(&path, "unreadable header");
                return Ok(None);
            }
        };
        if header.version != CACHE_FORMAT_VERSION || header.key != *key {
            return Ok(None);
        }
        if header.checksum != hex::encode(Sha256::digest(payload)) {
            self.quarantine(&path, "checksum mismatch");
            return Ok(None);
        }
        match serde_json::from_slice(payload) {
            Ok(v) => Ok(Some(v)),
            Err(_) => {
                self.quarantine(&path, "unreadable payload");
                Ok(None)
            }
        }
    }

    fn quarantine(&self, path: &Path, why: &str) {
        self.counters.corrupt.fetch_add(1, Ordering::Relaxed);
        log::warn!("cache entry {} is corrupt ({why}); quarantined", path.display());
        let dir = self.root.join("quarantine");
        let moved = fs::create_dir_all(&dir).and_then(|_| {
            let name = path.file_name().unwrap_or_default();
            fs::rename(path, dir.join(name))
        });
        if moved.is_err() {
            let _ = fs::remove_file(path);
        }
    }

    /// Stores `value` under `key`. Durable once this returns.
    pub fn put(&self, key: &CacheKey, value: &CachedValue) -> Result<()> {
        let payload = serde_json::to_vec(value)?;
        let header = EntryHeader {
            version: CACHE_FORMAT_VERSION,
            key: key.clone(),
            checksum: hex::encode(Sha256::digest(&payload)),
        };
        let mut bytes = serde_json::to_vec(&header)?;
        bytes.push(b'\n');
        bytes.extend_from_slice(&payload);

        let path = self.entry_path(key);
        if fs::read(&path).is_ok_and(|existing| existing == bytes) {
            return Ok(());
        }
        let dir = path.parent().expect("entry has a parent");
        let unwritable = |source| Error::StoreUnwritable {
            path: path.clone(),
            source,
        };
        fs::create_dir_all(dir).map_err(unwritable)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(unwritable)?;
        tmp.write_all(&bytes).map_err(unwritable)?;
        tmp.as_file().sync_all().map_err(unwritable)?;
        tmp.persist(&path).map_err(|e| unwritable(e.error))?;
        self.counters.writes.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    pub fn get_text(&self, key: &CacheKey) -> Result<Option<String>> {
        Ok(match self.get(key)? {
            Some(CachedValue::Text(t)) => Some(t),
            _ => None,
        })
    }

    pub fn get_logprobs(&self, key: &CacheKey) -> Result<Option<TokenLogProbs>> {
        Ok(match self.get(key)? {
            Some(CachedValue::LogProbs(t)) => Some(t),
            _ => None,
        })
    }

    /// Appends this process's counters to the usage log.
    pub fn record_usage(&self, command: &str) -> Result<()> {
        let record = UsageRecord {
            command: command.to_string(),
            counts: self.counts(),
        };
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        let path = self.root.join("usage.jsonl");
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| Error::StoreUnwritable {
                path: path.clone(),
                source,
            })?;
        f.write_all(line.as_bytes())?;
        Ok(())
    }

    /// Walks the store and summarizes its contents and recorded usage.
    pub fn stats(&self) -> Result<StoreStats> {
        let mut stats = StoreStats::default();
        let data = self.root.join(format!("v{CACHE_FORMAT_VERSION}"));
        for entry in walkdir::WalkDir::new(&data).min_depth(3).max_depth(3) {
            let entry = entry.map_err(|e| Error::Io(e.into()))?;
            if entry.path().extension().is_none_or(|ext| ext != "entry") {
                continue;
            }
            let bytes = fs::read(entry.path())?;
            let head = bytes.split(|b| *b == b'\n').next().unwrap_or_default();
            let kind = serde_json::from_slice::<EntryHeader>(head)
                .map(|h| h.key.kind.as_str())
                .unwrap_or("unreadable");
            *stats.entries.entry(kind.to_string()).or_default() += 1;
            stats.total_entries += 1;
        }
        let quarantine = self.root.join("quarantine");
        if quarantine.is_dir() {
            stats.quarantined = fs::read_dir(quarantine)?.count() as u64;
        }
        if let Ok(log) = fs::read_to_string(self.root.join("usage.jsonl")) {
            for line in log.lines().filter(|l| !l.trim().is_empty()) {
                if let Ok(rec) = serde_json::from_str::<UsageRecord>(line) {
                    stats.runs += 1;
                    stats.lifetime.hits += rec.counts.hits;
                    stats.lifetime.misses += rec.counts.misses;
                    stats.lifetime.writes += rec.counts.writes;
                    stats.lifetime.corrupt += rec.counts.corrupt;
                }
            }
        }
        Ok(stats)
    }
}
