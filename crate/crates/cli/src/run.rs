//! Run directories and manifests.
//!
//! Every command that produces files gets `<out>/<timestamp>-<digest8>`,
//! where the digest covers the command, the effective config and the input
//! file digests. Files are written atomically and only once all work has
//! finished, and `manifest.json` is always written last.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use varybalance::cache::AccessCounts;
use varybalance::counters::RunCounts;
use varybalance::RunContext;

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CacheUsage {
    pub dir: String,
    pub counts: AccessCounts,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// "ok" or "failed"
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub started_at: String,
    pub finished_at: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rewriter_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scorer_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator_id: Option<String>,
    pub inputs: Vec<InputDigest>,
    pub counters: RunCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache: Option<CacheUsage>,
    pub outputs: Vec<String>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn file_digest(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
        bytes: bytes.len() as u64,
    })
}

/// Writes `contents` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("writing into {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub struct Run {
    dir: PathBuf,
    pub manifest: RunManifest,
}

impl Run {
    pub fn start(out: &Path, command: &str, config: Option<Value>, inputs: &[&Path]) -> Result<Self> {
        let inputs = inputs.iter().map(|p| file_digest(p)).collect::<Result<Vec<_>>>()?;
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(serde_json::to_vec(&config)?);
        for i in &inputs {
            h.update(i.sha256.as_bytes());
        }
        let digest = hex::encode(h.finalize());
        let stamp = Utc::now().format("%Y%m%dT%H%M%SZ");
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let mut dir = out.join(format!("{stamp}-{}", &digest[..8]));
        let mut n = 1;
        while dir.exists() {
            n += 1;
            dir = out.join(format!("{stamp}-{}-{n}", &digest[..8]));
        }
        fs::create_dir(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir,
            manifest: RunManifest {
                tool: "varybalance",
                version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                status: "running".into(),
                error: None,
                started_at: now(),
                finished_at: String::new(),
                config,
                rewriter_id: None,
                scorer_id: None,
                generator_id: None,
                inputs,
                counters: RunCounts::default(),
                cache: None,
                outputs: Vec::new(),
            },
        })
    }

    #[cfg(test)]
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, contents)?;
        self.manifest.outputs.push(name.to_string());
        Ok(path)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, records: &[T]) -> Result<PathBuf> {
        let mut text = String::new();
        for r in records {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        self.write(name, text.as_bytes())
    }

    fn close(mut self, ctx: Option<&RunContext>, command: &str, error: Option<String>) -> Result<PathBuf> {
        if let Some(ctx) = ctx {
            self.manifest.counters = ctx.counters.snapshot();
            if let Some(store) = ctx.cache() {
                store.record_usage(command)?;
                self.manifest.cache = Some(CacheUsage {
                    dir: store.root().display().to_string(),
                    counts: store.counts(),
                });
            }
        }
        self.manifest.status = if error.is_some() { "failed" } else { "ok" }.into();
        self.manifest.error = error;
        self.manifest.finished_at = now();
        let manifest = self.manifest.clone();
        self.write_json("manifest.json", &manifest)?;
        Ok(self.dir)
    }

    pub fn finish(self, ctx: Option<&RunContext>) -> Result<PathBuf> {
        let command = self.manifest.command.clone();
        self.close(ctx, &command, None)
    }

    /// Records the failure in the manifest; no other outputs are written.
    pub fn fail(self, ctx: Option<&RunContext>, error: String) -> Result<PathBuf> {
        let command = self.manifest.command.clone();
        self.close(ctx, &command, Some(error))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dirs_are_unique_and_manifest_last() {
        let out = tempfile::tempdir().unwrap();
        let input = out.path().join("in.txt");
        fs::write(&input, "abc").unwrap();
        let mut a = Run::start(out.path(), "detect", None, &[&input]).unwrap();
        let b = Run::start(out.path(), "detect", None, &[&input]).unwrap();
        assert_ne!(a.dir(), b.dir());
        assert_eq!(
            a.manifest.inputs[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        a.write("x.txt", b"1").unwrap();
        let dir = a.finish(None).unwrap();
        let m: Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["status"], "ok");
        assert_eq!(m["outputs"], serde_json::json!(["x.txt"]));
        let failed = b.fail(None, "boom".into()).unwrap();
        let m: Value = serde_json::from_str(&fs::read_to_string(failed.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["status"], "failed");
        assert_eq!(m["error"], "boom");
    }
}
