//! Run manifests and staged, atomic output writes.
//!
//! A manifest records what a command read, how it was configured and what
//! it wrote. Its id is a SHA-256 over the deterministic part (command,
//! config snapshot without `out_dir`, seeds, design flags and input
//! hashes), so a rerun of the same command on the same inputs carries the
//! same id and every output that cites it is reproducible byte for byte.
//! Manifests are appended as one JSON line each to `manifest.jsonl`.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::seed::sha256_hex;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// Choices that change results without being visible in the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFlags {
    pub attention_tokenization: String,
    pub t_test: String,
    pub frame_scope: String,
    pub embedder_mode: String,
    pub embedder_version: String,
    pub embedder_downgrades: Vec<String>,
    pub text_embeddings_unit_norm: bool,
    pub embeddings_replace_raw_columns: bool,
    pub pretrain_loss: String,
    pub ci_method: String,
    pub ece_bins: usize,
    pub tsne_original_scaling: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub manifest_id: String,
    pub command: String,
    pub config: RunConfig,
    pub master_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub design: DesignFlags,
    /// Keyed by logical role, e.g. `pretrain_csv` or `model:seq-trad`.
    pub inputs: BTreeMap<String, FileRecord>,
    /// Keyed by path relative to `out_dir`.
    pub outputs: BTreeMap<String, String>,
    pub checks: BTreeMap<String, serde_json::Value>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

#[derive(Serialize)]
struct IdBasis<'a> {
    format_version: u32,
    command: &'a str,
    config: &'a RunConfig,
    seeds: &'a BTreeMap<String, u64>,
    design: &'a DesignFlags,
    inputs: BTreeMap<&'a str, &'a str>,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, design: DesignFlags) -> Self {
        Self {
            format_version: MANIFEST_FORMAT_VERSION,
            manifest_id: String::new(),
            command: command.to_string(),
            config: config.clone(),
            master_seed: config.seed,
            seeds: BTreeMap::new(),
            design,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            checks: BTreeMap::new(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
        }
    }

    /// Hash `path` and record it under `role`; missing files are data errors
    /// naming the path.
    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        if !path.is_file() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, format!("{role} input not found")),
            ));
        }
        let sha256 = hash_file(path)?;
        self.inputs.insert(
            role.to_string(),
            FileRecord {
                path: path.display().to_string(),
                sha256,
            },
        );
        Ok(())
    }

    pub fn add_seed(&mut self, key: impl Into<String>, seed: u64) -> u64 {
        self.seeds.insert(key.into(), seed);
        seed
    }

    /// Fix the id from everything recorded so far. Call once all inputs and
    /// seeds are known and before rendering outputs.
    pub fn seal(&mut self) -> &str {
        let mut config = self.config.clone();
        config.out_dir = PathBuf::new();
        let basis = IdBasis {
            format_version: self.format_version,
            command: &self.command,
            config: &config,
            seeds: &self.seeds,
            design: &self.design,
            inputs: self
                .inputs
                .iter()
                .map(|(k, v)| (k.as_str(), v.sha256.as_str()))
                .collect(),
        };
        let json = serde_json::to_string(&basis).expect("manifest basis serializes");
        self.manifest_id = sha256_hex(json.as_bytes());
        &self.manifest_id
    }

    pub fn check(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("check value serializes");
        self.checks.insert(key.to_string(), v);
    }

    /// Append this manifest as one line of `path`.
    pub fn append_to(&mut self, path: &Path) -> Result<()> {
        self.finished_unix_ms = now_ms();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let line = serde_json::to_string(self).expect("manifest serializes");
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))
    }
}

/// Read every manifest in a `manifest.jsonl` file.
pub fn read_manifests(path: &Path) -> Result<Vec<RunManifest>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Outputs held in memory until the whole command has succeeded, then
/// written file by file through a temporary name and a rename.
#[derive(Debug, Default)]
pub struct Staged {
    files: BTreeMap<String, Vec<u8>>,
}

impl Staged {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stage `bytes` at `rel`, a `/`-separated path under the output root.
    pub fn put(&mut self, rel: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.insert(rel.into(), bytes.into());
    }

    pub fn get(&self, rel: &str) -> Option<&[u8]> {
        self.files.get(rel).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Write everything under `root` and record the hashes in `manifest`.
    pub fn commit(self, root: &Path, manifest: &mut RunManifest) -> Result<()> {
        for (rel, bytes) in self.files {
            let path = root.join(&rel);
            let dir = path.parent().unwrap_or(root);
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let tmp = path.with_extension("partial");
            fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
            fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
            manifest.outputs.insert(rel, sha256_hex(&bytes));
        }
        Ok(())
    }
}

/// First line of every CSV the pipeline writes.
pub fn csv_preamble(manifest_id: &str) -> String {
    format!("# format_version=1 manifest={manifest_id}\n")
}
