//! Run manifests and all-or-nothing artifact output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ArtifactEntry {
    pub name: String,
    pub sha256: String,
}

/// Everything that determines a run's outputs.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub basis: Option<String>,
    pub instrument: Option<String>,
    pub spec: Option<String>,
    pub base_year: Option<i32>,
    pub exclusions: Vec<String>,
    pub parameters: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    #[serde(flatten)]
    pub config: RunConfig,
    pub inputs: Vec<InputFile>,
    pub group_file: Option<String>,
    pub output_dir: String,
    pub config_hash: String,
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Serialize)]
struct HashedConfig<'a> {
    tool: &'a str,
    version: &'a str,
    config: &'a RunConfig,
    inputs: Vec<(&'a str, &'a str)>,
}

/// Inputs read so far, each with its content hash.
#[derive(Debug, Default)]
pub struct Inputs {
    files: Vec<InputFile>,
}

impl Inputs {
    pub fn read(&mut self, role: &str, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {} file {}", role, path.display()))?;
        self.files.push(InputFile { role: role.into(), path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(bytes)
    }
}

/// Output files held in memory until the whole command has succeeded.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: BTreeMap<String, Vec<u8>>,
}

impl Artifacts {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.insert(name.into(), bytes);
    }

    pub fn add_json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }
}

/// Config hash over the tool version, the run configuration and the
/// content of every input, but not the input paths or output directory.
pub fn config_hash(config: &RunConfig, inputs: &Inputs) -> Result<String> {
    let mut files: Vec<(&str, &str)> = inputs.files.iter().map(|f| (f.role.as_str(), f.sha256.as_str())).collect();
    files.sort();
    let hashed = HashedConfig { tool: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION"), config, inputs: files };
    Ok(sha256_hex(&serde_json::to_vec(&hashed)?))
}

/// Writes every artifact plus the manifest into `out`.
pub fn write_run(out: &Path, config: RunConfig, inputs: Inputs, artifacts: Artifacts) -> Result<PathBuf> {
    let hash = config_hash(&config, &inputs)?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config,
        group_file: inputs.files.iter().find(|f| f.role == "groups").map(|f| f.path.clone()),
        inputs: inputs.files,
        output_dir: out.display().to_string(),
        config_hash: hash,
        artifacts: artifacts.files.iter().map(|(name, b)| ArtifactEntry { name: name.clone(), sha256: sha256_hex(b) }).collect(),
    };
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
    for (name, bytes) in &artifacts.files {
        let path = out.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
