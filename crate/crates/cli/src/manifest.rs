//! Run manifests: what produced an artifact, from which inputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context as _;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<InputRecord>,
    /// Digest of the resolved command configuration.
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub outputs: Vec<String>,
    /// Seconds since the Unix epoch. The only field that varies between
    /// otherwise identical runs; pinned by `SOURCE_DATE_EPOCH` when set.
    pub created_unix: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now_unix() -> u64 {
    if let Some(pinned) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return pinned;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: Option<u64>) -> Self {
        let config = serde_json::to_vec(config).expect("configs serialize");
        RunManifest {
            command: command.to_string(),
            inputs: Vec::new(),
            config_sha256: sha256_hex(&config),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: Vec::new(),
            created_unix: now_unix(),
        }
    }

    pub fn add_input(&mut self, path: impl Into<String>, bytes: &[u8]) {
        self.inputs.push(InputRecord {
            path: path.into(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }
}

pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

/// Writes `<artifact>.manifest.json` next to a non-JSON artifact.
pub fn write_sidecar(artifact: &Path, manifest: &RunManifest) -> anyhow::Result<PathBuf> {
    let path = sidecar_path(artifact);
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
