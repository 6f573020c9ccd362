use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
    /// Set when the checksum covers only part of the file.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scope: Option<String>,
}

/// Record of one CLI invocation: the fully resolved parameters, the seed that
/// was used, and checksums of everything written.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub argv: Vec<String>,
    pub params: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub artifacts: Vec<Artifact>,
    pub duration_ms: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(subcommand: &str, params: Value, seed: Option<u64>) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            argv: std::env::args().collect(),
            params,
            seed,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            duration_ms: 0.0,
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn artifact(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.artifacts.push(Artifact {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
            scope: None,
        });
        Ok(())
    }

    pub fn partial_artifact(&mut self, path: &Path, covered: &[u8], scope: &str) {
        self.artifacts.push(Artifact {
            path: path.to_path_buf(),
            sha256: sha256_hex(covered),
            scope: Some(scope.to_string()),
        });
    }

    pub fn write(mut self, path: &Path, elapsed: Duration) -> Result<()> {
        self.duration_ms = elapsed.as_secs_f64() * 1e3;
        let mut json = serde_json::to_string_pretty(&self)?;
        json.push('\n');
        nbmf_core::dataset::write_atomic(path, json.as_bytes())?;
        Ok(())
    }
}
