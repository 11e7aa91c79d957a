//! Run manifests: every command writes one JSON record of exactly what it
//! was asked to do, and every output file carries the manifest's digest,
//! so any number in any artifact can be traced back to a reproducible
//! invocation.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    /// Subcommand name.
    pub command: String,
    /// Full effective configuration (flag values after defaulting).
    pub config: serde_json::Value,
    /// Every seed the run consumes, by role.
    pub seeds: serde_json::Value,
    pub library_version: String,
    pub platform: Platform,
    /// Files this run writes, relative to the output directory.
    pub outputs: Vec<String>,
    /// SHA-256 over the manifest serialized with this field empty.
    pub digest: String,
}

#[derive(Debug, Serialize)]
pub struct Platform {
    pub os: String,
    pub arch: String,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: serde_json::Value,
        seeds: serde_json::Value,
        outputs: Vec<String>,
    ) -> Self {
        let mut m = RunManifest {
            command: command.to_string(),
            config,
            seeds,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            platform: Platform {
                os: std::env::consts::OS.to_string(),
                arch: std::env::consts::ARCH.to_string(),
            },
            outputs,
            digest: String::new(),
        };
        let bytes = serde_json::to_vec(&m).expect("manifest serializes");
        let hash = Sha256::digest(&bytes);
        m.digest = hash.iter().map(|b| format!("{b:02x}")).collect();
        m
    }

    /// Short digest prefix used as a run identifier in CSV rows.
    pub fn run_id(&self) -> &str {
        &self.digest[..12]
    }

    /// Writes `manifest.json` into `dir` and returns its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// The comment line output CSVs start with.
    pub fn csv_header_line(&self) -> String {
        format!("# manifest: {}\n", self.digest)
    }
}

/// Writes a CSV body under the manifest reference line.
pub fn write_csv(dir: &Path, name: &str, manifest: &RunManifest, body: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut content = manifest.csv_header_line();
    content.push_str(body);
    fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Writes a JSON artifact wrapped with its manifest digest.
pub fn write_json<T: Serialize>(
    dir: &Path,
    name: &str,
    manifest: &RunManifest,
    payload: &T,
) -> Result<PathBuf> {
    let path = dir.join(name);
    let wrapped = serde_json::json!({
        "manifest_digest": manifest.digest,
        "report": payload,
    });
    fs::write(&path, serde_json::to_string_pretty(&wrapped).expect("payload serializes"))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
