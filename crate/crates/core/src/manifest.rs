//! Run manifests: every CLI command emits one next to its outputs, recording
//! the tool version, the fully resolved configuration, SHA-256 digests of all
//! inputs and the master seed. Identical inputs, config and seed produce a
//! byte-identical manifest; a wall-clock timestamp is only included when
//! `MORPHO_MANIFEST_TIMESTAMP=1` is set, since it would break rerun
//! comparability.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MorphoError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Fully resolved configuration of the run.
    pub config: serde_json::Value,
    /// Input path -> SHA-256 hex digest (directories digest their files).
    pub inputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_unix_ms: Option<u128>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        let generated_unix_ms = if std::env::var("MORPHO_MANIFEST_TIMESTAMP").as_deref() == Ok("1")
        {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .ok()
                .map(|d| d.as_millis())
        } else {
            None
        };
        RunManifest {
            tool: "morpho".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            inputs: BTreeMap::new(),
            seed,
            generated_unix_ms,
        }
    }

    /// Digest a file or every regular file under a directory (sorted).
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        if path.is_dir() {
            let mut entries: Vec<_> = std::fs::read_dir(path)
                .map_err(|e| MorphoError::io(path, e))?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_file())
                .collect();
            entries.sort();
            for p in entries {
                self.add_input(&p)?;
            }
            return Ok(());
        }
        let bytes = std::fs::read(path).map_err(|e| MorphoError::io(path, e))?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.insert(path.display().to_string(), hex);
        Ok(())
    }

    /// Write `manifest.json` (or `<stem>.manifest.json` beside a file output).
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| MorphoError::Invalid(format!("manifest serialization failed: {e}")))?;
        std::fs::write(path, json).map_err(|e| MorphoError::io(path, e))
    }
}

/// Manifest path convention: `<out>.manifest.json` for file outputs,
/// `<out>/manifest.json` for directory outputs.
pub fn manifest_path_for(out: &Path, is_dir: bool) -> std::path::PathBuf {
    if is_dir {
        out.join("manifest.json")
    } else {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("data.txt");
        std::fs::write(&input, "hello").unwrap();
        let build = || {
            let mut m = RunManifest::new(
                "fit",
                serde_json::json!({"pca": 20, "dr": "pca+pls"}),
                Some(7),
            );
            m.add_input(&input).unwrap();
            serde_json::to_string_pretty(&m).unwrap()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn directory_inputs_are_digested_sorted() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b.off"), "b").unwrap();
        std::fs::write(dir.path().join("a.off"), "a").unwrap();
        let mut m = RunManifest::new("align", serde_json::json!({}), None);
        m.add_input(dir.path()).unwrap();
        let keys: Vec<_> = m.inputs.keys().collect();
        assert_eq!(keys.len(), 2);
        assert!(keys[0] < keys[1]);
    }

    #[test]
    fn manifest_paths() {
        assert_eq!(
            manifest_path_for(Path::new("out/model.json"), false),
            Path::new("out/model.json.manifest.json")
        );
        assert_eq!(
            manifest_path_for(Path::new("out"), true),
            Path::new("out/manifest.json")
        );
    }
}
