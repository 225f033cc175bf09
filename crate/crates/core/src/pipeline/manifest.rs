//! Stage → artifact → content hash. Wall times live in a separate file so
//! the manifest itself is a pure function of config and seed.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Manifest {
    pub stages: IndexMap<String, IndexMap<String, Artifact>>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    /// Hashes `path` (and its mask sidecar, if present) under `stage`/`key`.
    pub fn record(&mut self, root: &Path, stage: &str, key: &str, path: &Path) -> std::io::Result<()> {
        let entry = self.stages.entry(stage.to_string()).or_default();
        let rel = |p: &Path| -> String {
            let r: PathBuf = p.strip_prefix(root).unwrap_or(p).to_path_buf();
            r.components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/")
        };
        entry.insert(
            key.to_string(),
            Artifact {
                path: rel(path),
                sha256: sha256_file(path)?,
            },
        );
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mask = path.with_file_name(format!("{stem}.mask.rmap"));
        if path.extension().is_some_and(|e| e == "rmap") && mask.exists() {
            entry.insert(
                format!("{key}.mask"),
                Artifact {
                    path: rel(&mask),
                    sha256: sha256_file(&mask)?,
                },
            );
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}
