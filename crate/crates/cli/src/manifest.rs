//! `manifest.json`: config hash, produced artifacts and timestamps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub completed_unix: u64,
    /// Paths relative to the output directory.
    pub artifacts: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub created_unix: u64,
    pub updated_unix: u64,
    pub stages: BTreeMap<String, StageRecord>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn fresh(config_hash: &str) -> Self {
        let t = now();
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            created_unix: t,
            updated_unix: t,
            stages: BTreeMap::new(),
        }
    }

    /// Existing manifest in `out`, which must come from the same config.
    pub fn open(out: &Path, config_hash: &str) -> anyhow::Result<Self> {
        let path = out.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("no manifest at {}; run gen-data first", path.display()))?;
        let m: Self =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if m.config_hash != config_hash {
            bail!(
                "artifacts in {} were produced by a different configuration (hash {}); rerun gen-data",
                out.display(),
                m.config_hash
            );
        }
        Ok(m)
    }

    pub fn record(&mut self, stage: &str, artifacts: Vec<PathBuf>) {
        let t = now();
        self.updated_unix = t;
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                completed_unix: t,
                artifacts,
            },
        );
    }

    pub fn artifacts(&self) -> impl Iterator<Item = &PathBuf> {
        self.stages.values().flat_map(|s| s.artifacts.iter())
    }

    pub fn save(&self, out: &Path) -> anyhow::Result<()> {
        for a in self.artifacts() {
            if !out.join(a).exists() {
                bail!("manifest lists missing artifact {}", a.display());
            }
        }
        let path = out.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
