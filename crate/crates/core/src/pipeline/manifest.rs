use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::commands::BenchSettings;
use super::io;
use crate::error::{Error, Result};
use crate::importance::Metric;
use crate::model::{PretrainConfig, TargetModelSpec};
use crate::predictor::{PredictorConfig, TrainConfig};
use crate::search::SearchBudget;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Path relative to the run directory.
    pub path: String,
    /// sha256 of the content with timing fields removed.
    pub sha256: String,
}

/// Everything needed to rerun a pipeline, plus fingerprints of what it wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub model_spec: TargetModelSpec,
    pub pretrain: PretrainConfig,
    pub metric: Option<Metric>,
    pub b_grid: Option<Vec<f64>>,
    pub search_budget: Option<SearchBudget>,
    pub predictor: Option<PredictorConfig>,
    pub train: Option<TrainConfig>,
    pub bench: Option<BenchSettings>,
    pub artifacts: BTreeMap<String, ArtifactRecord>,
}

impl RunManifest {
    pub fn new(seed: u64, model_spec: TargetModelSpec, pretrain: PretrainConfig) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            model_spec,
            pretrain,
            metric: None,
            b_grid: None,
            search_budget: None,
            predictor: None,
            train: None,
            bench: None,
            artifacts: BTreeMap::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        io::read_json(&dir.join(MANIFEST_FILE))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        io::atomic_write(&dir.join(MANIFEST_FILE), s.as_bytes())
    }

    /// Records the current content of `dir/name`.
    pub fn record(&mut self, dir: &Path, name: &str) -> Result<()> {
        let sha256 = io::canonical_sha256(&dir.join(name))?;
        self.artifacts.insert(
            name.to_string(),
            ArtifactRecord {
                path: name.to_string(),
                sha256,
            },
        );
        Ok(())
    }

    /// Refuses to continue when `dir/name` is absent from the manifest or
    /// has changed since it was recorded.
    pub fn verify(&self, dir: &Path, name: &str) -> Result<()> {
        let rec = self
            .artifacts
            .get(name)
            .ok_or_else(|| Error::MissingFile(dir.join(name)))?;
        let found = io::canonical_sha256(&dir.join(&rec.path))?;
        if found != rec.sha256 {
            return Err(Error::Fingerprint {
                what: name.to_string(),
                expected: rec.sha256.clone(),
                found,
            });
        }
        Ok(())
    }

    pub fn fingerprint(&self, name: &str) -> Option<&str> {
        self.artifacts.get(name).map(|r| r.sha256.as_str())
    }
}
