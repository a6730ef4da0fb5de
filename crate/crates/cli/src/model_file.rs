//! Versioned JSON model persistence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crf_core::branches::BranchSet;
use crf_core::dataset::Dataset;
use crf_core::forest::{Forest, ForestConfig, Task};
use crf_core::predict::{CrfModel, FallbackPolicy};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_fingerprint: String,
    pub seed: u64,
    /// Unix seconds at save time; honors SOURCE_DATE_EPOCH so fixed-seed
    /// runs can produce byte-identical files.
    pub created_at_unix: u64,
}

impl Provenance {
    pub fn new(dataset_fingerprint: String, seed: u64) -> Self {
        let created_at_unix = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| {
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
            });
        Self {
            dataset_fingerprint,
            seed,
            created_at_unix,
        }
    }
}

/// Self-describing on-disk model: the forest, its branch set with whatever
/// statistics have been evaluated, and the fallback policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub forest_config: ForestConfig,
    pub forest: Forest,
    pub branch_set: BranchSet,
    pub fallback: FallbackPolicy,
    pub provenance: Provenance,
}

impl ModelFile {
    /// Assemble the deployable model from the stored parts.
    pub fn crf_model(&self) -> anyhow::Result<CrfModel> {
        match self.forest_config.task {
            Task::Classification => Ok(CrfModel::classification(
                self.branch_set.clone(),
                self.fallback.clone(),
            )?),
            Task::Regression => anyhow::bail!("model file holds a regression forest"),
        }
    }
}

pub fn save_model(path: &Path, model: &ModelFile) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(model)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> anyhow::Result<ModelFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read model file {}: {e}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| anyhow::anyhow!("malformed model file {}: {e}", path.display()))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| {
            anyhow::anyhow!(
                "malformed model file {}: missing format_version",
                path.display()
            )
        })?;
    if version != FORMAT_VERSION as u64 {
        anyhow::bail!(
            "unsupported model format version {version} (this build reads version {FORMAT_VERSION})"
        );
    }
    let model: ModelFile = serde_json::from_value(value)
        .map_err(|e| anyhow::anyhow!("malformed model file {}: {e}", path.display()))?;
    Ok(model)
}

/// FNV-1a hash of the dataset contents, as a provenance fingerprint.
pub fn dataset_fingerprint(d: &Dataset) -> String {
    struct Fnv(u64);
    impl Fnv {
        fn write(&mut self, bytes: &[u8]) {
            for &b in bytes {
                self.0 ^= u64::from(b);
                self.0 = self.0.wrapping_mul(0x100_0000_01b3);
            }
        }
    }
    let mut h = Fnv(0xcbf2_9ce4_8422_2325);
    h.write(&d.n_rows().to_le_bytes());
    h.write(&d.feature_count().to_le_bytes());
    for r in 0..d.n_rows() {
        for v in d.row(r) {
            h.write(&v.to_bits().to_le_bytes());
        }
    }
    match d.labels() {
        crf_core::dataset::Labels::Classes {
            indices,
            class_count,
        } => {
            h.write(&class_count.to_le_bytes());
            for &l in indices {
                h.write(&l.to_le_bytes());
            }
        }
        crf_core::dataset::Labels::Values(v) => {
            for t in v {
                h.write(&t.to_bits().to_le_bytes());
            }
        }
    }
    format!("fnv1a:{:016x}", h.0)
}
