use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::metadata::{one_hot_expand, FeatureSchema, MetaMap, MetadataRecord};
use crate::error::{Error, Result};
use crate::io_util::write_atomic;

/// One scan. A patient contributes one entry per scan; multi-scan patients
/// repeat the patient_id. A sample with no `metadata` key is fully missing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub patient_id: String,
    /// Volume path relative to the manifest's directory.
    pub volume: String,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<MetaMap>,
}

/// Provenance block written by the synthetic generator; absent for external cohorts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub seed: u64,
    pub n_patients: usize,
    pub n_fully_missing: usize,
    pub signal_strength: f64,
    pub informative_numeric_features: Vec<String>,
    pub config_json: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub schema: FeatureSchema,
    pub samples: Vec<SampleEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorInfo>,
}

impl CohortManifest {
    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        if self.samples.is_empty() {
            return Err(Error::Validation("manifest has no samples".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.patient_id.is_empty() {
                return Err(Error::Validation(format!("sample {i} has an empty patient_id")));
            }
            if s.volume.is_empty() {
                return Err(Error::Validation(format!("sample {i} has an empty volume path")));
            }
            if Path::new(&s.volume).is_absolute() {
                return Err(Error::Validation(format!(
                    "sample {i} volume path '{}' must be relative to the manifest",
                    s.volume
                )));
            }
            if s.label > 1 {
                return Err(Error::Validation(format!(
                    "sample {i} label {} is not 0 or 1",
                    s.label
                )));
            }
        }
        // Expansion validates field names, level names, and value types.
        for (i, s) in self.samples.iter().enumerate() {
            one_hot_expand(&self.schema, s.metadata.as_ref())
                .map_err(|e| Error::Validation(format!("sample {i} ({}): {e}", s.patient_id)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CohortManifest> {
        let bytes = fs::read(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        let m: CohortManifest = serde_json::from_slice(&bytes)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }

    /// Expanded metadata for every sample, in sample order.
    pub fn expand_metadata(&self) -> Result<Vec<MetadataRecord>> {
        self.samples
            .iter()
            .map(|s| one_hot_expand(&self.schema, s.metadata.as_ref()))
            .collect()
    }

    /// Distinct patient ids in first-appearance order.
    pub fn patient_ids(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for s in &self.samples {
            if seen.insert(s.patient_id.as_str()) {
                out.push(s.patient_id.clone());
            }
        }
        out
    }

    /// Absolute path of a sample's volume given the manifest's own path.
    pub fn volume_path(manifest_path: &Path, sample: &SampleEntry) -> PathBuf {
        match manifest_path.parent() {
            Some(dir) => dir.join(&sample.volume),
            None => PathBuf::from(&sample.volume),
        }
    }
}
