use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use attnmix_core::data::synth::SynthConfig;
use attnmix_core::error::{Error, Result};
use attnmix_core::model::ModelConfig;
use attnmix_core::train::TrainConfig;

fn default_cohort_dir() -> PathBuf {
    PathBuf::from("cohort")
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_seed() -> u64 {
    42
}
fn default_k() -> usize {
    5
}
fn default_eval_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}
fn default_threshold() -> f64 {
    0.5
}
fn default_hist_bins() -> usize {
    20
}
fn default_importance_repeats() -> usize {
    5
}
fn default_jobs() -> usize {
    1
}
fn default_model_section() -> serde_json::Value {
    serde_json::Value::Object(serde_json::Map::new())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    #[serde(default = "default_k")]
    pub k: usize,
    /// Master seeds; eval-style commands run one full CV per seed.
    #[serde(default = "default_eval_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_hist_bins")]
    pub hist_bins: usize,
    #[serde(default = "default_importance_repeats")]
    pub importance_repeats: usize,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

/// One JSON document drives every command; each section has full defaults so
/// `{}` is a valid config.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_cohort_dir")]
    pub cohort_dir: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Generator seed, and the master seed for single-run commands.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub synth: SynthConfig,
    /// Model geometry; `meta_dim` may be omitted and is then taken from the
    /// cohort schema at command time.
    #[serde(default = "default_model_section")]
    pub model: serde_json::Value,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub variant: Option<String>,
    /// Pretrained encoder checkpoint consumed by `train`.
    #[serde(default)]
    pub encoder_ckpt: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("config {}: {e}", path.display())))
        })?;
        let cfg: RunConfig = serde_json::from_slice(&bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval.k < 2 {
            return Err(Error::Config(format!("eval.k is {}; need at least 2", self.eval.k)));
        }
        if self.eval.seeds.is_empty() {
            return Err(Error::Config("eval.seeds must not be empty".into()));
        }
        if !self.model.is_object() {
            return Err(Error::Config("model section must be a JSON object".into()));
        }
        Ok(())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.cohort_dir.join("manifest.json")
    }

    /// Materialize the model section, filling `meta_dim` from the cohort
    /// schema unless the config pinned it explicitly.
    pub fn model_config(&self, schema_dim: usize) -> Result<ModelConfig> {
        let mut section = self.model.clone();
        let obj = section.as_object_mut().expect("checked by validate");
        if !obj.contains_key("meta_dim") {
            obj.insert("meta_dim".into(), schema_dim.into());
        }
        let cfg: ModelConfig = serde_json::from_value(section)?;
        if cfg.meta_dim != schema_dim {
            return Err(Error::Config(format!(
                "model.meta_dim {} does not match the cohort's expanded metadata width {}",
                cfg.meta_dim, schema_dim
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
