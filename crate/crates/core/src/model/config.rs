use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_side() -> usize {
    16
}
fn default_patch() -> usize {
    4
}
fn default_embed_dim() -> usize {
    32
}
fn default_depth() -> usize {
    2
}
fn default_heads() -> usize {
    4
}
fn default_mask_ratio() -> f64 {
    0.75
}
fn default_latent_dim() -> usize {
    64
}
fn default_fusion_heads() -> usize {
    4
}
fn default_mixer_blocks() -> usize {
    2
}

/// Volume-encoder geometry. Volumes are resampled to `side^3` and cut into
/// `patch^3` blocks before embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    #[serde(default = "default_side")]
    pub side: usize,
    #[serde(default = "default_patch")]
    pub patch: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// Fraction of patches hidden from the encoder during pretraining.
    #[serde(default = "default_mask_ratio")]
    pub mask_ratio: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.side == 0 || self.side % self.patch != 0 {
            return Err(Error::Config(format!(
                "side {} must be a positive multiple of patch {}",
                self.side, self.patch
            )));
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.depth == 0 {
            return Err(Error::Config("depth must be positive".into()));
        }
        if !(0.0 < self.mask_ratio && self.mask_ratio < 1.0) {
            return Err(Error::Config(format!("mask_ratio {} must be in (0, 1)", self.mask_ratio)));
        }
        let n = self.n_patches();
        let masked = (self.mask_ratio * n as f64).round() as usize;
        if masked == 0 || masked >= n {
            return Err(Error::Config(format!(
                "mask_ratio {} leaves no masked or no visible patches out of {n}",
                self.mask_ratio
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.side / self.patch
    }

    pub fn n_patches(&self) -> usize {
        let g = self.grid();
        g * g * g
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * self.patch
    }
}

/// Full classifier geometry. `meta_dim` is the expanded metadata width and
/// comes from the cohort schema rather than a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub encoder: EncoderConfig,
    /// Shared fused-representation width.
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "default_fusion_heads")]
    pub fusion_heads: usize,
    #[serde(default = "default_mixer_blocks")]
    pub mixer_blocks: usize,
    pub meta_dim: usize,
}

impl ModelConfig {
    pub fn with_meta_dim(meta_dim: usize) -> Self {
        let mut c: ModelConfig = serde_json::from_str(r#"{"meta_dim": 1}"#).unwrap();
        c.meta_dim = meta_dim;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.latent_dim == 0
            || self.fusion_heads == 0
            || self.latent_dim % self.fusion_heads != 0
        {
            return Err(Error::Config(format!(
                "latent_dim {} must be a positive multiple of fusion_heads {}",
                self.latent_dim, self.fusion_heads
            )));
        }
        if self.meta_dim == 0 {
            return Err(Error::Config("meta_dim must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_give_64_patches() {
        let c = ModelConfig::with_meta_dim(8);
        c.validate().unwrap();
        assert_eq!(c.encoder.n_patches(), 64);
        assert_eq!(c.encoder.patch_len(), 64);
    }

    #[test]
    fn validation_catches_bad_geometry() {
        let mut c = ModelConfig::with_meta_dim(8);
        c.encoder.side = 17;
        assert!(c.validate().is_err());

        let mut c = ModelConfig::with_meta_dim(8);
        c.encoder.embed_dim = 30;
        assert!(c.validate().is_err());

        let mut c = ModelConfig::with_meta_dim(8);
        c.latent_dim = 30;
        assert!(c.validate().is_err());

        let mut c = ModelConfig::with_meta_dim(8);
        c.encoder.mask_ratio = 1.0;
        assert!(c.validate().is_err());

        let c = ModelConfig::with_meta_dim(0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn large_volume_patch_count() {
        let c = EncoderConfig { side: 128, patch: 16, ..EncoderConfig::default() };
        assert_eq!(c.n_patches(), 512);
        assert_eq!(c.patch_len(), 4096);
    }

    #[test]
    fn config_json_roundtrip() {
        let c = ModelConfig::with_meta_dim(8);
        let s = serde_json::to_string(&c).unwrap();
        let back: ModelConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(c, back);
    }
}
