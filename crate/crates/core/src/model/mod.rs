pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod fusion;
pub mod init;
pub mod meta;
pub mod params;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, TensorId};
use crate::data::metadata::MetadataRecord;
use crate::data::volume::{clip_normalize, resample_volume, Volume};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::stream_rng;

pub use config::{EncoderConfig, ModelConfig};
pub use encoder::{encoder_param_prefixes, patchify, unpatchify, EncoderParams};
pub use fusion::{EarlyParams, FusionParams, HeadParams, MixerParams};
pub use meta::MetaParams;
pub use params::{Bound, ParamId, ParamStore};

/// Which pieces of the architecture a run trains and scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Cross-attention fusion followed by the mixer stack.
    Full,
    /// Fusion replaced by an elementwise sum of the two representations.
    NoCa,
    /// Cross-attention kept, mixer stack removed.
    NoMixer,
    /// Both representations concatenated into a single linear layer.
    EarlyFusion,
    MetaOnly,
    HctOnly,
}

impl Variant {
    pub fn all() -> [Variant; 6] {
        [
            Variant::Full,
            Variant::NoCa,
            Variant::NoMixer,
            Variant::EarlyFusion,
            Variant::MetaOnly,
            Variant::HctOnly,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCa => "no_ca",
            Variant::NoMixer => "no_mixer",
            Variant::EarlyFusion => "early_fusion",
            Variant::MetaOnly => "meta_only",
            Variant::HctOnly => "hct_only",
        }
    }

    pub fn uses_volume(self) -> bool {
        !matches!(self, Variant::MetaOnly)
    }

    pub fn uses_metadata(self) -> bool {
        !matches!(self, Variant::HctOnly)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::all()
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

/// Resample -> percentile-normalize -> patchify; the full path from a stored
/// volume to the encoder's input rows.
pub fn volume_to_patches<T: Scalar>(v: &Volume, cfg: &EncoderConfig) -> Result<Vec<T>> {
    let r = resample_volume(v, cfg.side)?;
    let n = clip_normalize(&r, 1.0, 99.0)?;
    patchify(&n.voxels, cfg.side, cfg.patch)
}

/// The classifier: every variant shares one parameter registry, so ablations
/// differ only in which parameters their forward pass touches.
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub enc: EncoderParams,
    pub meta: MetaParams,
    pub fuse: FusionParams,
    pub mixer: MixerParams,
    pub head: HeadParams,
    pub early: EarlyParams,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, master_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(master_seed, "init");
        let mut store = ParamStore::new();
        let enc = encoder::add_encoder(&mut store, &config.encoder, config.latent_dim, &mut rng)?;
        let meta = meta::add_meta(&mut store, config.meta_dim, config.latent_dim, &mut rng)?;
        let fuse = fusion::add_fusion(&mut store, config.latent_dim, config.fusion_heads, &mut rng)?;
        let mixer = fusion::add_mixer(&mut store, config.latent_dim, config.mixer_blocks, &mut rng)?;
        let head = fusion::add_head(&mut store, config.latent_dim, &mut rng)?;
        let early = fusion::add_early(&mut store, config.latent_dim, &mut rng)?;
        Ok(Model { config, store, enc, meta, fuse, mixer, head, early })
    }

    /// One sample's positive-class probability as a [1,1] tensor.
    ///
    /// `patches` is the flattened patch matrix from [`volume_to_patches`];
    /// variants that ignore the volume accept (and never read) None.
    pub fn forward_prob(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        patches: Option<&[T]>,
        meta_rec: &MetadataRecord,
        variant: Variant,
    ) -> Result<TensorId> {
        let f_hct = if variant.uses_volume() {
            let rows = patches.ok_or_else(|| {
                Error::Contract(format!("variant {} needs volume patches", variant.name()))
            })?;
            let n = self.config.encoder.n_patches();
            let plen = self.config.encoder.patch_len();
            let patches_t = tape.constant(rows.to_vec(), &[n, plen])?;
            let tokens = encoder::encode(tape, bound, &self.enc, patches_t, None)?;
            Some(encoder::project_hct(tape, bound, &self.enc, tokens)?)
        } else {
            None
        };
        let f_meta = if variant.uses_metadata() {
            Some(meta::encode_meta(tape, bound, &self.meta, meta_rec)?)
        } else {
            None
        };

        let pooled = match variant {
            Variant::MetaOnly => f_meta.unwrap(),
            Variant::HctOnly => f_hct.unwrap(),
            Variant::EarlyFusion => {
                fusion::early_fuse(tape, bound, &self.early, f_hct.unwrap(), f_meta.unwrap())?
            }
            Variant::Full => {
                let fused =
                    fusion::cross_attention_fuse(tape, bound, &self.fuse, f_hct.unwrap(), f_meta.unwrap())?;
                let refined = fusion::mixer_forward(tape, bound, &self.mixer, fused)?;
                fusion::gap(tape, refined)?
            }
            Variant::NoCa => {
                let fused = tape.add(f_hct.unwrap(), f_meta.unwrap())?;
                let refined = fusion::mixer_forward(tape, bound, &self.mixer, fused)?;
                fusion::gap(tape, refined)?
            }
            Variant::NoMixer => {
                let fused =
                    fusion::cross_attention_fuse(tape, bound, &self.fuse, f_hct.unwrap(), f_meta.unwrap())?;
                fusion::gap(tape, fused)?
            }
        };
        fusion::classify(tape, bound, &self.head, pooled)
    }

    /// Trainable mask over the registry; freezing the encoder also freezes
    /// the flatten projection (the whole volume branch up to fusion).
    pub fn trainable_mask(&self, freeze_encoder: bool) -> Vec<bool> {
        self.store
            .iter()
            .map(|(_, e)| {
                !(freeze_encoder
                    && encoder_param_prefixes().iter().any(|p| e.name.starts_with(p)))
            })
            .collect()
    }
}
