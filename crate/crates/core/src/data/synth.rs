use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::manifest::{CohortManifest, GeneratorInfo, SampleEntry};
use crate::data::metadata::{Feature, FeatureKind, FeatureSchema, MetaMap, MetaValue};
use crate::data::volume::{write_vol, Volume};
use crate::error::{Error, Result};
use crate::seed::stream_rng;

fn default_n_patients() -> usize {
    200
}
fn default_raw_side() -> usize {
    20
}
fn default_n_noise_numeric() -> usize {
    3
}
fn default_missing_rate() -> f64 {
    0.1
}
fn default_field_missing_rate() -> f64 {
    0.05
}
fn default_two_scan_fraction() -> f64 {
    0.15
}
fn default_unit() -> f64 {
    1.0
}
fn default_interaction() -> f64 {
    0.9
}

/// Synthetic cohort with a planted effect in both modalities.
///
/// Labels are drawn first, exactly balanced. Each modality then expresses the
/// label: positive patients' volumes carry a brighter Gaussian blob, and the
/// first two numeric metadata fields shift upward.  On top of the shifts, the
/// two informative fields are correlated `+interaction` in positives and
/// `-interaction` in negatives.  That correlation flip is invisible to any
/// model that is linear in the metadata — per-feature means and variances are
/// identical either way — but a model that can form the `num0 * num1` product
/// reads it directly, so joint nonlinear fusion has genuine headroom over
/// additive baselines.  `signal_strength` scales blob amplitude, shifts, and
/// the correlation alike; at 0 the labels are independent of every feature.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_n_patients")]
    pub n_patients: usize,
    /// Side of the raw stored volumes; the model resamples to its own grid.
    #[serde(default = "default_raw_side")]
    pub raw_side: usize,
    /// Uninformative numeric features appended after the two informative ones.
    #[serde(default = "default_n_noise_numeric")]
    pub n_noise_numeric: usize,
    /// Probability a patient's metadata record is absent entirely.
    #[serde(default = "default_missing_rate")]
    pub missing_rate: f64,
    /// Probability an individual field of a present record is null.
    #[serde(default = "default_field_missing_rate")]
    pub field_missing_rate: f64,
    /// Fraction of patients contributing a second scan.
    #[serde(default = "default_two_scan_fraction")]
    pub two_scan_fraction: f64,
    #[serde(default = "default_unit")]
    pub signal_strength: f64,
    /// Extra multiplier on the volume channel only.
    #[serde(default = "default_unit")]
    pub img_signal: f64,
    /// Extra multiplier on the metadata channel only.
    #[serde(default = "default_unit")]
    pub meta_signal: f64,
    /// Label-signed correlation between the two informative metadata fields.
    #[serde(default = "default_interaction")]
    pub interaction: f64,
    #[serde(default = "default_unit")]
    pub noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients < 4 {
            return Err(Error::Config("n_patients must be at least 4".into()));
        }
        if self.raw_side < 8 {
            return Err(Error::Config("raw_side must be at least 8".into()));
        }
        for (name, r) in [
            ("missing_rate", self.missing_rate),
            ("field_missing_rate", self.field_missing_rate),
            ("two_scan_fraction", self.two_scan_fraction),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} = {r} must be in [0, 1]")));
            }
        }
        if self.noise_std <= 0.0 {
            return Err(Error::Config("noise_std must be positive".into()));
        }
        if self.signal_strength < 0.0 || self.img_signal < 0.0 || self.meta_signal < 0.0 {
            return Err(Error::Config("signal multipliers must be non-negative".into()));
        }
        if self.interaction < 0.0 {
            return Err(Error::Config("interaction must be non-negative".into()));
        }
        Ok(())
    }

    pub fn schema(&self) -> FeatureSchema {
        let mut features = Vec::new();
        for i in 0..2 + self.n_noise_numeric {
            features.push(Feature {
                name: format!("num{i}"),
                kind: FeatureKind::Numeric,
                levels: vec![],
            });
        }
        features.push(Feature {
            name: "site".into(),
            kind: FeatureKind::Categorical,
            levels: vec!["a".into(), "b".into(), "c".into()],
        });
        FeatureSchema { features }
    }
}

struct PatientDraw {
    u_img: f64,
    v1: f64,
    v2: f64,
}

/// Class separation of the volume latent: blob amplitude is
/// `exp(u_img / 2)`-shaped and u_img shifts by this much between classes.
const IMG_CLASS_SEP: f64 = 1.3;
/// Blob peak intensity at unit signal and centered latent, in noise-sd units.
const BLOB_BASE_AMP: f64 = 1.2;
/// Class-mean separation of each informative metadata field at unit signal.
const META_CLASS_SEP: f64 = 0.55;
/// Hard cap keeping the class-signed correlation a valid correlation.
const MAX_CLASS_CORR: f64 = 0.95;

fn synth_volume(cfg: &SynthConfig, seed: u64, pid: usize, scan: usize, u_img: f64) -> Volume {
    let mut rng = stream_rng(seed, &format!("synth/vol/p{pid}/s{scan}"));
    let s = cfg.raw_side;
    let amp = cfg.img_signal * cfg.signal_strength * BLOB_BASE_AMP * (u_img / 2.0).exp();
    let lo = 0.3 * s as f64;
    let hi = 0.7 * s as f64;
    let center = [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)];
    let sigma = s as f64 / 7.0;
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    // Per-scan intensity offset and gain so raw global statistics carry no
    // label information; normalization removes them anyway.
    let offset: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng) * 0.4;
    let gain: f64 =
        1.0 + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng) * 0.1;
    let mut voxels = Vec::with_capacity(s * s * s);
    for d in 0..s {
        for h in 0..s {
            for w in 0..s {
                let dd = d as f64 - center[0];
                let dh = h as f64 - center[1];
                let dw = w as f64 - center[2];
                let blob = amp * (-(dd * dd + dh * dh + dw * dw) * inv2s2).exp();
                let noise: f64 =
                    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                        * cfg.noise_std;
                voxels.push((gain * (blob + noise) + offset) as f32);
            }
        }
    }
    Volume::new([s, s, s], [1.0, 1.0, 1.0], voxels).unwrap()
}

fn synth_metadata(cfg: &SynthConfig, seed: u64, pid: usize, p: &PatientDraw) -> MetaMap {
    let mut rng = stream_rng(seed, &format!("synth/meta/p{pid}"));
    let n_num = 2 + cfg.n_noise_numeric;
    let mut values: Vec<MetaValue> = Vec::new();
    for i in 0..n_num {
        let x = match i {
            0 => p.v1,
            1 => p.v2,
            _ => <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng),
        };
        values.push(MetaValue::Number(x));
    }
    let site = ["a", "b", "c"][rng.gen_range(0..3usize)];
    values.push(MetaValue::Level(site.into()));

    let mut map = MetaMap::new();
    for (i, v) in values.into_iter().enumerate() {
        let name = if i < n_num { format!("num{i}") } else { "site".to_string() };
        let dropped = rng.gen_bool(cfg.field_missing_rate);
        map.insert(name, if dropped { None } else { Some(v) });
    }
    map
}

/// Generate volumes plus `manifest.json` under `dir`. Reruns with the same
/// config and seed produce byte-identical files.
pub fn generate_cohort(cfg: &SynthConfig, seed: u64, dir: &Path) -> Result<CohortManifest> {
    cfg.validate()?;
    let n = cfg.n_patients;

    // Exactly balanced labels in a seeded random order.
    let mut labels = vec![0u8; n];
    for l in labels.iter_mut().take(n / 2) {
        *l = 1;
    }
    labels.shuffle(&mut stream_rng(seed, "synth/labels"));

    let s_meta = cfg.meta_signal * cfg.signal_strength;
    let rho = (cfg.interaction * s_meta).clamp(0.0, MAX_CLASS_CORR);
    let mut rng_lat = stream_rng(seed, "synth/latents");
    let draws: Vec<PatientDraw> = labels
        .iter()
        .map(|&y| {
            let sign = if y == 1 { 1.0 } else { -1.0 };
            let zi: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng_lat);
            let a: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng_lat);
            let b: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng_lat);
            let rho_y = sign * rho;
            let shift = 0.5 * sign;
            PatientDraw {
                u_img: IMG_CLASS_SEP * shift + zi,
                v1: META_CLASS_SEP * s_meta * shift + a,
                v2: META_CLASS_SEP * s_meta * shift
                    + rho_y * a
                    + (1.0 - rho_y * rho_y).sqrt() * b,
            }
        })
        .collect();

    let mut rng_miss = stream_rng(seed, "synth/missing");
    let fully_missing: Vec<bool> = (0..n).map(|_| rng_miss.gen_bool(cfg.missing_rate)).collect();
    let mut rng_scan = stream_rng(seed, "synth/scans");
    let two_scans: Vec<bool> = (0..n).map(|_| rng_scan.gen_bool(cfg.two_scan_fraction)).collect();

    let mut samples = Vec::new();
    for (pid, draw) in draws.iter().enumerate() {
        let metadata =
            if fully_missing[pid] { None } else { Some(synth_metadata(cfg, seed, pid, draw)) };
        let n_scans = if two_scans[pid] { 2 } else { 1 };
        for scan in 0..n_scans {
            let vol = synth_volume(cfg, seed, pid, scan, draw.u_img);
            let rel = format!("volumes/p{pid:04}_s{scan}.vol");
            write_vol(&dir.join(&rel), &vol)?;
            samples.push(SampleEntry {
                patient_id: format!("p{pid:04}"),
                volume: rel,
                label: labels[pid],
                metadata: metadata.clone(),
            });
        }
    }

    let manifest = CohortManifest {
        schema: cfg.schema(),
        samples,
        generator: Some(GeneratorInfo {
            seed,
            n_patients: n,
            n_fully_missing: fully_missing.iter().filter(|&&b| b).count(),
            signal_strength: cfg.signal_strength,
            informative_numeric_features: vec!["num0".into(), "num1".into()],
            config_json: serde_json::to_string(cfg)?,
        }),
    };
    manifest.validate()?;
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}
