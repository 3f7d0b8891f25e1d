use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::data::manifest::CohortManifest;
use crate::data::metadata::{MetadataRecord, Preprocessor, DEFAULT_KNN_K};
use crate::data::volume::read_vol;
use crate::error::{Error, Result};
use crate::eval::folds::make_folds;
use crate::eval::metrics::{auc, confusion_metrics, roc_points, BinaryMetrics, RocPoint};
use crate::model::{volume_to_patches, Model, ModelConfig, Variant};
use crate::seed::stream_seed;
use crate::train::{evaluate, pretrain_encoder, train, TrainConfig, TrainLog, TrainSample};

/// A manifest pulled into memory: expanded metadata for every sample, plus
/// (on demand) each scan's patch rows. Volumes are read at most once per
/// process and shared across folds, seeds, and variants.
pub struct Cohort {
    pub manifest_path: PathBuf,
    pub manifest: CohortManifest,
    pub meta: Vec<MetadataRecord>,
    patches: Option<Vec<Arc<Vec<f32>>>>,
}

impl Cohort {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = CohortManifest::load(manifest_path)?;
        let meta = manifest.expand_metadata()?;
        Ok(Cohort { manifest_path: manifest_path.to_path_buf(), manifest, meta, patches: None })
    }

    /// Read, resample, normalize, and patchify every volume. No-op once done;
    /// metadata-only work never calls this, so ".vol" files stay untouched.
    pub fn ensure_patches(&mut self, enc: &crate::model::EncoderConfig) -> Result<()> {
        if self.patches.is_some() {
            return Ok(());
        }
        let mut patches = Vec::with_capacity(self.manifest.samples.len());
        for s in &self.manifest.samples {
            let path = CohortManifest::volume_path(&self.manifest_path, s);
            let vol = read_vol(&path)
                .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
            patches.push(Arc::new(volume_to_patches::<f32>(&vol, enc)?));
        }
        self.patches = Some(patches);
        Ok(())
    }

    pub fn patches_loaded(&self) -> bool {
        self.patches.is_some()
    }

    pub fn patches(&self, sample: usize) -> Result<Arc<Vec<f32>>> {
        self.patches
            .as_ref()
            .map(|p| p[sample].clone())
            .ok_or_else(|| Error::Contract("volumes were never loaded for this cohort".into()))
    }
}

/// Sample indices for one fold: training uses every scan of the training
/// patients; validation scores each held-out patient once, on the first of
/// their scans in manifest order.
pub struct FoldSplit {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
}

pub fn split_fold(manifest: &CohortManifest, val_patients: &BTreeSet<&str>) -> FoldSplit {
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    let mut seen_val: BTreeSet<&str> = BTreeSet::new();
    for (i, s) in manifest.samples.iter().enumerate() {
        if val_patients.contains(s.patient_id.as_str()) {
            if seen_val.insert(s.patient_id.as_str()) {
                val_idx.push(i);
            }
        } else {
            train_idx.push(i);
        }
    }
    FoldSplit { train_idx, val_idx }
}

/// Imputer and z-scoring statistics fitted on training-fold records only.
pub fn fit_fold_preprocessor(
    cohort: &Cohort,
    train_idx: &[usize],
) -> Result<Preprocessor> {
    let train_meta: Vec<&MetadataRecord> = train_idx.iter().map(|&i| &cohort.meta[i]).collect();
    Preprocessor::fit(&cohort.manifest.schema, &train_meta, DEFAULT_KNN_K)
}

fn build_samples(
    cohort: &Cohort,
    idx: &[usize],
    prep: &Preprocessor,
    with_patches: bool,
) -> Result<Vec<TrainSample>> {
    idx.iter()
        .map(|&i| {
            let s = &cohort.manifest.samples[i];
            let patches = if with_patches {
                Some(
                    cohort.patches.as_ref().expect("patches checked before fold work")[i].clone(),
                )
            } else {
                None
            };
            Ok(TrainSample {
                patient_id: s.patient_id.clone(),
                patches,
                meta: prep.transform(&cohort.meta[i])?,
                label: s.label,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SampleScore {
    pub patient_id: String,
    pub label: u8,
    pub score: f64,
}

pub struct FoldResult {
    pub fold: usize,
    pub auc: f64,
    pub metrics: BinaryMetrics,
    pub scores: Vec<SampleScore>,
    pub roc: Vec<RocPoint>,
    pub log: TrainLog,
}

/// What a fold leaves behind for follow-up analyses (permutation importance
/// re-scores the trained model on the same validation samples).
pub struct FoldArtifacts {
    pub model: Model<f32>,
    pub val: Vec<TrainSample>,
}

#[derive(Clone, Copy, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct MeanMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
}

pub struct CvRun {
    pub seed: u64,
    pub threshold: f64,
    pub folds: Vec<FoldResult>,
    pub mean: MeanMetrics,
}

pub fn mean_over_folds(folds: &[FoldResult]) -> MeanMetrics {
    let n = folds.len() as f64;
    let mut m = MeanMetrics::default();
    for f in folds {
        m.accuracy += f.metrics.accuracy;
        m.precision += f.metrics.precision;
        m.recall += f.metrics.recall;
        m.f1 += f.metrics.f1;
        m.auc += f.auc;
    }
    m.accuracy /= n;
    m.precision /= n;
    m.recall /= n;
    m.f1 /= n;
    m.auc /= n;
    m
}

fn run_fold(
    cohort: &Cohort,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    variant: Variant,
    threshold: f64,
    master_seed: u64,
    fold: usize,
    val_patients: &BTreeSet<&str>,
) -> Result<(FoldResult, FoldArtifacts)> {
    let split = split_fold(&cohort.manifest, val_patients);
    let prep = fit_fold_preprocessor(cohort, &split.train_idx)?;
    let with_patches = variant.uses_volume();
    let train_set = build_samples(cohort, &split.train_idx, &prep, with_patches)?;
    let val_set = build_samples(cohort, &split.val_idx, &prep, with_patches)?;

    let mut model: Model<f32> =
        Model::new(model_cfg.clone(), stream_seed(master_seed, &format!("f{fold}/model")))?;
    if with_patches && train_cfg.pretrain_steps > 0 {
        let vols: Vec<Arc<Vec<f32>>> =
            train_set.iter().map(|s| s.patches.as_ref().unwrap().clone()).collect();
        pretrain_encoder(
            &mut model,
            &vols,
            train_cfg.pretrain_steps,
            train_cfg.pretrain_lr,
            stream_seed(master_seed, &format!("f{fold}/pretrain")),
        )?;
    }
    let log = train(
        &mut model,
        train_cfg,
        variant,
        &train_set,
        &val_set,
        stream_seed(master_seed, &format!("f{fold}/train")),
    )?;

    let (_, probs) = evaluate(&model, variant, &val_set)?;
    let labels: Vec<u8> = val_set.iter().map(|s| s.label).collect();
    let fold_auc = auc(&probs, &labels)?;
    let metrics = confusion_metrics(&probs, &labels, threshold)?;
    let roc = roc_points(&probs, &labels)?;
    let scores = val_set
        .iter()
        .zip(&probs)
        .map(|(s, &p)| SampleScore { patient_id: s.patient_id.clone(), label: s.label, score: p })
        .collect();

    Ok((
        FoldResult { fold, auc: fold_auc, metrics, scores, roc, log },
        FoldArtifacts { model, val: val_set },
    ))
}

/// Patient-exclusive k-fold cross-validation of one variant under one master
/// seed. Folds are independent; `jobs > 1` runs them on a bounded worker pool
/// with results identical to the serial order.
pub fn cross_validate(
    cohort: &Cohort,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    variant: Variant,
    k: usize,
    threshold: f64,
    master_seed: u64,
    jobs: usize,
) -> Result<(CvRun, Vec<FoldArtifacts>)> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if variant.uses_volume() && !cohort.patches_loaded() {
        return Err(Error::Contract(format!(
            "variant {} needs volumes but the cohort's patches were never loaded",
            variant.name()
        )));
    }
    let patients = cohort.manifest.patient_ids();
    let folds = make_folds(&patients, k, master_seed)?;

    let fold_sets: Vec<BTreeSet<&str>> =
        folds.iter().map(|f| f.iter().map(|p| p.as_str()).collect()).collect();

    let mut slots: Vec<Option<(FoldResult, FoldArtifacts)>> = Vec::new();
    slots.resize_with(k, || None);
    if jobs <= 1 {
        for (f, set) in fold_sets.iter().enumerate() {
            slots[f] = Some(run_fold(
                cohort, model_cfg, train_cfg, variant, threshold, master_seed, f, set,
            )?);
        }
    } else {
        let next = AtomicUsize::new(0);
        let out: Mutex<Vec<Option<Result<(FoldResult, FoldArtifacts)>>>> =
            Mutex::new((0..k).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(k) {
                scope.spawn(|| loop {
                    let f = next.fetch_add(1, Ordering::Relaxed);
                    if f >= k {
                        break;
                    }
                    let r = run_fold(
                        cohort,
                        model_cfg,
                        train_cfg,
                        variant,
                        threshold,
                        master_seed,
                        f,
                        &fold_sets[f],
                    );
                    out.lock().unwrap()[f] = Some(r);
                });
            }
        });
        for (f, r) in out.into_inner().unwrap().into_iter().enumerate() {
            slots[f] = Some(r.expect("worker pool covers every fold")?);
        }
    }

    let mut fold_results = Vec::with_capacity(k);
    let mut artifacts = Vec::with_capacity(k);
    for s in slots {
        let (r, a) = s.expect("every fold ran");
        fold_results.push(r);
        artifacts.push(a);
    }
    let mean = mean_over_folds(&fold_results);
    Ok((CvRun { seed: master_seed, threshold, folds: fold_results, mean }, artifacts))
}

pub const ABLATION_VARIANTS: [Variant; 6] = [
    Variant::Full,
    Variant::NoCa,
    Variant::NoMixer,
    Variant::EarlyFusion,
    Variant::MetaOnly,
    Variant::HctOnly,
];

#[derive(Clone, Debug, serde::Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub mean: MeanMetrics,
}

/// Cross-validate every fusion variant over the given master seeds and report
/// per-variant metrics averaged over seeds and folds.
pub fn ablation_grid(
    cohort: &Cohort,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    k: usize,
    threshold: f64,
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::with_capacity(ABLATION_VARIANTS.len());
    for &variant in &ABLATION_VARIANTS {
        let mut acc = MeanMetrics::default();
        for &seed in seeds {
            let (run, _) =
                cross_validate(cohort, model_cfg, train_cfg, variant, k, threshold, seed, jobs)?;
            acc.accuracy += run.mean.accuracy;
            acc.precision += run.mean.precision;
            acc.recall += run.mean.recall;
            acc.f1 += run.mean.f1;
            acc.auc += run.mean.auc;
        }
        let n = seeds.len() as f64;
        acc.accuracy /= n;
        acc.precision /= n;
        acc.recall /= n;
        acc.f1 /= n;
        acc.auc /= n;
        rows.push(AblationRow { variant, mean: acc });
    }
    Ok(rows)
}
