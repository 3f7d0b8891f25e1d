use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::eval::cv::FoldArtifacts;
use crate::eval::metrics::auc;
use crate::model::{Model, Variant};
use crate::seed::stream_rng;
use crate::train::{evaluate, TrainSample};

/// Mean AUC drop per post-one-hot metadata column when that column is
/// shuffled across validation patients, repeated and averaged per fold.
#[derive(Clone, Debug)]
pub struct ImportanceReport {
    pub columns: Vec<String>,
    /// `per_fold[f][c]`: fold f's ΔAUC for column c, averaged over repeats.
    pub per_fold: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

impl ImportanceReport {
    /// Column indices ordered by mean ΔAUC, largest drop first; ties broken
    /// by column order so the ranking is stable.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.mean.len()).collect();
        idx.sort_by(|&a, &b| self.mean[b].partial_cmp(&self.mean[a]).unwrap().then(a.cmp(&b)));
        idx
    }
}

/// Indices of the validation samples whose metadata is real: fully-missing
/// records ride the learned token, so they carry no column values to shuffle.
fn permutation_pool(val: &[TrainSample]) -> Vec<usize> {
    (0..val.len()).filter(|&i| !val[i].meta.fully_missing).collect()
}

/// Re-score the validation set with column `col` re-dealt through `perm`:
/// pool member j receives the value pool member perm[j] held. Everything
/// else — other columns, volumes, fully-missing records — stays intact.
pub fn scores_with_permuted_column(
    model: &Model<f32>,
    variant: Variant,
    val: &[TrainSample],
    col: usize,
    perm: &[usize],
) -> Result<Vec<f64>> {
    let pool = permutation_pool(val);
    if perm.len() != pool.len() {
        return Err(Error::Contract(format!(
            "permutation covers {} records but the pool has {}",
            perm.len(),
            pool.len()
        )));
    }
    let mut modified = val.to_vec();
    for (j, &src) in perm.iter().enumerate() {
        if src >= pool.len() {
            return Err(Error::Contract(format!(
                "permutation entry {src} outside pool of {}",
                pool.len()
            )));
        }
        if col >= val[pool[src]].meta.values.len() {
            return Err(Error::Contract(format!(
                "column {col} outside metadata width {}",
                val[pool[src]].meta.values.len()
            )));
        }
        modified[pool[j]].meta.values[col] = val[pool[src]].meta.values[col];
    }
    let (_, scores) = evaluate(model, variant, &modified)?;
    Ok(scores)
}

/// One fold's ΔAUC per column: baseline AUC minus the AUC after shuffling
/// that column, averaged over `repeats` seeded shuffles.
pub fn fold_importance(
    model: &Model<f32>,
    variant: Variant,
    val: &[TrainSample],
    n_cols: usize,
    repeats: usize,
    master_seed: u64,
    fold: usize,
) -> Result<Vec<f64>> {
    if repeats == 0 {
        return Err(Error::Config("importance needs at least one repeat".into()));
    }
    let labels: Vec<u8> = val.iter().map(|s| s.label).collect();
    let (_, base_scores) = evaluate(model, variant, val)?;
    let base_auc = auc(&base_scores, &labels)?;
    let pool = permutation_pool(val);

    let mut deltas = Vec::with_capacity(n_cols);
    for col in 0..n_cols {
        let mut sum = 0.0;
        for rep in 0..repeats {
            let mut perm: Vec<usize> = (0..pool.len()).collect();
            perm.shuffle(&mut stream_rng(master_seed, &format!("perm/f{fold}/c{col}/r{rep}")));
            let scores = scores_with_permuted_column(model, variant, val, col, &perm)?;
            sum += base_auc - auc(&scores, &labels)?;
        }
        deltas.push(sum / repeats as f64);
    }
    Ok(deltas)
}

/// Importance across all folds of a cross-validation run.
pub fn permutation_importance(
    artifacts: &[FoldArtifacts],
    variant: Variant,
    columns: &[String],
    repeats: usize,
    master_seed: u64,
) -> Result<ImportanceReport> {
    if artifacts.is_empty() {
        return Err(Error::Validation("no folds to score importance on".into()));
    }
    let n_cols = columns.len();
    let mut per_fold = Vec::with_capacity(artifacts.len());
    for (f, a) in artifacts.iter().enumerate() {
        per_fold.push(fold_importance(&a.model, variant, &a.val, n_cols, repeats, master_seed, f)?);
    }
    let mut mean = vec![0.0; n_cols];
    for fold in &per_fold {
        for (m, d) in mean.iter_mut().zip(fold) {
            *m += d;
        }
    }
    for m in &mut mean {
        *m /= per_fold.len() as f64;
    }
    Ok(ImportanceReport { columns: columns.to_vec(), per_fold, mean })
}
