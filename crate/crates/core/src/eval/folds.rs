use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::stream_rng;

/// Patient-exclusive fold assignment: distinct ids are sorted, shuffled by the
/// fold seed, and dealt round-robin, so fold sizes differ by at most one and
/// every scan of a patient lands in the same fold.
pub fn make_folds(patient_ids: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut distinct: Vec<String> = patient_ids.to_vec();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::Validation(format!(
            "{} distinct patients cannot fill {k} folds",
            distinct.len()
        )));
    }
    let mut rng = stream_rng(seed, "folds");
    distinct.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (i, id) in distinct.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    Ok(folds)
}
