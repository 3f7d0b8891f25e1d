use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, TensorId};
use crate::data::metadata::MetadataRecord;
use crate::error::{Error, Result};
use crate::model::init::{fan_in_uniform, zeros};
use crate::model::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;

pub struct MetaParams {
    pub w: ParamId,
    pub b: ParamId,
    /// Learnable stand-in input for records with no metadata at all; fed
    /// through the same projection as real records.
    pub e_m: ParamId,
}

pub fn add_meta<T: Scalar>(
    store: &mut ParamStore<T>,
    meta_dim: usize,
    latent_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MetaParams> {
    Ok(MetaParams {
        w: store.add("meta.w", &[meta_dim, latent_dim], fan_in_uniform(rng, meta_dim, latent_dim))?,
        b: store.add("meta.b", &[latent_dim], zeros(latent_dim))?,
        e_m: store.add("meta.e_m", &[1, meta_dim], zeros(meta_dim))?,
    })
}

/// Project one preprocessed metadata record to the fusion width. The record
/// must be fully observed (post-imputation) unless it is fully missing, in
/// which case the learnable token substitutes for the input row.
pub fn encode_meta<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    p: &MetaParams,
    rec: &MetadataRecord,
) -> Result<TensorId> {
    let x = if rec.fully_missing {
        bound.id(p.e_m)
    } else {
        if rec.observed.iter().any(|&o| !o) {
            return Err(Error::Contract(
                "metadata record still has unobserved fields; impute before encoding".into(),
            ));
        }
        let row: Vec<T> = rec.values.iter().map(|&v| T::from_f64(v)).collect();
        tape.constant(row, &[1, rec.values.len()])?
    };
    let proj = tape.matmul(x, bound.id(p.w))?;
    tape.add_bias(proj, bound.id(p.b))
}
