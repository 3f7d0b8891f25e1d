use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, TensorId};
use crate::error::Result;
use crate::model::init::fan_in_uniform;
use crate::model::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Per-head projection weights plus the shared output projection. No biases;
/// queries, keys, and values may come from different sources (cross-attention)
/// or the same one (self-attention).
pub struct AttentionParams {
    pub wq: Vec<ParamId>,
    pub wk: Vec<ParamId>,
    pub wv: Vec<ParamId>,
    pub wo: ParamId,
    pub d_head: usize,
}

pub fn add_attention<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    d_q: usize,
    d_kv: usize,
    heads: usize,
    d_head: usize,
    d_out: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AttentionParams> {
    let mut wq = Vec::with_capacity(heads);
    let mut wk = Vec::with_capacity(heads);
    let mut wv = Vec::with_capacity(heads);
    for h in 0..heads {
        wq.push(store.add(&format!("{prefix}.h{h}.wq"), &[d_q, d_head], fan_in_uniform(rng, d_q, d_head))?);
        wk.push(store.add(&format!("{prefix}.h{h}.wk"), &[d_kv, d_head], fan_in_uniform(rng, d_kv, d_head))?);
        wv.push(store.add(&format!("{prefix}.h{h}.wv"), &[d_kv, d_head], fan_in_uniform(rng, d_kv, d_head))?);
    }
    let wo = store.add(
        &format!("{prefix}.wo"),
        &[heads * d_head, d_out],
        fan_in_uniform(rng, heads * d_head, d_out),
    )?;
    Ok(AttentionParams { wq, wk, wv, wo, d_head })
}

/// Scaled dot-product attention over row-token matrices:
/// softmax(Q K^T / sqrt(d_head)) V per head, heads concatenated, then W_O.
pub fn multi_head_attention<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    p: &AttentionParams,
    queries: TensorId,
    keys_values: TensorId,
) -> Result<TensorId> {
    let scale = T::from_f64(1.0 / (p.d_head as f64).sqrt());
    let mut heads = Vec::with_capacity(p.wq.len());
    for h in 0..p.wq.len() {
        let q = tape.matmul(queries, bound.id(p.wq[h]))?;
        let k = tape.matmul(keys_values, bound.id(p.wk[h]))?;
        let v = tape.matmul(keys_values, bound.id(p.wv[h]))?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, scale)?;
        let attn = tape.softmax(scores, 1)?;
        heads.push(tape.matmul(attn, v)?);
    }
    let ctx = tape.concat_cols(&heads)?;
    tape.matmul(ctx, bound.id(p.wo))
}
