use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, TensorId};
use crate::error::Result;
use crate::model::attention::{add_attention, multi_head_attention, AttentionParams};
use crate::model::init::{fan_in_uniform, ones, zeros};
use crate::model::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;

const LN_EPS: f64 = 1e-5;

pub struct FusionParams {
    pub attn: AttentionParams,
}

pub fn add_fusion<T: Scalar>(
    store: &mut ParamStore<T>,
    latent_dim: usize,
    heads: usize,
    rng: &mut ChaCha8Rng,
) -> Result<FusionParams> {
    let d_head = latent_dim / heads;
    let attn = add_attention(store, "fuse", latent_dim, latent_dim, heads, d_head, latent_dim, rng)?;
    Ok(FusionParams { attn })
}

/// Volume representation queries the metadata representation; the attended
/// summary is added back onto the query (residual) so the volume path stays
/// live even when attention contributes nothing.
pub fn cross_attention_fuse<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    p: &FusionParams,
    f_hct: TensorId,
    f_meta: TensorId,
) -> Result<TensorId> {
    let attended = multi_head_attention(tape, bound, &p.attn, f_hct, f_meta)?;
    tape.add(f_hct, attended)
}

struct MixerBlock {
    ln_g: ParamId,
    ln_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

pub struct MixerParams {
    blocks: Vec<MixerBlock>,
}

/// Channel-mixing refinement: each block is u + W2 gelu(W1 LN(u) + b1) + b2.
/// W2 and b2 start at zero, so a fresh stack is the identity map.
pub fn add_mixer<T: Scalar>(
    store: &mut ParamStore<T>,
    latent_dim: usize,
    n_blocks: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MixerParams> {
    let hidden = 2 * latent_dim;
    let mut blocks = Vec::with_capacity(n_blocks);
    for i in 0..n_blocks {
        blocks.push(MixerBlock {
            ln_g: store.add(&format!("mix{i}.ln.g"), &[latent_dim], ones(latent_dim))?,
            ln_b: store.add(&format!("mix{i}.ln.b"), &[latent_dim], zeros(latent_dim))?,
            w1: store.add(&format!("mix{i}.w1"), &[latent_dim, hidden], fan_in_uniform(rng, latent_dim, hidden))?,
            b1: store.add(&format!("mix{i}.b1"), &[hidden], zeros(hidden))?,
            w2: store.add(&format!("mix{i}.w2"), &[hidden, latent_dim], zeros(hidden * latent_dim))?,
            b2: store.add(&format!("mix{i}.b2"), &[latent_dim], zeros(latent_dim))?,
        });
    }
    Ok(MixerParams { blocks })
}

pub fn mixer_forward<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    p: &MixerParams,
    mut u: TensorId,
) -> Result<TensorId> {
    for b in &p.blocks {
        let h = tape.layer_norm(u, bound.id(b.ln_g), bound.id(b.ln_b), LN_EPS)?;
        let h = tape.matmul(h, bound.id(b.w1))?;
        let h = tape.add_bias(h, bound.id(b.b1))?;
        let h = tape.gelu(h)?;
        let h = tape.matmul(h, bound.id(b.w2))?;
        let h = tape.add_bias(h, bound.id(b.b2))?;
        u = tape.add(u, h)?;
    }
    Ok(u)
}

/// Pool token rows to a single row. The fused representation here is a single
/// token, so this is an average over one row, but the head stays correct if
/// the token axis ever grows.
pub fn gap<T: Scalar>(tape: &mut Tape<T>, u: TensorId) -> Result<TensorId> {
    tape.mean_rows(u)
}

pub struct HeadParams {
    pub w: ParamId,
    pub b: ParamId,
}

pub fn add_head<T: Scalar>(
    store: &mut ParamStore<T>,
    latent_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<HeadParams> {
    Ok(HeadParams {
        w: store.add("head.w", &[latent_dim, 1], fan_in_uniform(rng, latent_dim, 1))?,
        b: store.add("head.b", &[1], zeros(1))?,
    })
}

/// Sigmoid probability of the positive class from one pooled row.
pub fn classify<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    p: &HeadParams,
    f: TensorId,
) -> Result<TensorId> {
    let logit = tape.matmul(f, bound.id(p.w))?;
    let logit = tape.add_bias(logit, bound.id(p.b))?;
    tape.sigmoid(logit)
}

pub struct EarlyParams {
    pub w: ParamId,
    pub b: ParamId,
}

pub fn add_early<T: Scalar>(
    store: &mut ParamStore<T>,
    latent_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EarlyParams> {
    Ok(EarlyParams {
        w: store.add("early.w", &[2 * latent_dim, latent_dim], fan_in_uniform(rng, 2 * latent_dim, latent_dim))?,
        b: store.add("early.b", &[latent_dim], zeros(latent_dim))?,
    })
}

/// Concatenate both modality representations and mix them with one linear
/// layer: the whole early-fusion path is affine, a deliberate baseline.
pub fn early_fuse<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    p: &EarlyParams,
    f_hct: TensorId,
    f_meta: TensorId,
) -> Result<TensorId> {
    let cat = tape.concat_cols(&[f_hct, f_meta])?;
    let f = tape.matmul(cat, bound.id(p.w))?;
    tape.add_bias(f, bound.id(p.b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;

    #[test]
    fn zeroed_output_projection_makes_fusion_a_passthrough() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = stream_rng(2, "fusion-test");
        let p = add_fusion(&mut store, 8, 2, &mut rng).unwrap();
        for x in store.data_mut(p.attn.wo).iter_mut() {
            *x = 0.0;
        }
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, &vec![true; store.len()]).unwrap();
        let hct: Vec<f64> = (0..8).map(|i| 0.3 * i as f64 - 1.0).collect();
        let f_hct = tape.constant(hct.clone(), &[1, 8]).unwrap();
        let f_meta = tape.constant(vec![0.7; 8], &[1, 8]).unwrap();
        let fused = cross_attention_fuse(&mut tape, &bound, &p, f_hct, f_meta).unwrap();
        assert_eq!(tape.value(fused), hct.as_slice());
    }

    #[test]
    fn fresh_mixer_stack_is_the_identity() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = stream_rng(3, "fusion-test");
        let p = add_mixer(&mut store, 6, 2, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, &vec![true; store.len()]).unwrap();
        let u0: Vec<f64> = vec![0.4, -1.2, 2.0, 0.0, 0.9, -0.3];
        let u = tape.constant(u0.clone(), &[1, 6]).unwrap();
        let out = mixer_forward(&mut tape, &bound, &p, u).unwrap();
        assert_eq!(tape.value(out), u0.as_slice());
    }

    #[test]
    fn trained_mixer_block_changes_its_input() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = stream_rng(4, "fusion-test");
        let p = add_mixer(&mut store, 4, 1, &mut rng).unwrap();
        let w2 = store.find("mix0.w2").unwrap();
        for (i, x) in store.data_mut(w2).iter_mut().enumerate() {
            *x = 0.01 * (i as f64 + 1.0);
        }
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, &vec![true; store.len()]).unwrap();
        let u0 = vec![0.4, -1.2, 2.0, 0.0];
        let u = tape.constant(u0.clone(), &[1, 4]).unwrap();
        let out = mixer_forward(&mut tape, &bound, &p, u).unwrap();
        assert_ne!(tape.value(out), u0.as_slice());
    }

    #[test]
    fn classify_is_a_probability() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = stream_rng(5, "fusion-test");
        let p = add_head(&mut store, 4, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, &vec![true; store.len()]).unwrap();
        let f = tape.constant(vec![3.0, -2.0, 0.5, 10.0], &[1, 4]).unwrap();
        let prob = classify(&mut tape, &bound, &p, f).unwrap();
        let v = tape.scalar_value(prob);
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn early_fuse_concatenates_both_inputs() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = stream_rng(6, "fusion-test");
        let p = add_early(&mut store, 2, &mut rng).unwrap();
        // Identity-block weights expose which half each output coord reads.
        let w = store.data_mut(p.w);
        w.copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, &vec![true; store.len()]).unwrap();
        let a = tape.constant(vec![5.0, 7.0], &[1, 2]).unwrap();
        let b = tape.constant(vec![11.0, 13.0], &[1, 2]).unwrap();
        let f = early_fuse(&mut tape, &bound, &p, a, b).unwrap();
        assert_eq!(tape.value(f), &[5.0, 11.0]);
    }
}
