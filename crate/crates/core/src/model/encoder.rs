use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::model::attention::{add_attention, multi_head_attention, AttentionParams};
use crate::model::config::EncoderConfig;
use crate::model::init::{fan_in_uniform, ones, uniform, zeros};
use crate::model::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;

const LN_EPS: f64 = 1e-5;

/// Cut a `side^3` volume into `patch^3` blocks: one row per patch, patches in
/// lexicographic (depth, height, width) block order, voxels within a patch in
/// the same order. Inverse of [`unpatchify`].
pub fn patchify<T: Scalar>(voxels: &[f32], side: usize, patch: usize) -> Result<Vec<T>> {
    if patch == 0 || side % patch != 0 {
        return Err(Error::Shape(format!("side {side} is not a multiple of patch {patch}")));
    }
    if voxels.len() != side * side * side {
        return Err(Error::Shape(format!(
            "expected {} voxels for side {side}, got {}",
            side * side * side,
            voxels.len()
        )));
    }
    let g = side / patch;
    let mut out = Vec::with_capacity(voxels.len());
    for pd in 0..g {
        for ph in 0..g {
            for pw in 0..g {
                for d in 0..patch {
                    for h in 0..patch {
                        for w in 0..patch {
                            let idx = ((pd * patch + d) * side + ph * patch + h) * side
                                + pw * patch
                                + w;
                            out.push(T::from_f64(voxels[idx] as f64));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn unpatchify<T: Scalar>(rows: &[T], side: usize, patch: usize) -> Result<Vec<T>> {
    if patch == 0 || side % patch != 0 {
        return Err(Error::Shape(format!("side {side} is not a multiple of patch {patch}")));
    }
    if rows.len() != side * side * side {
        return Err(Error::Shape(format!(
            "expected {} values for side {side}, got {}",
            side * side * side,
            rows.len()
        )));
    }
    let g = side / patch;
    let plen = patch * patch * patch;
    let mut out = vec![T::default(); rows.len()];
    for pd in 0..g {
        for ph in 0..g {
            for pw in 0..g {
                let r = (pd * g + ph) * g + pw;
                for d in 0..patch {
                    for h in 0..patch {
                        for w in 0..patch {
                            let idx = ((pd * patch + d) * side + ph * patch + h) * side
                                + pw * patch
                                + w;
                            out[idx] = rows[r * plen + (d * patch + h) * patch + w];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub struct BlockParams {
    ln1_g: ParamId,
    ln1_b: ParamId,
    attn: AttentionParams,
    ln2_g: ParamId,
    ln2_b: ParamId,
    mlp_w1: ParamId,
    mlp_b1: ParamId,
    mlp_w2: ParamId,
    mlp_b2: ParamId,
}

pub struct EncoderParams {
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    pub pos: ParamId,
    pub mask_token: ParamId,
    blocks: Vec<BlockParams>,
    ln_f_g: ParamId,
    ln_f_b: ParamId,
    dec_w: ParamId,
    dec_b: ParamId,
    pub hct_w: ParamId,
    pub hct_b: ParamId,
}

/// Register all encoder parameters (embedding, position table, mask token,
/// transformer blocks, reconstruction decoder, flatten projection).
pub fn add_encoder<T: Scalar>(
    store: &mut ParamStore<T>,
    cfg: &EncoderConfig,
    latent_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EncoderParams> {
    let d = cfg.embed_dim;
    let n = cfg.n_patches();
    let plen = cfg.patch_len();
    let hidden = 2 * d;
    let d_head = d / cfg.heads;

    let embed_w = store.add("enc.embed.w", &[plen, d], fan_in_uniform(rng, plen, d))?;
    let embed_b = store.add("enc.embed.b", &[d], zeros(d))?;
    let pos = store.add("enc.pos", &[n, d], uniform(rng, n * d, 0.1))?;
    let mask_token = store.add("enc.mask_token", &[1, d], uniform(rng, d, 0.1))?;
    let mut blocks = Vec::with_capacity(cfg.depth);
    for b in 0..cfg.depth {
        let p = format!("enc.b{b}");
        blocks.push(BlockParams {
            ln1_g: store.add(&format!("{p}.ln1.g"), &[d], ones(d))?,
            ln1_b: store.add(&format!("{p}.ln1.b"), &[d], zeros(d))?,
            attn: add_attention(store, &format!("{p}.attn"), d, d, cfg.heads, d_head, d, rng)?,
            ln2_g: store.add(&format!("{p}.ln2.g"), &[d], ones(d))?,
            ln2_b: store.add(&format!("{p}.ln2.b"), &[d], zeros(d))?,
            mlp_w1: store.add(&format!("{p}.mlp.w1"), &[d, hidden], fan_in_uniform(rng, d, hidden))?,
            mlp_b1: store.add(&format!("{p}.mlp.b1"), &[hidden], zeros(hidden))?,
            mlp_w2: store.add(&format!("{p}.mlp.w2"), &[hidden, d], fan_in_uniform(rng, hidden, d))?,
            mlp_b2: store.add(&format!("{p}.mlp.b2"), &[d], zeros(d))?,
        });
    }
    let ln_f_g = store.add("enc.ln_f.g", &[d], ones(d))?;
    let ln_f_b = store.add("enc.ln_f.b", &[d], zeros(d))?;
    let dec_w = store.add("enc.dec.w", &[d, plen], fan_in_uniform(rng, d, plen))?;
    let dec_b = store.add("enc.dec.b", &[plen], zeros(plen))?;
    let hct_w = store.add("hct.w", &[n * d, latent_dim], fan_in_uniform(rng, n * d, latent_dim))?;
    let hct_b = store.add("hct.b", &[latent_dim], zeros(latent_dim))?;
    Ok(EncoderParams {
        embed_w,
        embed_b,
        pos,
        mask_token,
        blocks,
        ln_f_g,
        ln_f_b,
        dec_w,
        dec_b,
        hct_w,
        hct_b,
    })
}

/// Names of every parameter the flatten projection and encoder own; the
/// freeze-encoder training mode holds all of these fixed.
pub fn encoder_param_prefixes() -> [&'static str; 2] {
    ["enc.", "hct."]
}

/// Pre-norm transformer over patch rows. `patch_indices` selects which
/// position rows pair with the given patches (None = all patches in order).
pub fn encode<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    p: &EncoderParams,
    patches: TensorId,
    patch_indices: Option<&[usize]>,
) -> Result<TensorId> {
    let embedded = tape.matmul(patches, bound.id(p.embed_w))?;
    let embedded = tape.add_bias(embedded, bound.id(p.embed_b))?;
    let pos_rows = match patch_indices {
        Some(idx) => tape.gather_rows(bound.id(p.pos), idx)?,
        None => bound.id(p.pos),
    };
    let mut x = tape.add(embedded, pos_rows)?;
    for b in &p.blocks {
        let h = tape.layer_norm(x, bound.id(b.ln1_g), bound.id(b.ln1_b), LN_EPS)?;
        let a = multi_head_attention(tape, bound, &b.attn, h, h)?;
        x = tape.add(x, a)?;
        let h2 = tape.layer_norm(x, bound.id(b.ln2_g), bound.id(b.ln2_b), LN_EPS)?;
        let m = tape.matmul(h2, bound.id(b.mlp_w1))?;
        let m = tape.add_bias(m, bound.id(b.mlp_b1))?;
        let m = tape.gelu(m)?;
        let m = tape.matmul(m, bound.id(b.mlp_w2))?;
        let m = tape.add_bias(m, bound.id(b.mlp_b2))?;
        x = tape.add(x, m)?;
    }
    tape.layer_norm(x, bound.id(p.ln_f_g), bound.id(p.ln_f_b), LN_EPS)
}

/// Seeded random split of patch indices into (visible, masked), both sorted;
/// exactly round(mask_ratio * n) patches are masked.
pub fn choose_mask(
    n_patches: usize,
    mask_ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let m = (mask_ratio * n_patches as f64).round() as usize;
    if m == 0 || m >= n_patches {
        return Err(Error::Validation(format!(
            "mask_ratio {mask_ratio} leaves no masked or no visible patches out of {n_patches}"
        )));
    }
    let mut idx: Vec<usize> = (0..n_patches).collect();
    idx.shuffle(rng);
    let mut masked: Vec<usize> = idx[..m].to_vec();
    let mut visible: Vec<usize> = idx[m..].to_vec();
    masked.sort_unstable();
    visible.sort_unstable();
    Ok((visible, masked))
}

/// Masked-reconstruction objective: encode only visible patches, rebuild the
/// full sequence with the shared mask token at hidden positions, decode every
/// position, and score mean squared error on the masked rows only.
pub fn mae_loss<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    p: &EncoderParams,
    patches: TensorId,
    visible: &[usize],
    masked: &[usize],
) -> Result<TensorId> {
    let n = tape.shape(patches)[0];
    if visible.is_empty() || masked.is_empty() {
        return Err(Error::Validation("mask split needs both visible and masked patches".into()));
    }
    let vis_patches = tape.gather_rows(patches, visible)?;
    let encoded = encode(tape, bound, p, vis_patches, Some(visible))?;
    let seq = tape.concat_rows(&[encoded, bound.id(p.mask_token)])?;
    // Row i of the decoder input: the encoded row for visible positions, the
    // shared mask-token row (index n_visible) everywhere else.
    let mut full_idx = vec![visible.len(); n];
    for (rank, &i) in visible.iter().enumerate() {
        full_idx[i] = rank;
    }
    let dec_in = tape.gather_rows(seq, &full_idx)?;
    let dec_in = tape.add(dec_in, bound.id(p.pos))?;
    let recon = tape.matmul(dec_in, bound.id(p.dec_w))?;
    let recon = tape.add_bias(recon, bound.id(p.dec_b))?;
    let recon_masked = tape.gather_rows(recon, masked)?;
    let target_masked = tape.gather_rows(patches, masked)?;
    tape.mse_loss(recon_masked, target_masked)
}

/// Flatten all token rows into one vector and project to the fusion width.
pub fn project_hct<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    p: &EncoderParams,
    tokens: TensorId,
) -> Result<TensorId> {
    let shape = tape.shape(tokens);
    let flat = tape.reshape(tokens, &[1, shape[0] * shape[1]])?;
    let proj = tape.matmul(flat, bound.id(p.hct_w))?;
    tape.add_bias(proj, bound.id(p.hct_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;
    use rand::Rng;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig { side: 8, patch: 4, embed_dim: 8, depth: 1, heads: 2, mask_ratio: 0.5 }
    }

    fn build(cfg: &EncoderConfig, seed: u64) -> (ParamStore<f32>, EncoderParams) {
        let mut store = ParamStore::new();
        let mut rng = stream_rng(seed, "init");
        let p = add_encoder(&mut store, cfg, 16, &mut rng).unwrap();
        (store, p)
    }

    #[test]
    fn patchify_block_order_matches_coordinate_oracle() {
        // Voxel value = its linear index; every patch row must contain the
        // indices predicted straight from block coordinates.
        let side = 4;
        let patch = 2;
        let voxels: Vec<f32> = (0..64).map(|i| i as f32).collect();
        let rows: Vec<f32> = patchify(&voxels, side, patch).unwrap();
        let g = side / patch;
        let mut r = 0;
        for pd in 0..g {
            for ph in 0..g {
                for pw in 0..g {
                    for d in 0..patch {
                        for h in 0..patch {
                            for w in 0..patch {
                                let expect =
                                    ((pd * 2 + d) * 4 + ph * 2 + h) * 4 + pw * 2 + w;
                                assert_eq!(rows[r] as usize, expect);
                                r += 1;
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn patchify_unpatchify_roundtrip() {
        let mut rng = stream_rng(5, "patch-roundtrip");
        let voxels: Vec<f32> = (0..512).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rows: Vec<f32> = patchify(&voxels, 8, 2).unwrap();
        let back = unpatchify(&rows, 8, 2).unwrap();
        assert_eq!(voxels, back);
    }

    #[test]
    fn patchify_large_volume_yields_512_patches() {
        let side = 128;
        let voxels = vec![0.0f32; side * side * side];
        let rows: Vec<f32> = patchify(&voxels, side, 16).unwrap();
        assert_eq!(rows.len(), side * side * side);
        assert_eq!(rows.len() / (16 * 16 * 16), 512);
    }

    #[test]
    fn patchify_rejects_bad_sizes() {
        assert!(patchify::<f32>(&[0.0; 27], 3, 2).is_err());
        assert!(patchify::<f32>(&[0.0; 10], 4, 2).is_err());
    }

    #[test]
    fn encode_shape_and_determinism() {
        let cfg = tiny_cfg();
        let (store, p) = build(&cfg, 11);
        let run = || {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape, &vec![true; store.len()]).unwrap();
            let patches = tape
                .constant((0..cfg.n_patches() * cfg.patch_len()).map(|i| (i % 7) as f32 * 0.1).collect(), &[cfg.n_patches(), cfg.patch_len()])
                .unwrap();
            let tokens = encode(&mut tape, &bound, &p, patches, None).unwrap();
            assert_eq!(tape.shape(tokens), &[cfg.n_patches(), cfg.embed_dim]);
            tape.value(tokens).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn choose_mask_counts_and_partition() {
        let mut rng = stream_rng(3, "mask");
        let (vis, masked) = choose_mask(64, 0.75, &mut rng).unwrap();
        assert_eq!(masked.len(), 48);
        assert_eq!(vis.len(), 16);
        let mut all: Vec<usize> = vis.iter().chain(masked.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>());
        // Sorted halves.
        assert!(vis.windows(2).all(|w| w[0] < w[1]));
        assert!(masked.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn choose_mask_rejects_degenerate_splits() {
        let mut rng = stream_rng(3, "mask");
        assert!(choose_mask(4, 0.05, &mut rng).is_err());
        assert!(choose_mask(4, 0.99, &mut rng).is_err());
    }

    #[test]
    fn mae_loss_near_one_on_unit_noise_at_init() {
        // Untrained reconstruction of N(0,1) targets: loss ~ E[x^2] = 1 plus
        // a small contribution from the random decoder output.
        let cfg = tiny_cfg();
        let (store, p) = build(&cfg, 17);
        let mut rng = stream_rng(17, "mae-noise");
        let n = cfg.n_patches() * cfg.patch_len();
        let voxels: Vec<f32> =
            (0..n).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)).collect();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, &vec![true; store.len()]).unwrap();
        let rows = patchify::<f32>(&voxels, cfg.side, cfg.patch).unwrap();
        let patches = tape.constant(rows, &[cfg.n_patches(), cfg.patch_len()]).unwrap();
        let (vis, masked) = choose_mask(cfg.n_patches(), cfg.mask_ratio, &mut rng).unwrap();
        let loss = mae_loss(&mut tape, &bound, &p, patches, &vis, &masked).unwrap();
        let v = tape.scalar_value(loss) as f64;
        assert!((0.5..2.0).contains(&v), "loss {v}");
    }

    #[test]
    fn masked_patch_content_cannot_reach_the_encoder() {
        // Changing voxels inside a masked patch must leave the encoded
        // visible tokens bit-identical; only the reconstruction target moves.
        let cfg = tiny_cfg();
        let (store, p) = build(&cfg, 23);
        let mut rng = stream_rng(23, "mask");
        let (vis, masked) = choose_mask(cfg.n_patches(), cfg.mask_ratio, &mut rng).unwrap();

        let run = |bump: f32| {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape, &vec![true; store.len()]).unwrap();
            let mut rows: Vec<f32> = (0..cfg.n_patches() * cfg.patch_len())
                .map(|i| ((i * 37 % 11) as f32 - 5.0) * 0.2)
                .collect();
            let plen = cfg.patch_len();
            for c in 0..plen {
                rows[masked[0] * plen + c] += bump;
            }
            let patches = tape.constant(rows, &[cfg.n_patches(), plen]).unwrap();
            let vis_rows = tape.gather_rows(patches, &vis).unwrap();
            let tokens = encode(&mut tape, &bound, &p, vis_rows, Some(&vis)).unwrap();
            let toks = tape.value(tokens).to_vec();
            let mut tape2 = Tape::new();
            let bound2 = store.bind(&mut tape2, &vec![true; store.len()]).unwrap();
            let patches2 = tape2.constant(tape.value(patches).to_vec(), &[cfg.n_patches(), plen]).unwrap();
            let loss = mae_loss(&mut tape2, &bound2, &p, patches2, &vis, &masked).unwrap();
            (toks, tape2.scalar_value(loss))
        };
        let (t0, l0) = run(0.0);
        let (t1, l1) = run(3.0);
        assert_eq!(t0, t1);
        assert_ne!(l0, l1);
    }

    #[test]
    fn project_hct_shape() {
        let cfg = tiny_cfg();
        let (store, p) = build(&cfg, 31);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, &vec![true; store.len()]).unwrap();
        let tokens = tape
            .constant(vec![0.1; cfg.n_patches() * cfg.embed_dim], &[cfg.n_patches(), cfg.embed_dim])
            .unwrap();
        let f = project_hct(&mut tape, &bound, &p, tokens).unwrap();
        assert_eq!(tape.shape(f), &[1, 16]);
    }
}
