//! Patch extraction, embedding with mask/shuffle mechanics, and the frozen
//! pre-norm transformer encoder.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::linalg::{dot, gelu, layer_norm, linear, softmax_in_place};
use super::{ModelConfig, ModelError, WeightSet};
use crate::dataset::{CHANNELS, HEIGHT, IMAGE_VALUES, WIDTH};

fn check_image(image: &[f32]) -> Result<(), ModelError> {
    if image.len() != IMAGE_VALUES {
        return Err(ModelError::ShapeMismatch {
            what: "image".to_string(),
            expected: format!("{IMAGE_VALUES} values"),
            actual: format!("{} values", image.len()),
        });
    }
    Ok(())
}

/// Splits a channel-major 5x32x32 image into flattened patches.
///
/// Patch (i, j) of the row-major patch grid holds the channels x ph x pw
/// sub-block, flattened channel-major. Output is `patch_count x patch_dim`,
/// row-major.
pub fn patchify(image: &[f32], config: &ModelConfig) -> Result<Vec<f32>, ModelError> {
    check_image(image)?;
    let (_, ph, pw) = config.patch_shape;
    let (grid_h, grid_w) = config.patch_grid();
    let patch_dim = config.patch_dim();
    let mut out = vec![0f32; config.patch_count() * patch_dim];
    for gi in 0..grid_h {
        for gj in 0..grid_w {
            let patch = (gi * grid_w + gj) * patch_dim;
            for c in 0..CHANNELS {
                for r in 0..ph {
                    let row = gi * ph + r;
                    let src = c * HEIGHT * WIDTH + row * WIDTH + gj * pw;
                    let dst = patch + c * ph * pw + r * pw;
                    out[dst..dst + pw].copy_from_slice(&image[src..src + pw]);
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`patchify`].
pub fn unpatchify(patches: &[f32], config: &ModelConfig) -> Result<Vec<f32>, ModelError> {
    let patch_dim = config.patch_dim();
    let expected = config.patch_count() * patch_dim;
    if patches.len() != expected {
        return Err(ModelError::ShapeMismatch {
            what: "patches".to_string(),
            expected: format!("{expected} values"),
            actual: format!("{} values", patches.len()),
        });
    }
    let (_, ph, pw) = config.patch_shape;
    let (grid_h, grid_w) = config.patch_grid();
    let mut out = vec![0f32; IMAGE_VALUES];
    for gi in 0..grid_h {
        for gj in 0..grid_w {
            let patch = (gi * grid_w + gj) * patch_dim;
            for c in 0..CHANNELS {
                for r in 0..ph {
                    let row = gi * ph + r;
                    let dst = c * HEIGHT * WIDTH + row * WIDTH + gj * pw;
                    let src = patch + c * ph * pw + r * pw;
                    out[dst..dst + pw].copy_from_slice(&patches[src..src + pw]);
                }
            }
        }
    }
    Ok(out)
}

/// Embeds each patch and adds its positional vector: `e_i = p_i W^T + b + pos_i`.
fn embed_patches(
    patches: &[f32],
    weights: &WeightSet,
    config: &ModelConfig,
) -> Result<Vec<f32>, ModelError> {
    let d = config.embed_dim;
    let p = config.patch_dim();
    let n = config.patch_count();
    let w = weights.shaped("patch_embed.weight", &[d, p])?;
    let b = weights.shaped("patch_embed.bias", &[d])?;
    let pos = weights.shaped("positional", &[n, d])?;
    let mut tokens = Vec::with_capacity(n * d);
    for i in 0..n {
        let patch = &patches[i * p..(i + 1) * p];
        let mut e = linear(patch, &w.data, Some(&b.data), p, d);
        for (v, pv) in e.iter_mut().zip(&pos.data[i * d..(i + 1) * d]) {
            *v += *pv;
        }
        tokens.extend_from_slice(&e);
    }
    Ok(tokens)
}

/// Result of the pretraining-path masking mechanics.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSelection {
    /// Kept embeddings, `kept_indices.len() x embed_dim`, in shuffled order.
    pub kept_embeddings: Vec<f32>,
    pub kept_indices: Vec<usize>,
    pub mask_indices: Vec<usize>,
}

/// Embeds patches, shuffles them with a seeded permutation, and keeps the
/// first `(1 - mask_ratio) * patch_count` of the shuffled order.
pub fn embed_mask_shuffle(
    patches: &[f32],
    weights: &WeightSet,
    config: &ModelConfig,
    mask_ratio: f32,
    seed: u64,
) -> Result<MaskSelection, ModelError> {
    let n = config.patch_count();
    if !(0.0..1.0).contains(&mask_ratio) {
        return Err(ModelError::InvalidMaskRatio(mask_ratio));
    }
    let masked_exact = mask_ratio as f64 * n as f64;
    if (masked_exact - masked_exact.round()).abs() > 1e-9 {
        return Err(ModelError::InvalidMaskRatio(mask_ratio));
    }
    let kept = n - masked_exact.round() as usize;
    let tokens = embed_patches(patches, weights, config)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let d = config.embed_dim;
    let kept_indices = order[..kept].to_vec();
    let mut mask_indices = order[kept..].to_vec();
    mask_indices.sort_unstable();
    let mut kept_embeddings = Vec::with_capacity(kept * d);
    for &i in &kept_indices {
        kept_embeddings.extend_from_slice(&tokens[i * d..(i + 1) * d]);
    }
    Ok(MaskSelection {
        kept_embeddings,
        kept_indices,
        mask_indices,
    })
}

/// One pre-norm transformer block: LN -> multi-head self-attention ->
/// residual; LN -> GELU MLP -> residual. `tokens` is `n x d` row-major.
fn encoder_block(
    tokens: &mut [f32],
    weights: &WeightSet,
    config: &ModelConfig,
    block: usize,
) -> Result<(), ModelError> {
    let d = config.embed_dim;
    let n = tokens.len() / d;
    let heads = config.attention_heads;
    let head_dim = d / heads;
    let pre = format!("encoder.block{block}");
    let ln1_g = weights.shaped(&format!("{pre}.ln1.gamma"), &[d])?;
    let ln1_b = weights.shaped(&format!("{pre}.ln1.beta"), &[d])?;
    let wq = weights.shaped(&format!("{pre}.attn.wq"), &[d, d])?;
    let wk = weights.shaped(&format!("{pre}.attn.wk"), &[d, d])?;
    let wv = weights.shaped(&format!("{pre}.attn.wv"), &[d, d])?;
    let wo = weights.shaped(&format!("{pre}.attn.wo"), &[d, d])?;
    let bq = weights.shaped(&format!("{pre}.attn.bq"), &[d])?;
    let bk = weights.shaped(&format!("{pre}.attn.bk"), &[d])?;
    let bv = weights.shaped(&format!("{pre}.attn.bv"), &[d])?;
    let bo = weights.shaped(&format!("{pre}.attn.bo"), &[d])?;

    // Attention sublayer.
    let mut q = Vec::with_capacity(n * d);
    let mut k = Vec::with_capacity(n * d);
    let mut v = Vec::with_capacity(n * d);
    for i in 0..n {
        let normed = layer_norm(&tokens[i * d..(i + 1) * d], &ln1_g.data, &ln1_b.data);
        q.extend_from_slice(&linear(&normed, &wq.data, Some(&bq.data), d, d));
        k.extend_from_slice(&linear(&normed, &wk.data, Some(&bk.data), d, d));
        v.extend_from_slice(&linear(&normed, &wv.data, Some(&bv.data), d, d));
    }
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut attended = vec![0f32; n * d];
    let mut scores = vec![0f32; n];
    for h in 0..heads {
        let off = h * head_dim;
        for i in 0..n {
            let qi = &q[i * d + off..i * d + off + head_dim];
            for j in 0..n {
                let kj = &k[j * d + off..j * d + off + head_dim];
                scores[j] = (dot(qi, kj) * scale) as f32;
            }
            softmax_in_place(&mut scores);
            let out = &mut attended[i * d + off..i * d + off + head_dim];
            for (j, w) in scores.iter().enumerate() {
                let vj = &v[j * d + off..j * d + off + head_dim];
                for (o, x) in out.iter_mut().zip(vj) {
                    *o += *w * *x;
                }
            }
        }
    }
    for i in 0..n {
        let proj = linear(
            &attended[i * d..(i + 1) * d],
            &wo.data,
            Some(&bo.data),
            d,
            d,
        );
        for (t, p) in tokens[i * d..(i + 1) * d].iter_mut().zip(&proj) {
            *t += *p;
        }
    }

    // MLP sublayer.
    let ln2_g = weights.shaped(&format!("{pre}.ln2.gamma"), &[d])?;
    let ln2_b = weights.shaped(&format!("{pre}.ln2.beta"), &[d])?;
    let mlp = config.mlp_hidden();
    let w1 = weights.shaped(&format!("{pre}.mlp.w1"), &[mlp, d])?;
    let b1 = weights.shaped(&format!("{pre}.mlp.b1"), &[mlp])?;
    let w2 = weights.shaped(&format!("{pre}.mlp.w2"), &[d, mlp])?;
    let b2 = weights.shaped(&format!("{pre}.mlp.b2"), &[d])?;
    for i in 0..n {
        let normed = layer_norm(&tokens[i * d..(i + 1) * d], &ln2_g.data, &ln2_b.data);
        let mut hidden = linear(&normed, &w1.data, Some(&b1.data), d, mlp);
        for h in hidden.iter_mut() {
            *h = gelu(*h);
        }
        let out = linear(&hidden, &w2.data, Some(&b2.data), mlp, d);
        for (t, o) in tokens[i * d..(i + 1) * d].iter_mut().zip(&out) {
            *t += *o;
        }
    }
    Ok(())
}

/// Frozen-encoder latent: embed all patches (no shuffle), run the blocks,
/// mean-pool over patches, and project to the encoder output width.
pub fn encode(
    image: &[f32],
    weights: &WeightSet,
    config: &ModelConfig,
) -> Result<Vec<f32>, ModelError> {
    let patches = patchify(image, config)?;
    let mut tokens = embed_patches(&patches, weights, config)?;
    for b in 0..config.encoder_blocks {
        encoder_block(&mut tokens, weights, config, b)?;
    }
    let d = config.embed_dim;
    let n = config.patch_count();
    let mut pooled = vec![0f32; d];
    for j in 0..d {
        let mut sum = 0.0f64;
        for i in 0..n {
            sum += tokens[i * d + j] as f64;
        }
        pooled[j] = (sum / n as f64) as f32;
    }
    let proj = weights.shaped("encoder.proj", &[config.encoder_out, d])?;
    Ok(linear(&pooled, &proj.data, None, d, config.encoder_out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::weights::{synth_weights, zero_weights};
    use rand::{Rng, SeedableRng};

    fn cfg() -> ModelConfig {
        ModelConfig::default()
    }

    fn random_image(seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..IMAGE_VALUES).map(|_| rng.random::<f32>()).collect()
    }

    #[test]
    fn constant_image_yields_constant_patches() {
        let image = vec![0.625f32; IMAGE_VALUES];
        let patches = patchify(&image, &cfg()).unwrap();
        assert_eq!(patches.len(), 16 * 320);
        assert!(patches.iter().all(|v| *v == 0.625));
    }

    #[test]
    fn patchify_unpatchify_are_exact_inverses() {
        let config = cfg();
        for seed in 0..8 {
            let image = random_image(seed);
            let patches = patchify(&image, &config).unwrap();
            let back = unpatchify(&patches, &config).unwrap();
            assert_eq!(back, image);
            // And the other composition order.
            assert_eq!(patchify(&back, &config).unwrap(), patches);
        }
    }

    #[test]
    fn single_pixel_lands_in_the_predicted_patch() {
        // Oracle: index arithmetic over the 4x4 grid. Pixel (ch 2, row 9,
        // col 17) sits in grid row 9/8 = 1, grid col 17/8 = 2, so patch
        // 1*4 + 2 = 6.
        let config = cfg();
        let (ch, row, col) = (2usize, 9usize, 17usize);
        let oracle_patch = (row / 8) * 4 + (col / 8);
        assert_eq!(oracle_patch, 6);
        let mut image = vec![0f32; IMAGE_VALUES];
        image[ch * HEIGHT * WIDTH + row * WIDTH + col] = 3.5;
        let patches = patchify(&image, &config).unwrap();
        for p in 0..16 {
            let slice = &patches[p * 320..(p + 1) * 320];
            let nonzero = slice.iter().any(|v| *v != 0.0);
            assert_eq!(nonzero, p == oracle_patch, "patch {p}");
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        assert!(matches!(
            patchify(&[0.0; 7], &cfg()),
            Err(ModelError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            unpatchify(&[0.0; 7], &cfg()),
            Err(ModelError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn mask_ratio_075_keeps_4_of_16() {
        let config = cfg();
        let weights = synth_weights(&config, 1).unwrap();
        let patches = patchify(&random_image(3), &config).unwrap();
        let sel = embed_mask_shuffle(&patches, &weights, &config, 0.75, 11).unwrap();
        assert_eq!(sel.kept_indices.len(), 4);
        assert_eq!(sel.mask_indices.len(), 12);
        assert_eq!(sel.kept_embeddings.len(), 4 * config.embed_dim);
        // kept and masked together form a permutation of 0..16.
        let mut all: Vec<usize> = sel
            .kept_indices
            .iter()
            .chain(&sel.mask_indices)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn mask_ratio_zero_keeps_everything_shuffled() {
        let config = cfg();
        let weights = synth_weights(&config, 1).unwrap();
        let patches = patchify(&random_image(4), &config).unwrap();
        let sel = embed_mask_shuffle(&patches, &weights, &config, 0.0, 11).unwrap();
        assert_eq!(sel.kept_indices.len(), 16);
        assert!(sel.mask_indices.is_empty());
        let mut sorted = sel.kept_indices.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_gives_identical_selection() {
        let config = cfg();
        let weights = synth_weights(&config, 1).unwrap();
        let patches = patchify(&random_image(5), &config).unwrap();
        let a = embed_mask_shuffle(&patches, &weights, &config, 0.75, 99).unwrap();
        let b = embed_mask_shuffle(&patches, &weights, &config, 0.75, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_integral_mask_counts_are_rejected() {
        let config = cfg();
        let weights = synth_weights(&config, 1).unwrap();
        let patches = patchify(&random_image(5), &config).unwrap();
        assert!(matches!(
            embed_mask_shuffle(&patches, &weights, &config, 0.3, 1),
            Err(ModelError::InvalidMaskRatio(_))
        ));
        assert!(matches!(
            embed_mask_shuffle(&patches, &weights, &config, 1.0, 1),
            Err(ModelError::InvalidMaskRatio(_))
        ));
    }

    #[test]
    fn zero_weights_encode_to_zero() {
        let config = cfg();
        let weights = zero_weights(&config);
        let out = encode(&random_image(6), &weights, &config).unwrap();
        assert_eq!(out, vec![0f32; config.encoder_out]);
    }

    #[test]
    fn encode_is_deterministic() {
        let config = cfg();
        let weights = synth_weights(&config, 7).unwrap();
        let image = random_image(8);
        let a = encode(&image, &weights, &config).unwrap();
        let b = encode(&image, &weights, &config).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn zero_blocks_reduce_to_projected_mean_embedding() {
        // Oracle: straight-line dense algebra over the same weights.
        let mut config = cfg();
        config.encoder_blocks = 0;
        let weights = synth_weights(&config, 9).unwrap();
        let image = random_image(10);
        let got = encode(&image, &weights, &config).unwrap();

        let d = config.embed_dim;
        let p = config.patch_dim();
        let w = weights.get("patch_embed.weight").unwrap();
        let b = weights.get("patch_embed.bias").unwrap();
        let pos = weights.get("positional").unwrap();
        let proj = weights.get("encoder.proj").unwrap();
        let patches = patchify(&image, &config).unwrap();
        // Tokens are f32: e_i = f32(patch . W_row + b) + pos_i, then the
        // pool averages token values in f64 and rounds back to f32.
        let mut mean = vec![0f64; d];
        for i in 0..16 {
            for j in 0..d {
                let patch = &patches[i * p..(i + 1) * p];
                let row = &w.data[j * p..(j + 1) * p];
                let mut acc = b.data[j] as f64;
                for (x, y) in patch.iter().zip(row) {
                    acc += *x as f64 * *y as f64;
                }
                let token = acc as f32 + pos.data[i * d + j];
                mean[j] += token as f64;
            }
        }
        let pooled: Vec<f32> = mean.iter().map(|m| (*m / 16.0) as f32).collect();
        for (o, out_val) in got.iter().enumerate() {
            let mut acc = 0.0f64;
            for j in 0..d {
                acc += pooled[j] as f64 * proj.data[o * d + j] as f64;
            }
            let rel = (acc - *out_val as f64).abs() / acc.abs().max(1e-9);
            assert!(rel < 1e-6, "component {o}: {acc} vs {out_val}");
        }
    }
}
