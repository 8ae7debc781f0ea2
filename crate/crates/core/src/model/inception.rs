//! Inception feature branch: four parallel convolution paths over the
//! 5-channel image, concatenated, rectified, and globally average-pooled.

use super::linalg::relu_in_place;
use super::{ModelConfig, ModelError, WeightSet};
use crate::dataset::{CHANNELS, HEIGHT, IMAGE_VALUES, WIDTH};

/// Direct same-padded convolution of one output channel over the full image.
/// `kernel` is `[in_channels, k, k]`, odd k. Accumulates per pixel in f64.
fn conv_channel(image: &[f32], kernel: &[f32], bias: f32, k: usize, out: &mut [f32]) {
    let pad = (k / 2) as isize;
    for y in 0..HEIGHT as isize {
        for x in 0..WIDTH as isize {
            let mut acc = bias as f64;
            for c in 0..CHANNELS {
                let plane = &image[c * HEIGHT * WIDTH..(c + 1) * HEIGHT * WIDTH];
                let kplane = &kernel[c * k * k..(c + 1) * k * k];
                for ky in 0..k as isize {
                    let sy = y + ky - pad;
                    if sy < 0 || sy >= HEIGHT as isize {
                        continue;
                    }
                    for kx in 0..k as isize {
                        let sx = x + kx - pad;
                        if sx < 0 || sx >= WIDTH as isize {
                            continue;
                        }
                        acc += plane[sy as usize * WIDTH + sx as usize] as f64
                            * kplane[ky as usize * k + kx as usize] as f64;
                    }
                }
            }
            out[y as usize * WIDTH + x as usize] = acc as f32;
        }
    }
}

/// 3x3 stride-1 max pool per input channel; out-of-bounds taps are ignored.
fn max_pool_3x3(image: &[f32], out: &mut [f32]) {
    for c in 0..CHANNELS {
        let plane = &image[c * HEIGHT * WIDTH..(c + 1) * HEIGHT * WIDTH];
        let dst = &mut out[c * HEIGHT * WIDTH..(c + 1) * HEIGHT * WIDTH];
        for y in 0..HEIGHT as isize {
            for x in 0..WIDTH as isize {
                let mut m = f32::NEG_INFINITY;
                for dy in -1..=1 {
                    let sy = y + dy;
                    if sy < 0 || sy >= HEIGHT as isize {
                        continue;
                    }
                    for dx in -1..=1 {
                        let sx = x + dx;
                        if sx < 0 || sx >= WIDTH as isize {
                            continue;
                        }
                        let v = plane[sy as usize * WIDTH + sx as usize];
                        if v > m {
                            m = v;
                        }
                    }
                }
                dst[y as usize * WIDTH + x as usize] = m;
            }
        }
    }
}

/// Inception features: 1x1, 3x3, and 5x5 conv paths plus a max-pool + 1x1
/// path, each producing `inception_out / 4` channels, concatenated, ReLU'd,
/// and average-pooled per channel into the feature vector.
pub fn inception_features(
    image: &[f32],
    weights: &WeightSet,
    config: &ModelConfig,
) -> Result<Vec<f32>, ModelError> {
    if image.len() != IMAGE_VALUES {
        return Err(ModelError::ShapeMismatch {
            what: "image".to_string(),
            expected: format!("{IMAGE_VALUES} values"),
            actual: format!("{} values", image.len()),
        });
    }
    let q = config.inception_out;
    let path = q / 4;
    let mut channels: Vec<Vec<f32>> = Vec::with_capacity(q);
    let mut pooled_input = vec![0f32; IMAGE_VALUES];
    max_pool_3x3(image, &mut pooled_input);

    for (pi, (name, k)) in [("p1", 1usize), ("p3", 3), ("p5", 5), ("pool", 1)]
        .iter()
        .enumerate()
    {
        let w = weights.shaped(
            &format!("inception.{name}.weight"),
            &[path, CHANNELS, *k, *k],
        )?;
        let b = weights.shaped(&format!("inception.{name}.bias"), &[path])?;
        let source: &[f32] = if pi == 3 { &pooled_input } else { image };
        let ksize = CHANNELS * k * k;
        for oc in 0..path {
            let mut plane = vec![0f32; HEIGHT * WIDTH];
            conv_channel(
                source,
                &w.data[oc * ksize..(oc + 1) * ksize],
                b.data[oc],
                *k,
                &mut plane,
            );
            channels.push(plane);
        }
    }

    let mut features = Vec::with_capacity(q);
    for plane in channels.iter_mut() {
        relu_in_place(plane);
        let mut sum = 0.0f64;
        for v in plane.iter() {
            sum += *v as f64;
        }
        features.push((sum / (HEIGHT * WIDTH) as f64) as f32);
    }
    Ok(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::weights::{synth_weights, zero_weights, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_kernels_give_zero_features() {
        let config = ModelConfig::default();
        let weights = zero_weights(&config);
        let image = vec![1.0f32; IMAGE_VALUES];
        let out = inception_features(&image, &weights, &config).unwrap();
        assert_eq!(out, vec![0f32; config.inception_out]);
    }

    #[test]
    fn output_length_equals_inception_out() {
        for q in [4usize, 16, 32] {
            let config = ModelConfig {
                inception_out: q,
                ..ModelConfig::default()
            };
            let weights = synth_weights(&config, 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let image: Vec<f32> = (0..IMAGE_VALUES).map(|_| rng.random::<f32>()).collect();
            let out = inception_features(&image, &weights, &config).unwrap();
            assert_eq!(out.len(), q);
        }
    }

    #[test]
    fn constant_image_matches_hand_computed_1x1_path() {
        // Oracle: with a constant image of value c, a 1x1 conv with kernel
        // values k_ch and bias b produces c * sum(k_ch) + b at every pixel,
        // so the pooled value is relu(c * sum(k) + b).
        let config = ModelConfig::default();
        let mut weights = zero_weights(&config);
        let path = config.inception_out / 4;
        let mut w = Tensor::zeros(vec![path, CHANNELS, 1, 1]);
        // First output channel sums input channels with weights 0.1..0.5.
        for c in 0..CHANNELS {
            w.data[c] = 0.1 * (c as f32 + 1.0);
        }
        weights.insert("inception.p1.weight", w);
        let mut b = Tensor::zeros(vec![path]);
        b.data[0] = 0.25;
        weights.insert("inception.p1.bias", b);

        let c_val = 0.8f32;
        let image = vec![c_val; IMAGE_VALUES];
        let out = inception_features(&image, &weights, &config).unwrap();

        let mut oracle = 0.0f64;
        for c in 0..CHANNELS {
            oracle += c_val as f64 * (0.1 * (c as f32 + 1.0)) as f64;
        }
        oracle += 0.25;
        assert!((out[0] as f64 - oracle).abs() < 1e-6, "{} vs {oracle}", out[0]);
        // Everything else stays zero.
        assert!(out[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn direct_convolution_matches_naive_oracle_on_a_plane() {
        // Oracle: an independently written padded 3x3 convolution.
        let config = ModelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let image: Vec<f32> = (0..IMAGE_VALUES).map(|_| rng.random::<f32>() - 0.5).collect();
        let kernel: Vec<f32> = (0..CHANNELS * 9).map(|_| rng.random::<f32>() - 0.5).collect();
        let bias = 0.125f32;
        let mut got = vec![0f32; HEIGHT * WIDTH];
        conv_channel(&image, &kernel, bias, 3, &mut got);

        let _ = &config;
        for y in 0..HEIGHT {
            for x in 0..WIDTH {
                let mut acc = bias as f64;
                for c in 0..CHANNELS {
                    for ky in 0..3usize {
                        for kx in 0..3usize {
                            let sy = y as isize + ky as isize - 1;
                            let sx = x as isize + kx as isize - 1;
                            if sy < 0 || sy >= HEIGHT as isize || sx < 0 || sx >= WIDTH as isize {
                                continue;
                            }
                            acc += image[c * HEIGHT * WIDTH + sy as usize * WIDTH + sx as usize]
                                as f64
                                * kernel[c * 9 + ky * 3 + kx] as f64;
                        }
                    }
                }
                let diff = (got[y * WIDTH + x] as f64 - acc).abs();
                assert!(diff < 1e-6, "pixel ({y},{x}): {} vs {acc}", got[y * WIDTH + x]);
            }
        }
    }

    #[test]
    fn max_pool_takes_window_maxima() {
        let mut image = vec![0f32; IMAGE_VALUES];
        image[0] = 9.0; // channel 0, pixel (0,0)
        let mut out = vec![0f32; IMAGE_VALUES];
        max_pool_3x3(&image, &mut out);
        // The 9 spreads to the 2x2 neighborhood reachable by a 3x3 window.
        assert_eq!(out[0], 9.0);
        assert_eq!(out[1], 9.0);
        assert_eq!(out[WIDTH], 9.0);
        assert_eq!(out[WIDTH + 1], 9.0);
        assert_eq!(out[2], 0.0);
    }
}
