//! Small dense kernels with deterministic reductions.
//!
//! Dot products accumulate into eight f64 lanes over fixed chunks and fold
//! them in a fixed tree, then a sequential tail. The reduction shape never
//! depends on batching or call site, which keeps every downstream result
//! bit-stable while leaving the lanes free to vectorize.

/// Dot product of two equal-length f32 slices, accumulated in f64.
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 8];
    let mut chunks_a = a.chunks_exact(8);
    let mut chunks_b = b.chunks_exact(8);
    for (ca, cb) in chunks_a.by_ref().zip(chunks_b.by_ref()) {
        for l in 0..8 {
            lanes[l] += ca[l] as f64 * cb[l] as f64;
        }
    }
    let mut tail = 0.0f64;
    for (x, y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        tail += *x as f64 * *y as f64;
    }
    let p0 = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    let p1 = (lanes[4] + lanes[5]) + (lanes[6] + lanes[7]);
    (p0 + p1) + tail
}

/// Dense layer: `out[o] = weight_row(o) . input + bias[o]`.
///
/// `weight` is row-major `[out_dim, in_dim]`.
pub(crate) fn linear(
    input: &[f32],
    weight: &[f32],
    bias: Option<&[f32]>,
    in_dim: usize,
    out_dim: usize,
) -> Vec<f32> {
    debug_assert_eq!(input.len(), in_dim);
    debug_assert_eq!(weight.len(), in_dim * out_dim);
    let mut out = Vec::with_capacity(out_dim);
    for o in 0..out_dim {
        let row = &weight[o * in_dim..(o + 1) * in_dim];
        let mut v = dot(input, row);
        if let Some(b) = bias {
            v += b[o] as f64;
        }
        out.push(v as f32);
    }
    out
}

pub(crate) fn relu_in_place(x: &mut [f32]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// GELU, tanh approximation.
pub(crate) fn gelu(x: f32) -> f32 {
    const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
    let x = x as f64;
    (0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044715 * x * x * x)).tanh())) as f32
}

/// Per-row layer norm with learned scale and shift, eps 1e-6.
pub(crate) fn layer_norm(row: &[f32], gamma: &[f32], beta: &[f32]) -> Vec<f32> {
    const EPS: f64 = 1e-6;
    let n = row.len();
    let mut sum = 0.0f64;
    for v in row {
        sum += *v as f64;
    }
    let mean = sum / n as f64;
    let mut var = 0.0f64;
    for v in row {
        let d = *v as f64 - mean;
        var += d * d;
    }
    var /= n as f64;
    let inv = 1.0 / (var + EPS).sqrt();
    row.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(v, (g, b))| (((*v as f64 - mean) * inv) * *g as f64 + *b as f64) as f32)
        .collect()
}

/// In-place softmax over one row, max-shifted, sums in f64.
pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let mut max = f32::NEG_INFINITY;
    for v in row.iter() {
        if *v > max {
            max = *v;
        }
    }
    let mut sum = 0.0f64;
    for v in row.iter_mut() {
        let e = ((*v - max) as f64).exp();
        sum += e;
        *v = e as f32;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v = (*v as f64 * inv) as f32;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_sequential_oracle() {
        let a: Vec<f32> = (0..100).map(|i| (i as f32 * 0.31).sin()).collect();
        let b: Vec<f32> = (0..100).map(|i| (i as f32 * 0.17).cos()).collect();
        let oracle: f64 = a.iter().zip(&b).map(|(x, y)| *x as f64 * *y as f64).sum();
        assert!((dot(&a, &b) - oracle).abs() < 1e-12 * oracle.abs().max(1.0));
    }

    #[test]
    fn linear_with_zero_weights_is_bias() {
        let out = linear(&[1.0, 2.0], &[0.0; 6], Some(&[0.5, -0.5, 0.0]), 2, 3);
        assert_eq!(out, vec![0.5, -0.5, 0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut row = vec![0.1f32, 2.0, -3.0, 0.7];
        softmax_in_place(&mut row);
        let s: f64 = row.iter().map(|v| *v as f64).sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn layer_norm_centers_and_scales() {
        let row = vec![1.0f32, 2.0, 3.0, 4.0];
        let gamma = vec![1.0f32; 4];
        let beta = vec![0.0f32; 4];
        let out = layer_norm(&row, &gamma, &beta);
        let mean: f64 = out.iter().map(|v| *v as f64).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-6);
    }

    #[test]
    fn gelu_fixed_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841192).abs() < 1e-5);
        assert!(gelu(-10.0).abs() < 1e-5);
    }
}
