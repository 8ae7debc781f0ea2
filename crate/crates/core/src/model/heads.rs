//! Magnitude block and the fusion head that combines all three branches
//! into the redshift prediction.

use super::linalg::{linear, relu_in_place};
use super::{ModelConfig, ModelError, WeightSet};
use crate::dataset::MAGNITUDE_BANDS;

/// Intermediate features of one sample on the inference path.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    /// Encoder latent, `encoder_out` wide.
    pub l_e: Vec<f32>,
    /// Inception features, `inception_out` wide.
    pub l_w: Vec<f32>,
    /// Magnitude features, `magnitude_out` wide.
    pub l_t: Vec<f32>,
    /// Processed encoder branch, `branch_out` wide.
    pub l_ec: Vec<f32>,
    /// Processed inception branch, `branch_out` wide.
    pub l_wc: Vec<f32>,
}

/// Magnitude block: FC(5 -> 32) -> ReLU -> FC(32 -> magnitude_out).
pub fn magnitude_features(
    magnitudes: &[f32],
    weights: &WeightSet,
    config: &ModelConfig,
) -> Result<Vec<f32>, ModelError> {
    if magnitudes.len() != MAGNITUDE_BANDS {
        return Err(ModelError::ShapeMismatch {
            what: "magnitudes".to_string(),
            expected: format!("{MAGNITUDE_BANDS} values"),
            actual: format!("{} values", magnitudes.len()),
        });
    }
    let t = config.magnitude_out;
    let w1 = weights.shaped("magnitude.fc1.weight", &[32, MAGNITUDE_BANDS])?;
    let b1 = weights.shaped("magnitude.fc1.bias", &[32])?;
    let w2 = weights.shaped("magnitude.fc2.weight", &[t, 32])?;
    let b2 = weights.shaped("magnitude.fc2.bias", &[t])?;
    let mut hidden = linear(magnitudes, &w1.data, Some(&b1.data), MAGNITUDE_BANDS, 32);
    relu_in_place(&mut hidden);
    Ok(linear(&hidden, &w2.data, Some(&b2.data), 32, t))
}

fn branch(
    input: &[f32],
    weights: &WeightSet,
    prefix: &str,
    in_dim: usize,
    config: &ModelConfig,
) -> Result<Vec<f32>, ModelError> {
    if input.len() != in_dim {
        return Err(ModelError::ShapeMismatch {
            what: format!("{prefix} input"),
            expected: format!("{in_dim} values"),
            actual: format!("{} values", input.len()),
        });
    }
    let bh = config.branch_hidden;
    let bo = config.branch_out;
    let w1 = weights.shaped(&format!("{prefix}.fc1.weight"), &[bh, in_dim])?;
    let b1 = weights.shaped(&format!("{prefix}.fc1.bias"), &[bh])?;
    let w2 = weights.shaped(&format!("{prefix}.fc2.weight"), &[bo, bh])?;
    let b2 = weights.shaped(&format!("{prefix}.fc2.bias"), &[bo])?;
    let mut hidden = linear(input, &w1.data, Some(&b1.data), in_dim, bh);
    relu_in_place(&mut hidden);
    Ok(linear(&hidden, &w2.data, Some(&b2.data), bh, bo))
}

/// Fusion head over the three branch features.
///
/// `L_EC = FC(ReLU(FC(L_E)))`, `L_WC = FC(ReLU(FC(L_W)))`, then the
/// prediction is `FC(ReLU(FC(concat(L_T, L_EC, L_WC))))` with the concat in
/// exactly that order. Returns the prediction and the bundle of
/// intermediates.
pub fn fusion_head(
    l_e: &[f32],
    l_w: &[f32],
    l_t: &[f32],
    weights: &WeightSet,
    config: &ModelConfig,
) -> Result<(f32, FeatureBundle), ModelError> {
    if l_t.len() != config.magnitude_out {
        return Err(ModelError::ShapeMismatch {
            what: "L_T".to_string(),
            expected: format!("{} values", config.magnitude_out),
            actual: format!("{} values", l_t.len()),
        });
    }
    let l_ec = branch(l_e, weights, "branch_e", config.encoder_out, config)?;
    let l_wc = branch(l_w, weights, "branch_w", config.inception_out, config)?;
    let fin = config.fusion_in();
    let mut concat = Vec::with_capacity(fin);
    concat.extend_from_slice(l_t);
    concat.extend_from_slice(&l_ec);
    concat.extend_from_slice(&l_wc);
    let fh = config.fusion_hidden;
    let w1 = weights.shaped("fusion.fc1.weight", &[fh, fin])?;
    let b1 = weights.shaped("fusion.fc1.bias", &[fh])?;
    let w2 = weights.shaped("fusion.fc2.weight", &[1, fh])?;
    let b2 = weights.shaped("fusion.fc2.bias", &[1])?;
    let mut hidden = linear(&concat, &w1.data, Some(&b1.data), fin, fh);
    relu_in_place(&mut hidden);
    let out = linear(&hidden, &w2.data, Some(&b2.data), fh, 1);
    let bundle = FeatureBundle {
        l_e: l_e.to_vec(),
        l_w: l_w.to_vec(),
        l_t: l_t.to_vec(),
        l_ec,
        l_wc,
    };
    Ok((out[0], bundle))
}
