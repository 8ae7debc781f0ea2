//! Named-tensor weight sets, seeded synthesis, and the binary archive format.
//!
//! Archive layout: magic `CAIW`, version u16, reserved u16, u32 length of a
//! JSON index listing (name, shape, element offset, element count), then one
//! payload region of raw little-endian f32 values. Loading an archive saved
//! from the same set is bit-exact.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError};
use crate::store::{LocalStore, StoreError};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"CAIW";
pub const WEIGHTS_VERSION: u16 = 1;

/// Blob key of the weight archive under a model prefix.
pub fn weights_key(model_prefix: &str) -> String {
    format!("{model_prefix}/weights.bin")
}

/// Blob key of the model config stored alongside the archive.
pub fn config_key(model_prefix: &str) -> String {
    format!("{model_prefix}/config.json")
}

/// A shaped f32 tensor. `data` is row-major in `shape` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Immutable collection of named tensors; shareable across workers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightSet {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightSet {
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, ModelError> {
        self.tensors
            .get(name)
            .ok_or_else(|| ModelError::MissingTensor(name.to_string()))
    }

    /// Fetches a tensor and checks its exact shape.
    pub fn shaped(&self, name: &str, shape: &[usize]) -> Result<&Tensor, ModelError> {
        let t = self.get(name)?;
        if t.shape != shape {
            return Err(ModelError::ShapeMismatch {
                what: name.to_string(),
                expected: format!("{shape:?}"),
                actual: format!("{:?}", t.shape),
            });
        }
        Ok(t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Approximate in-memory footprint of the tensor payloads, in bytes.
    pub fn byte_size(&self) -> u64 {
        4 * self.parameter_count() as u64
    }

    pub fn validate_finite(&self) -> Result<(), ModelError> {
        for (name, t) in &self.tensors {
            if !t.data.iter().all(|v| v.is_finite()) {
                return Err(ModelError::NonFiniteWeights(name.clone()));
            }
        }
        Ok(())
    }

    /// Checks that exactly the tensors required by `config` are present with
    /// the right shapes.
    pub fn validate_for(&self, config: &ModelConfig) -> Result<(), ModelError> {
        for (name, shape, _) in tensor_specs(config) {
            let t = self.get(&name)?;
            if t.shape != shape {
                return Err(ModelError::ShapeMismatchOnLoad {
                    name,
                    expected: shape,
                    actual: t.shape.clone(),
                });
            }
        }
        Ok(())
    }
}

/// How a tensor is initialized by [`synth_weights`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in [-sqrt(3/fan_in), sqrt(3/fan_in)).
    FanIn(usize),
    /// Uniform in [0.75, 1.25); layer-norm scales.
    NormScale,
    /// Uniform in [-0.01, 0.01); biases and shifts.
    Small,
}

/// The full tensor inventory for a config: (name, shape, init).
///
/// This is the single source of truth for archive contents; synthesis and
/// load validation both iterate it in order.
pub fn tensor_specs(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = config.embed_dim;
    let p = config.patch_dim();
    let n = config.patch_count();
    let c = config.encoder_out;
    let q = config.inception_out;
    let t = config.magnitude_out;
    let bh = config.branch_hidden;
    let bo = config.branch_out;
    let fh = config.fusion_hidden;
    let mlp = config.mlp_hidden();
    let path = q / 4;
    let chans = config.patch_shape.0;

    let mut specs = vec![
        ("patch_embed.weight".into(), vec![d, p], Init::FanIn(p)),
        ("patch_embed.bias".into(), vec![d], Init::Small),
        ("positional".into(), vec![n, d], Init::Small),
    ];
    for b in 0..config.encoder_blocks {
        let pre = format!("encoder.block{b}");
        specs.push((format!("{pre}.ln1.gamma"), vec![d], Init::NormScale));
        specs.push((format!("{pre}.ln1.beta"), vec![d], Init::Small));
        for proj in ["wq", "wk", "wv", "wo"] {
            specs.push((format!("{pre}.attn.{proj}"), vec![d, d], Init::FanIn(d)));
        }
        for bias in ["bq", "bk", "bv", "bo"] {
            specs.push((format!("{pre}.attn.{bias}"), vec![d], Init::Small));
        }
        specs.push((format!("{pre}.ln2.gamma"), vec![d], Init::NormScale));
        specs.push((format!("{pre}.ln2.beta"), vec![d], Init::Small));
        specs.push((format!("{pre}.mlp.w1"), vec![mlp, d], Init::FanIn(d)));
        specs.push((format!("{pre}.mlp.b1"), vec![mlp], Init::Small));
        specs.push((format!("{pre}.mlp.w2"), vec![d, mlp], Init::FanIn(mlp)));
        specs.push((format!("{pre}.mlp.b2"), vec![d], Init::Small));
    }
    specs.push(("encoder.proj".into(), vec![c, d], Init::FanIn(d)));
    for (name, k) in [("p1", 1), ("p3", 3), ("p5", 5), ("pool", 1)] {
        specs.push((
            format!("inception.{name}.weight"),
            vec![path, chans, k, k],
            Init::FanIn(chans * k * k),
        ));
        specs.push((format!("inception.{name}.bias"), vec![path], Init::Small));
    }
    specs.push(("magnitude.fc1.weight".into(), vec![32, 5], Init::FanIn(5)));
    specs.push(("magnitude.fc1.bias".into(), vec![32], Init::Small));
    specs.push(("magnitude.fc2.weight".into(), vec![t, 32], Init::FanIn(32)));
    specs.push(("magnitude.fc2.bias".into(), vec![t], Init::Small));
    for (branch, input) in [("branch_e", c), ("branch_w", q)] {
        specs.push((
            format!("{branch}.fc1.weight"),
            vec![bh, input],
            Init::FanIn(input),
        ));
        specs.push((format!("{branch}.fc1.bias"), vec![bh], Init::Small));
        specs.push((
            format!("{branch}.fc2.weight"),
            vec![bo, bh],
            Init::FanIn(bh),
        ));
        specs.push((format!("{branch}.fc2.bias"), vec![bo], Init::Small));
    }
    let fin = config.fusion_in();
    specs.push(("fusion.fc1.weight".into(), vec![fh, fin], Init::FanIn(fin)));
    specs.push(("fusion.fc1.bias".into(), vec![fh], Init::Small));
    specs.push(("fusion.fc2.weight".into(), vec![1, fh], Init::FanIn(fh)));
    specs.push(("fusion.fc2.bias".into(), vec![1], Init::Small));
    specs
}

/// Draws a deterministic weight set for `config` from `seed`.
pub fn synth_weights(config: &ModelConfig, seed: u64) -> Result<WeightSet, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = WeightSet::default();
    for (name, shape, init) in tensor_specs(config) {
        let len: usize = shape.iter().product();
        let data: Vec<f32> = match init {
            Init::FanIn(fan_in) => {
                let bound = (3.0 / fan_in as f32).sqrt();
                (0..len)
                    .map(|_| (rng.random::<f32>() * 2.0 - 1.0) * bound)
                    .collect()
            }
            Init::NormScale => (0..len).map(|_| 0.75 + 0.5 * rng.random::<f32>()).collect(),
            Init::Small => (0..len)
                .map(|_| (rng.random::<f32>() * 2.0 - 1.0) * 0.01)
                .collect(),
        };
        set.insert(name, Tensor::new(shape, data));
    }
    Ok(set)
}

/// A weight set with every tensor zeroed; handy in tests.
pub fn zero_weights(config: &ModelConfig) -> WeightSet {
    let mut set = WeightSet::default();
    for (name, shape, _) in tensor_specs(config) {
        set.insert(name, Tensor::zeros(shape));
    }
    set
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
    /// Element offset into the payload region.
    offset: u64,
    /// Element count.
    len: u64,
}

/// Serializes a weight set to the archive format.
pub fn save_weights(set: &WeightSet) -> Vec<u8> {
    let mut index = Vec::new();
    let mut offset = 0u64;
    for (name, tensor) in &set.tensors {
        index.push(IndexEntry {
            name: name.clone(),
            shape: tensor.shape.clone(),
            offset,
            len: tensor.len() as u64,
        });
        offset += tensor.len() as u64;
    }
    let index_json = serde_json::to_vec(&index).expect("index serialization is infallible");
    let mut out = Vec::with_capacity(12 + index_json.len() + offset as usize * 4);
    out.extend_from_slice(&WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(index_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&index_json);
    for tensor in set.tensors.values() {
        for v in &tensor.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses an archive produced by [`save_weights`].
pub fn load_weights(bytes: &[u8]) -> Result<WeightSet, ModelError> {
    let corrupt = |msg: &str| ModelError::CorruptArchive(msg.to_string());
    if bytes.len() < 12 {
        return Err(corrupt("shorter than the fixed header"));
    }
    if bytes[0..4] != WEIGHTS_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != WEIGHTS_VERSION {
        return Err(corrupt("unsupported archive version"));
    }
    let index_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload_start = 12 + index_len;
    if bytes.len() < payload_start {
        return Err(corrupt("truncated index"));
    }
    let index: Vec<IndexEntry> = serde_json::from_slice(&bytes[12..payload_start])
        .map_err(|e| ModelError::CorruptArchive(format!("malformed index: {e}")))?;
    let payload = &bytes[payload_start..];
    let mut set = WeightSet::default();
    for entry in index {
        let len: usize = entry.len as usize;
        if entry.shape.iter().product::<usize>() != len {
            return Err(ModelError::ShapeMismatchOnLoad {
                name: entry.name,
                expected: entry.shape,
                actual: vec![len],
            });
        }
        let start = entry.offset as usize * 4;
        let end = start + len * 4;
        if end > payload.len() {
            return Err(corrupt("truncated tensor payload"));
        }
        let data: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        set.insert(entry.name, Tensor::new(entry.shape, data));
    }
    Ok(set)
}

/// Stores the archive at `<prefix>/weights.bin` and the config JSON
/// alongside it at `<prefix>/config.json`.
pub fn save_model(
    store: &LocalStore,
    bucket: &str,
    model_prefix: &str,
    set: &WeightSet,
    config: &ModelConfig,
) -> Result<(), StoreError> {
    store.put(bucket, &weights_key(model_prefix), &save_weights(set))?;
    let config_json =
        serde_json::to_vec_pretty(config).expect("config serialization is infallible");
    store.put(bucket, &config_key(model_prefix), &config_json)?;
    Ok(())
}

/// Loads and validates the archive + config pair under a model prefix.
pub fn load_model(
    store: &LocalStore,
    bucket: &str,
    model_prefix: &str,
) -> Result<(WeightSet, ModelConfig), ModelError> {
    let archive = store
        .get(bucket, &weights_key(model_prefix))
        .map_err(|e| ModelError::CorruptArchive(e.to_string()))?;
    let config_bytes = store
        .get(bucket, &config_key(model_prefix))
        .map_err(|e| ModelError::CorruptArchive(e.to_string()))?;
    let config: ModelConfig = serde_json::from_slice(&config_bytes)
        .map_err(|e| ModelError::CorruptArchive(format!("malformed config json: {e}")))?;
    let set = load_weights(&archive)?;
    set.validate_for(&config)?;
    set.validate_finite()?;
    Ok((set, config))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthesis_is_deterministic() {
        let cfg = ModelConfig::default();
        let a = synth_weights(&cfg, 42).unwrap();
        let b = synth_weights(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = synth_weights(&cfg, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthesized_weights_match_their_specs() {
        let cfg = ModelConfig::default();
        let set = synth_weights(&cfg, 1).unwrap();
        set.validate_for(&cfg).unwrap();
        set.validate_finite().unwrap();
    }

    #[test]
    fn archive_round_trip_is_bit_exact() {
        let cfg = ModelConfig::default();
        let set = synth_weights(&cfg, 5).unwrap();
        let archive = save_weights(&set);
        let loaded = load_weights(&archive).unwrap();
        assert_eq!(loaded, set);
        // Bit-exact, not just approximately equal.
        for name in set.names() {
            let a = set.get(name).unwrap();
            let b = loaded.get(name).unwrap();
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn truncated_archive_is_rejected() {
        let cfg = ModelConfig::default();
        let archive = save_weights(&synth_weights(&cfg, 5).unwrap());
        let cut = &archive[..archive.len() - 8];
        assert!(matches!(
            load_weights(cut),
            Err(ModelError::CorruptArchive(_))
        ));
        assert!(matches!(
            load_weights(&archive[..6]),
            Err(ModelError::CorruptArchive(_))
        ));
        let mut bad_magic = archive.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            load_weights(&bad_magic),
            Err(ModelError::CorruptArchive(_))
        ));
    }

    #[test]
    fn non_finite_weights_are_detected() {
        let cfg = ModelConfig::default();
        let mut set = synth_weights(&cfg, 5).unwrap();
        set.insert("positional", {
            let mut t = Tensor::zeros(vec![cfg.patch_count(), cfg.embed_dim]);
            t.data[0] = f32::NAN;
            t
        });
        assert!(matches!(
            set.validate_finite(),
            Err(ModelError::NonFiniteWeights(_))
        ));
    }

    #[test]
    fn store_round_trip_preserves_model() {
        let dir = tempfile::tempdir().unwrap();
        let store = LocalStore::open(dir.path()).unwrap();
        let cfg = ModelConfig::default();
        let set = synth_weights(&cfg, 9).unwrap();
        save_model(&store, "cai", "model/default", &set, &cfg).unwrap();
        let (loaded, loaded_cfg) = load_model(&store, "cai", "model/default").unwrap();
        assert_eq!(loaded, set);
        assert_eq!(loaded_cfg, cfg);
    }
}
