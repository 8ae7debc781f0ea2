//! Galaxy-record dataset format, synthetic generator, and partition planner.
//!
//! On-disk layout is little-endian throughout: a 24-byte header followed by
//! fixed-size 20512-byte records (id u64, redshift f32, 5 magnitude f32s,
//! 5x32x32 image f32s). Partitions are standalone dataset files sliced from
//! the parent byte-for-byte, so concatenating their records in index order
//! reproduces the original sequence exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::store::{BlobRef, Checksum, LocalStore, StoreError};

pub const MAGIC: [u8; 4] = *b"CAI1";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_SIZE: usize = 24;
pub const CHANNELS: usize = 5;
pub const HEIGHT: usize = 32;
pub const WIDTH: usize = 32;
pub const IMAGE_VALUES: usize = CHANNELS * HEIGHT * WIDTH;
pub const MAGNITUDE_BANDS: usize = 5;
/// 8 (id) + 4 (redshift) + 20 (magnitudes) + 20480 (image).
pub const RECORD_SIZE: usize = 8 + 4 + 4 * MAGNITUDE_BANDS + 4 * IMAGE_VALUES;

pub const MIB: u64 = 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("bad magic: expected {:?}", MAGIC)]
    BadMagic,
    #[error("unsupported dataset format version {0}")]
    UnsupportedVersion(u16),
    #[error("file truncated: need {needed} bytes, have {actual}")]
    TruncatedFile { needed: usize, actual: usize },
    #[error("record geometry {channels}x{height}x{width} is not {CHANNELS}x{HEIGHT}x{WIDTH}")]
    BadGeometry {
        channels: u8,
        height: u8,
        width: u8,
    },
    #[error("range [{first}, +{count}) out of bounds for {record_count} records")]
    RangeOutOfBounds {
        first: u64,
        count: u64,
        record_count: u64,
    },
    #[error("partition size must be positive, got {0}")]
    InvalidPartitionSize(f64),
    #[error("data size must be non-negative, got {0}")]
    InvalidDataSize(f64),
    #[error("partition target {target} bytes is smaller than one record ({RECORD_SIZE} bytes)")]
    PartitionTooSmall { target: u64 },
    #[error("manifest does not match dataset: {0}")]
    ManifestMismatch(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("malformed manifest json: {0}")]
    ManifestJson(#[from] serde_json::Error),
}

/// Fixed 24-byte header at the front of every dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u16,
    pub flags: u16,
    pub record_count: u64,
    pub channels: u8,
    pub height: u8,
    pub width: u8,
}

impl DatasetHeader {
    pub fn new(record_count: u64) -> Self {
        DatasetHeader {
            version: FORMAT_VERSION,
            flags: 0,
            record_count,
            channels: CHANNELS as u8,
            height: HEIGHT as u8,
            width: WIDTH as u8,
        }
    }

    pub fn encode(&self) -> [u8; HEADER_SIZE] {
        let mut out = [0u8; HEADER_SIZE];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&self.version.to_le_bytes());
        out[6..8].copy_from_slice(&self.flags.to_le_bytes());
        out[8..16].copy_from_slice(&self.record_count.to_le_bytes());
        out[16] = self.channels;
        out[17] = self.height;
        out[18] = self.width;
        // bytes 19..24 reserved, zero
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DatasetError> {
        if bytes.len() < HEADER_SIZE {
            return Err(DatasetError::TruncatedFile {
                needed: HEADER_SIZE,
                actual: bytes.len(),
            });
        }
        if bytes[0..4] != MAGIC {
            return Err(DatasetError::BadMagic);
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(DatasetError::UnsupportedVersion(version));
        }
        let header = DatasetHeader {
            version,
            flags: u16::from_le_bytes([bytes[6], bytes[7]]),
            record_count: u64::from_le_bytes(bytes[8..16].try_into().unwrap()),
            channels: bytes[16],
            height: bytes[17],
            width: bytes[18],
        };
        if (header.channels as usize, header.height as usize, header.width as usize)
            != (CHANNELS, HEIGHT, WIDTH)
        {
            return Err(DatasetError::BadGeometry {
                channels: header.channels,
                height: header.height,
                width: header.width,
            });
        }
        Ok(header)
    }
}

/// One galaxy sample: image cube, per-band magnitudes, and redshift target.
#[derive(Debug, Clone, PartialEq)]
pub struct GalaxyRecord {
    pub object_id: u64,
    /// Channel-major, row-major 5x32x32 flux values.
    pub image: Vec<f32>,
    pub magnitudes: [f32; MAGNITUDE_BANDS],
    pub redshift: f32,
}

impl GalaxyRecord {
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        debug_assert_eq!(self.image.len(), IMAGE_VALUES);
        out.extend_from_slice(&self.object_id.to_le_bytes());
        out.extend_from_slice(&self.redshift.to_le_bytes());
        for m in &self.magnitudes {
            out.extend_from_slice(&m.to_le_bytes());
        }
        for v in &self.image {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DatasetError> {
        if bytes.len() < RECORD_SIZE {
            return Err(DatasetError::TruncatedFile {
                needed: RECORD_SIZE,
                actual: bytes.len(),
            });
        }
        let object_id = u64::from_le_bytes(bytes[0..8].try_into().unwrap());
        let redshift = f32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let mut magnitudes = [0f32; MAGNITUDE_BANDS];
        for (i, m) in magnitudes.iter_mut().enumerate() {
            let off = 12 + 4 * i;
            *m = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        }
        let mut image = Vec::with_capacity(IMAGE_VALUES);
        let img_off = 12 + 4 * MAGNITUDE_BANDS;
        for i in 0..IMAGE_VALUES {
            let off = img_off + 4 * i;
            image.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
        }
        Ok(GalaxyRecord {
            object_id,
            image,
            magnitudes,
            redshift,
        })
    }

    pub fn is_valid(&self) -> bool {
        self.image.len() == IMAGE_VALUES
            && self.image.iter().all(|v| v.is_finite())
            && self.magnitudes.iter().all(|v| v.is_finite())
            && self.redshift.is_finite()
            && self.redshift >= 0.0
    }
}

/// One planned partition: a contiguous record range and its blob identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionEntry {
    pub index: u64,
    pub key: String,
    pub first_record: u64,
    pub record_count: u64,
    /// Record payload bytes (`record_count * record_size`), header excluded.
    pub byte_length: u64,
    pub checksum: Checksum,
}

/// Plan mapping a dataset onto partition blobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub dataset_id: String,
    pub record_size: u64,
    pub target_partition_bytes: u64,
    pub entries: Vec<PartitionEntry>,
}

impl PartitionManifest {
    pub fn total_records(&self) -> u64 {
        self.entries.iter().map(|e| e.record_count).sum()
    }

    pub fn total_record_bytes(&self) -> u64 {
        self.entries.iter().map(|e| e.byte_length).sum()
    }

    /// Checks contiguity, coverage, and per-entry size bounds.
    pub fn validate(&self, record_count: u64) -> Result<(), DatasetError> {
        let mut next = 0u64;
        for (i, e) in self.entries.iter().enumerate() {
            if e.index != i as u64 {
                return Err(DatasetError::ManifestMismatch(format!(
                    "entry {i} has index {}",
                    e.index
                )));
            }
            if e.first_record != next {
                return Err(DatasetError::ManifestMismatch(format!(
                    "entry {i} starts at {} but {next} expected",
                    e.first_record
                )));
            }
            if e.byte_length != e.record_count * self.record_size {
                return Err(DatasetError::ManifestMismatch(format!(
                    "entry {i} byte_length disagrees with record_count"
                )));
            }
            if e.byte_length > self.target_partition_bytes {
                return Err(DatasetError::ManifestMismatch(format!(
                    "entry {i} exceeds the partition target"
                )));
            }
            next += e.record_count;
        }
        if next != record_count {
            return Err(DatasetError::ManifestMismatch(format!(
                "entries cover {next} records, dataset has {record_count}"
            )));
        }
        Ok(())
    }
}

/// Key of the full dataset blob for `dataset_id`.
pub fn dataset_key(dataset_id: &str) -> String {
    format!("data/{dataset_id}/full.bin")
}

/// Key of partition `index` for `dataset_id`.
pub fn partition_key(dataset_id: &str, index: u64) -> String {
    format!("data/{dataset_id}/{index:05}.bin")
}

/// Key of the partition manifest for `dataset_id`.
pub fn manifest_key(dataset_id: &str) -> String {
    format!("data/{dataset_id}/manifest.json")
}

/// Generates a deterministic synthetic dataset file of `n` records.
///
/// Images and magnitudes are uniform in [0,1) from a ChaCha stream seeded by
/// `seed`; redshifts are uniform in [0,1). Running twice with the same inputs
/// yields byte-identical files.
pub fn generate_synthetic(n: u64, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(HEADER_SIZE + n as usize * RECORD_SIZE);
    out.extend_from_slice(&DatasetHeader::new(n).encode());
    let mut image = vec![0f32; IMAGE_VALUES];
    for object_id in 0..n {
        for v in image.iter_mut() {
            *v = rng.random::<f32>();
        }
        let mut magnitudes = [0f32; MAGNITUDE_BANDS];
        for m in magnitudes.iter_mut() {
            *m = rng.random::<f32>();
        }
        let redshift: f32 = rng.random();
        let record = GalaxyRecord {
            object_id,
            image: std::mem::take(&mut image),
            magnitudes,
            redshift,
        };
        record.encode_into(&mut out);
        image = record.image;
    }
    out
}

/// Decodes the header of a dataset blob.
pub fn read_header(blob: &[u8]) -> Result<DatasetHeader, DatasetError> {
    let header = DatasetHeader::decode(blob)?;
    let needed = HEADER_SIZE + header.record_count as usize * RECORD_SIZE;
    if blob.len() < needed {
        return Err(DatasetError::TruncatedFile {
            needed,
            actual: blob.len(),
        });
    }
    Ok(header)
}

/// Decodes `count` records starting at `first` from a dataset blob.
pub fn read_records(blob: &[u8], first: u64, count: u64) -> Result<Vec<GalaxyRecord>, DatasetError> {
    let header = read_header(blob)?;
    if first.checked_add(count).is_none_or(|end| end > header.record_count) {
        return Err(DatasetError::RangeOutOfBounds {
            first,
            count,
            record_count: header.record_count,
        });
    }
    let mut records = Vec::with_capacity(count as usize);
    for i in first..first + count {
        let off = HEADER_SIZE + i as usize * RECORD_SIZE;
        records.push(GalaxyRecord::decode(&blob[off..off + RECORD_SIZE])?);
    }
    Ok(records)
}

/// Decodes every record in a dataset blob.
pub fn read_all_records(blob: &[u8]) -> Result<Vec<GalaxyRecord>, DatasetError> {
    let header = read_header(blob)?;
    read_records(blob, 0, header.record_count)
}

/// Size-based partition count: ceil(data_mb / partition_mb).
///
/// MB means MiB and GB means GiB (factor 1024) everywhere in this crate.
pub fn partition_count_by_size(data_mb: f64, partition_mb: f64) -> Result<u64, DatasetError> {
    if !(partition_mb > 0.0) {
        return Err(DatasetError::InvalidPartitionSize(partition_mb));
    }
    if !(data_mb >= 0.0) {
        return Err(DatasetError::InvalidDataSize(data_mb));
    }
    Ok((data_mb / partition_mb).ceil() as u64)
}

/// Plans record-aligned partitions of at most `target_partition_bytes` each.
///
/// Records are atomic: a record never spans partitions, so each partition
/// holds `floor(target / record_size)` records except possibly the last.
pub fn plan_partitions(
    dataset_id: &str,
    header: &DatasetHeader,
    target_partition_bytes: u64,
) -> Result<PartitionManifest, DatasetError> {
    let record_size = RECORD_SIZE as u64;
    if target_partition_bytes < record_size {
        return Err(DatasetError::PartitionTooSmall {
            target: target_partition_bytes,
        });
    }
    let per_partition = target_partition_bytes / record_size;
    let mut entries = Vec::new();
    let mut first = 0u64;
    while first < header.record_count {
        let count = per_partition.min(header.record_count - first);
        let index = entries.len() as u64;
        entries.push(PartitionEntry {
            index,
            key: partition_key(dataset_id, index),
            first_record: first,
            record_count: count,
            byte_length: count * record_size,
            checksum: Checksum::zero(),
        });
        first += count;
    }
    Ok(PartitionManifest {
        dataset_id: dataset_id.to_string(),
        record_size,
        target_partition_bytes,
        entries,
    })
}

/// Writes one standalone dataset blob per manifest entry and records each
/// blob's checksum back into the manifest.
pub fn materialize_partitions(
    dataset: &[u8],
    manifest: &mut PartitionManifest,
    store: &LocalStore,
    bucket: &str,
) -> Result<Vec<BlobRef>, DatasetError> {
    let header = read_header(dataset)?;
    manifest.validate(header.record_count)?;
    let mut blobs = Vec::with_capacity(manifest.entries.len());
    for entry in &mut manifest.entries {
        let start = HEADER_SIZE + entry.first_record as usize * RECORD_SIZE;
        let end = start + entry.byte_length as usize;
        let mut blob = Vec::with_capacity(HEADER_SIZE + entry.byte_length as usize);
        blob.extend_from_slice(&DatasetHeader::new(entry.record_count).encode());
        blob.extend_from_slice(&dataset[start..end]);
        let blob_ref = store.put(bucket, &entry.key, &blob)?;
        entry.checksum = blob_ref.checksum;
        blobs.push(blob_ref);
    }
    Ok(blobs)
}

/// Persists the manifest as JSON at `data/<dataset_id>/manifest.json`.
pub fn save_manifest(
    manifest: &PartitionManifest,
    store: &LocalStore,
    bucket: &str,
) -> Result<BlobRef, DatasetError> {
    let json = serde_json::to_vec_pretty(manifest)?;
    Ok(store.put(bucket, &manifest_key(&manifest.dataset_id), &json)?)
}

/// Loads a manifest previously written by [`save_manifest`].
pub fn load_manifest(
    store: &LocalStore,
    bucket: &str,
    dataset_id: &str,
) -> Result<PartitionManifest, DatasetError> {
    let bytes = store.get(bucket, &manifest_key(dataset_id))?;
    Ok(serde_json::from_slice(&bytes)?)
}
