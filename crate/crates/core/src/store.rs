//! Content-integrity blob store with a local-directory backend.
//!
//! Buckets map to directories under a root; every blob carries a SHA-256
//! checksum kept in a sidecar file so reads can verify integrity without
//! trusting the payload. Writes go through a temp file plus rename, so a
//! reader never observes a partial blob.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable selecting the local backend root directory.
pub const STORE_ROOT_ENV: &str = "CAI_STORE_ROOT";

const BLOBS_DIR: &str = "blobs";
const SUMS_DIR: &str = "sums";
const SUM_SUFFIX: &str = ".sha256";

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// SHA-256 digest of a blob's bytes, serialized as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Checksum(pub [u8; 32]);

impl Checksum {
    pub fn of(data: &[u8]) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(data);
        Checksum(hasher.finalize().into())
    }

    pub fn zero() -> Self {
        Checksum([0u8; 32])
    }

    pub fn to_hex(self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s.trim()).ok()?;
        let arr: [u8; 32] = bytes.try_into().ok()?;
        Some(Checksum(arr))
    }
}

impl fmt::Debug for Checksum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Checksum({})", self.to_hex())
    }
}

impl fmt::Display for Checksum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Checksum {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Checksum {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Checksum::from_hex(&s).ok_or_else(|| serde::de::Error::custom("invalid sha-256 hex"))
    }
}

/// Handle to a stored blob: where it lives plus its length and digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRef {
    pub bucket: String,
    pub key: String,
    pub length: u64,
    pub checksum: Checksum,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("invalid key {key:?}: {reason}")]
    InvalidKey { key: String, reason: &'static str },
    #[error("blob not found: {bucket}/{key}")]
    NotFound { bucket: String, key: String },
    #[error("checksum mismatch for {bucket}/{key}: expected {expected}, found {actual}")]
    ChecksumMismatch {
        bucket: String,
        key: String,
        expected: Checksum,
        actual: Checksum,
    },
    #[error("corrupt store entry {bucket}/{key}: {detail}")]
    Corrupt {
        bucket: String,
        key: String,
        detail: String,
    },
    #[error("storage write failed: {0}")]
    StorageFull(#[source] io::Error),
    #[error("store i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("{STORE_ROOT_ENV} is not set")]
    RootNotConfigured,
}

/// Local-directory blob store.
///
/// Layout: `<root>/<bucket>/blobs/<key>` holds payloads and
/// `<root>/<bucket>/sums/<key>.sha256` holds the hex digest. Methods take
/// `&self` and are safe to call from multiple threads; concurrent writes to
/// the same key resolve last-write-wins.
#[derive(Debug, Clone)]
pub struct LocalStore {
    root: PathBuf,
}

impl LocalStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(StoreError::StorageFull)?;
        Ok(LocalStore { root })
    }

    /// Opens the store selected by `CAI_STORE_ROOT`.
    pub fn from_env() -> Result<Self, StoreError> {
        match std::env::var(STORE_ROOT_ENV) {
            Ok(root) if !root.is_empty() => Self::open(root),
            _ => Err(StoreError::RootNotConfigured),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Stores `data` under `bucket/key`, overwriting any previous blob.
    pub fn put(&self, bucket: &str, key: &str, data: &[u8]) -> Result<BlobRef, StoreError> {
        validate_bucket(bucket)?;
        validate_key(key)?;
        let checksum = Checksum::of(data);
        let blob_path = self.blob_path(bucket, key);
        let sum_path = self.sum_path(bucket, key);
        write_atomic(&blob_path, data)?;
        write_atomic(&sum_path, checksum.to_hex().as_bytes())?;
        Ok(BlobRef {
            bucket: bucket.to_string(),
            key: key.to_string(),
            length: data.len() as u64,
            checksum,
        })
    }

    /// Reads the blob at `bucket/key`, verifying its checksum.
    pub fn get(&self, bucket: &str, key: &str) -> Result<Vec<u8>, StoreError> {
        validate_bucket(bucket)?;
        validate_key(key)?;
        // A concurrent overwrite can briefly pair a new payload with the old
        // sidecar; one retry resolves to a consistent snapshot.
        match self.read_verified(bucket, key) {
            Err(StoreError::ChecksumMismatch { .. }) => self.read_verified(bucket, key),
            other => other,
        }
    }

    /// Returns the stored length and checksum without reading the payload.
    pub fn head(&self, bucket: &str, key: &str) -> Result<BlobRef, StoreError> {
        validate_bucket(bucket)?;
        validate_key(key)?;
        let meta = fs::metadata(self.blob_path(bucket, key))
            .map_err(|e| self.map_missing(bucket, key, e))?;
        let checksum = self.read_sum(bucket, key)?;
        Ok(BlobRef {
            bucket: bucket.to_string(),
            key: key.to_string(),
            length: meta.len(),
            checksum,
        })
    }

    /// Lists keys in `bucket` starting with `prefix`, lexicographically sorted.
    pub fn list(&self, bucket: &str, prefix: &str) -> Result<Vec<String>, StoreError> {
        validate_bucket(bucket)?;
        let base = self.root.join(bucket).join(BLOBS_DIR);
        let mut keys = Vec::new();
        if base.is_dir() {
            collect_keys(&base, String::new(), &mut keys)?;
        }
        keys.retain(|k| k.starts_with(prefix));
        keys.sort();
        Ok(keys)
    }

    fn read_verified(&self, bucket: &str, key: &str) -> Result<Vec<u8>, StoreError> {
        let data =
            fs::read(self.blob_path(bucket, key)).map_err(|e| self.map_missing(bucket, key, e))?;
        let expected = self.read_sum(bucket, key)?;
        let actual = Checksum::of(&data);
        if actual != expected {
            return Err(StoreError::ChecksumMismatch {
                bucket: bucket.to_string(),
                key: key.to_string(),
                expected,
                actual,
            });
        }
        Ok(data)
    }

    fn read_sum(&self, bucket: &str, key: &str) -> Result<Checksum, StoreError> {
        let raw =
            fs::read_to_string(self.sum_path(bucket, key)).map_err(|e| match e.kind() {
                io::ErrorKind::NotFound => StoreError::Corrupt {
                    bucket: bucket.to_string(),
                    key: key.to_string(),
                    detail: "missing checksum sidecar".to_string(),
                },
                _ => StoreError::Io(e),
            })?;
        Checksum::from_hex(&raw).ok_or_else(|| StoreError::Corrupt {
            bucket: bucket.to_string(),
            key: key.to_string(),
            detail: "malformed checksum sidecar".to_string(),
        })
    }

    fn map_missing(&self, bucket: &str, key: &str, e: io::Error) -> StoreError {
        if e.kind() == io::ErrorKind::NotFound {
            StoreError::NotFound {
                bucket: bucket.to_string(),
                key: key.to_string(),
            }
        } else {
            StoreError::Io(e)
        }
    }

    fn blob_path(&self, bucket: &str, key: &str) -> PathBuf {
        self.root.join(bucket).join(BLOBS_DIR).join(key)
    }

    fn sum_path(&self, bucket: &str, key: &str) -> PathBuf {
        self.root
            .join(bucket)
            .join(SUMS_DIR)
            .join(format!("{key}{SUM_SUFFIX}"))
    }
}

fn validate_bucket(bucket: &str) -> Result<(), StoreError> {
    let bad = |reason| StoreError::InvalidKey {
        key: bucket.to_string(),
        reason,
    };
    if bucket.is_empty() {
        return Err(bad("empty bucket name"));
    }
    if bucket.contains(['/', '\\', '\0']) || bucket == ".." || bucket == "." {
        return Err(bad("bucket must be a single path component"));
    }
    Ok(())
}

fn validate_key(key: &str) -> Result<(), StoreError> {
    let bad = |reason| StoreError::InvalidKey {
        key: key.to_string(),
        reason,
    };
    if key.is_empty() {
        return Err(bad("empty key"));
    }
    if key.starts_with('/') {
        return Err(bad("absolute keys are not allowed"));
    }
    if key.contains('\\') || key.contains('\0') {
        return Err(bad("key contains forbidden characters"));
    }
    if key.split('/').any(|part| part.is_empty() || part == "." || part == "..") {
        return Err(bad("key escapes the bucket root"));
    }
    Ok(())
}

/// Writes via a unique temp file in the target directory, then renames.
fn write_atomic(path: &Path, data: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().expect("blob paths always have a parent");
    fs::create_dir_all(dir).map_err(StoreError::StorageFull)?;
    let tmp_name = format!(
        ".{}.{}.{}.tmp",
        path.file_name().unwrap_or_default().to_string_lossy(),
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    );
    let tmp = dir.join(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(data)?;
        f.sync_data()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(StoreError::StorageFull)
}

fn collect_keys(dir: &Path, rel: String, out: &mut Vec<String>) -> Result<(), StoreError> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        // Skip in-flight temp files from concurrent writers.
        if name.starts_with('.') && name.ends_with(".tmp") {
            continue;
        }
        let child = if rel.is_empty() {
            name
        } else {
            format!("{rel}/{name}")
        };
        let ty = entry.file_type()?;
        if ty.is_dir() {
            collect_keys(&entry.path(), child, out)?;
        } else {
            out.push(child);
        }
    }
    Ok(())
}
