//! Content digests and deterministic seed derivation.
//!
//! Every artifact the pipeline persists is identified by the SHA-256 of its
//! bytes; all randomness is derived from a single master seed so that runs
//! are reproducible item-for-item.

use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of raw bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Digest of an f32 slice, hashing the little-endian byte image.
pub fn sha256_f32_hex(values: &[f32]) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Combine a set of per-item digests into one order-independent digest.
///
/// Items are sorted before hashing so two datasets with the same content but
/// different ingest order compare equal.
pub fn combine_digests<'a>(items: impl Iterator<Item = &'a str>) -> String {
    let mut sorted: Vec<&str> = items.collect();
    sorted.sort_unstable();
    let mut hasher = Sha256::new();
    for d in sorted {
        hasher.update(d.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// Derive a child seed from the master seed and a textual label.
///
/// Labels name the consumer ("trial-3/attack", "gan", ...). Distinct labels
/// give pairwise-distinct seeds with overwhelming probability.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    let out = hasher.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output >= 8 bytes"))
}
