//! SHA-256 helpers used for provenance chaining between artifacts.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the compact JSON encoding of `value`.
///
/// Every map in this crate is a `BTreeMap`, so the encoding is canonical.
pub fn json_digest<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("in-memory JSON encoding cannot fail");
    sha256_hex(&bytes)
}

/// Derive a 32-byte RNG seed from a root seed and a list of labels.
///
/// Labels are length-prefixed so `("ab", "c")` and `("a", "bc")` differ.
pub fn derive_seed(root: u64, labels: &[&str]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    for label in labels {
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
    }
    hasher.finalize().into()
}
