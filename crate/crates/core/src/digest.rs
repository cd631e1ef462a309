//! SHA-256 helpers. All digests in the system are lowercase hex of a
//! 256-bit hash.

use sha2::{Digest, Sha256};

/// Hex digest of the empty byte string.
pub const EMPTY_SHA256: &str = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";

/// 64 zero characters; the genesis back-pointer of the history chain.
pub const ZERO_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Digest of a sequence of length-prefixed fields. Each field is fed as
/// an 8-byte little-endian length followed by the raw bytes, which makes
/// the encoding unambiguous regardless of field contents.
pub fn sha256_fields<'a, I: IntoIterator<Item = &'a [u8]>>(fields: I) -> String {
    let mut hasher = Sha256::new();
    for field in fields {
        hasher.update((field.len() as u64).to_le_bytes());
        hasher.update(field);
    }
    hex::encode(hasher.finalize())
}
