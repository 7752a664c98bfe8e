//! Content hashing shared by the store, providers, and artifact ids.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// First 8 bytes of the SHA-256 digest as a little-endian integer.
pub fn sha256_u64(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&d[..8]);
    u64::from_le_bytes(buf)
}

/// Stable seed derived from a list of string parts and a base seed.
pub fn derive_seed(parts: &[&str], base: u64) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0x1f]);
    }
    h.update(base.to_le_bytes());
    let d = h.finalize();
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&d[..8]);
    u64::from_le_bytes(buf)
}
