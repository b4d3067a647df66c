//! Stable seed derivation.
//!
//! Seeds are derived by hashing a domain tag and the parent seed with
//! SHA-256, so derived streams never depend on iteration order, thread
//! scheduling or the Rust version.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

/// Derive a 64-bit seed from a parent seed and a sequence of labelled parts.
pub fn derive_seed(parent: u64, parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Seed for a per-client data stream.
pub fn client_seed(parent: u64, client_id: usize) -> u64 {
    derive_seed(parent, &[b"client", &(client_id as u64).to_le_bytes()])
}

/// Seed for a named sub-stream (topology, abnormal assignment, ...).
pub fn stream_seed(parent: u64, name: &str) -> u64 {
    derive_seed(parent, &[b"stream", name.as_bytes()])
}

pub fn rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
