//! Seed derivation for independent, reproducible random streams.
//!
//! Every stochastic component draws from a ChaCha8 stream whose seed is the
//! first 8 bytes of `SHA-256(base seed || tag || parts...)`. Streams keyed by
//! (seed, model, item) stay identical no matter how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a 64-bit seed from a base seed and a list of string parts.
pub fn derive(base: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for part in parts {
        // length prefix keeps ("ab","c") distinct from ("a","bc")
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// A ChaCha8 generator seeded from [`derive`].
pub fn stream(base: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, parts))
}
