//! Deterministic seed derivation.
//!
//! One global seed fans out into independent per-stage and per-item streams
//! by hashing the root seed together with a textual tag and an optional
//! counter. Stages can therefore rerun in isolation and still draw the same
//! random numbers they would inside a full pipeline run.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from `root` and a tag.
pub fn derive(root: u64, tag: &str) -> u64 {
    derive_indexed(root, tag, 0)
}

/// Derives a child seed from `root`, a tag, and a counter.
pub fn derive_indexed(root: u64, tag: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(tag.as_bytes());
    hasher.update([0x1f]);
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// A seeded RNG for the given stream. ChaCha8 keeps the stream identical
/// across platforms and thread counts.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
