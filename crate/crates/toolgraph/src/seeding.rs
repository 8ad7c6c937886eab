//! Stable seed derivation.
//!
//! Every random decision in the crate flows from an explicit `u64` seed
//! through these helpers, so any task, episode, or sweep cell can be
//! regenerated in isolation. Derivation hashes length-prefixed byte parts
//! with SHA-256, which is stable across platforms and builds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// 32-byte digest of length-prefixed parts.
pub fn digest_parts(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hasher.finalize().into()
}

/// RNG for a labelled stream under `seed`.
pub fn derive_rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest_parts(&[&seed.to_le_bytes(), label.as_bytes()]))
}

/// Child seed for a labelled stream under `seed`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let d = digest_parts(&[&seed.to_le_bytes(), label.as_bytes()]);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}
