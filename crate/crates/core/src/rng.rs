//! Seeded random streams.
//!
//! The project generator is ChaCha8 (`rand_chacha::ChaCha8Rng`), whose output
//! stream is fixed by its algorithm rather than by the `rand` release. Every
//! subsystem gets its own stream, derived from the run seed and a purpose tag
//! by SHA-256, so results never depend on the order in which streams are
//! created or on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derive a child seed from `seed` and a purpose tag.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Generator for the stream `(seed, tag)`.
pub fn stream(seed: u64, tag: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tag))
}
