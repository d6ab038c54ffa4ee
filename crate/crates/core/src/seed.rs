//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from the run seed plus a purpose tag, so results never depend on
//! scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(base: u64, tag: &str) -> u64 {
    derive_seed_bytes(base, tag.as_bytes())
}

pub fn derive_seed_bytes(base: u64, tag: &[u8]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update((tag.len() as u64).to_le_bytes());
    hasher.update(tag);
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tagged_rng(base: u64, tag: &str) -> ChaCha8Rng {
    rng(derive_seed(base, tag))
}
