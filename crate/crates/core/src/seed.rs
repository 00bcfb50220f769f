//! Stable seed derivation.
//!
//! Every random stream in a run is addressed by a chain of integers (master
//! seed, iteration, emitter, candidate, episode). The chain is hashed with
//! 64-bit FNV-1a over the little-endian bytes, so derived seeds are identical
//! on every platform and independent of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// FNV-1a over the concatenated little-endian encodings of `parts`.
pub fn derive(parts: &[u64]) -> u64 {
    let mut hash = FNV_OFFSET;
    for part in parts {
        for b in part.to_le_bytes() {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(FNV_PRIME);
        }
    }
    hash
}

/// Seed of episode `episode_index` of a terrain evaluated under `seed`.
pub fn episode_seed(seed: u64, episode_index: u32) -> u64 {
    derive(&[seed, u64::from(episode_index)])
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
