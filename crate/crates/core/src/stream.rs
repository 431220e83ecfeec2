//! Deterministic random-stream derivation.
//!
//! Every stochastic component owns a private ChaCha8 stream whose seed is
//! derived from the run seed, a purpose tag, and integer indices (epoch,
//! sample id, repetition, …). Work fanned out to parallel workers draws from
//! per-item streams, so results are independent of scheduling and worker
//! count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `(seed, purpose, indices)` into a single sub-seed.
pub fn derive_seed(seed: u64, purpose: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ fnv1a(purpose.as_bytes()));
    for &ix in indices {
        h = splitmix64(h ^ ix);
    }
    h
}

/// A fresh generator for the given key.
pub fn stream(seed: u64, purpose: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, indices))
}
