//! Seed derivation for deterministic parallel training.
//!
//! Every parallel unit of work (tree, fold, epoch shuffle) draws from its own
//! RNG whose seed is a pure function of the run seed and a stream label, so
//! results are identical regardless of worker count or scheduling order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a child seed from a base seed and a stream label.
pub fn derive_seed(base: u64, stream: &str) -> u64 {
    splitmix64(base ^ fnv1a64(stream.as_bytes()))
}

/// Derive a child seed for the `index`-th unit of a labeled stream
/// (tree index, fold index, epoch index).
pub fn derive_seed_indexed(base: u64, stream: &str, index: u64) -> u64 {
    splitmix64(derive_seed(base, stream) ^ splitmix64(index))
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
