//! Hierarchical seed derivation.
//!
//! Every random stream in the crate is derived from one top-level seed by
//! mixing in a path of tags (experiment -> cell -> trial -> module). The mix
//! is a SplitMix64 finalizer applied after each tag, so derived seeds for
//! different paths are decorrelated and any single path can be recomputed in
//! isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `parent` and a numeric tag.
pub fn derive(parent: u64, tag: u64) -> u64 {
    mix(mix(parent) ^ tag.rotate_left(17))
}

/// Derive a child seed from `parent` and a string tag.
pub fn derive_str(parent: u64, tag: &str) -> u64 {
    // FNV-1a over the tag bytes, then the numeric mix.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    derive(parent, h)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
