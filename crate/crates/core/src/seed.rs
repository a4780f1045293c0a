//! Deterministic seed splitting.
//!
//! Every random stream in a run is derived from one top-level seed:
//!
//! ```text
//! derive(seed, tag, index) = mix(mix(seed ^ mix(fnv1a64(tag))) ^ mix(index))
//! ```
//!
//! where `mix` is the SplitMix64 finalizer and `fnv1a64` is the 64-bit FNV-1a
//! hash of the tag's UTF-8 bytes. Tags name the purpose of a stream
//! (`"ucb-noise"`, `"trial"`, `"round"`, ...), indices enumerate members.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 output function.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derive a subsidiary seed for `(tag, index)` from `seed`.
pub fn derive(seed: u64, tag: &str, index: u64) -> u64 {
    mix(mix(seed ^ mix(fnv1a64(tag.as_bytes()))) ^ mix(index))
}

/// ChaCha8 stream for a derived seed.
pub fn rng(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag, index))
}
