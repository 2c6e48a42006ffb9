//! Deterministic seed derivation.
//!
//! Every random decision in the pipeline flows from one master seed through
//! named substreams, so runs are reproducible bit-for-bit and independent
//! stages don't share RNG state. `std::hash::DefaultHasher` is explicitly
//! avoided — its output is not guaranteed stable across Rust releases.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the label bytes; stable, well-mixed enough as splitmix input.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// splitmix64 finalizer — decorrelates structured inputs.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed, a purpose label, and an index.
pub fn derive(parent: u64, label: &str, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(fnv1a(label.as_bytes()) ^ splitmix64(index)))
}

/// A ChaCha8 stream for a named purpose.
pub fn stream(parent: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(parent, label, index))
}
