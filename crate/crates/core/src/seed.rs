//! Deterministic seed splitting.
//!
//! Every random stream in the crate is derived from one root seed plus a
//! stream tag, so results do not depend on scheduling or evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `root` and a sequence of stream indices.
pub fn derive(root: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Derives a child seed from `root` and a textual stream name.
pub fn derive_named(root: u64, name: &str) -> u64 {
    // FNV-1a over the name keeps the tag stable across platforms.
    let tag = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    derive(root, &[tag])
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
