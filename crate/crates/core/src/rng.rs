//! Seeded random number generation.
//!
//! All randomness in the crate flows from [`ChaCha8Rng`] (the 8-round ChaCha
//! stream cipher, as implemented by `rand_chacha`), which produces the same
//! stream on every platform for a given 64-bit seed. Independent streams for
//! parallel work items are derived with [`sub_seed`], a SplitMix64 finalizer
//! applied to `(seed, index)`, so results never depend on scheduling.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `index`-th independent stream under `seed`.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn sub_rng(seed: u64, index: u64) -> Rng {
    rng(sub_seed(seed, index))
}
