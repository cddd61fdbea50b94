//! Seeded random streams.
//!
//! Every randomized routine takes an explicit 64-bit seed and draws from
//! [`ChaCha8Rng`], whose output stream is fixed across platforms and crate
//! releases. Independent sub-streams are obtained by hashing the parent seed
//! together with work-item indices via [`derive_seed`].

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a path of indices.
///
/// Distinct paths give statistically independent seeds; the empty path maps
/// the seed through the mixer once.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
