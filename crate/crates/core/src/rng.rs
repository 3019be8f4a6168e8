//! Seeded random number generation.
//!
//! Every stochastic routine in this crate draws from [`SimRng`], a ChaCha8
//! stream cipher generator. Independent streams are derived from a base seed
//! with [`derive_seed`], a SplitMix64 finalizer over `(base, stream)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator family used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Creates a generator from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of stream `stream` from `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(base) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}
