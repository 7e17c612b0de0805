//! Seed derivation.
//!
//! Every generator takes a single `u64` seed. Independent streams (per sample,
//! per training step, per stage inside a generator) are derived with
//! [`derive_seed`], a splitmix64 finaliser applied to `seed ^ (index * φ)`
//! where φ is the 64-bit golden-ratio constant. The derivation does not
//! depend on thread scheduling, so parallel generation stays reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// The splitmix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed of sub-stream `index` from `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ index.wrapping_mul(GOLDEN))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shorthand for `rng_from_seed(derive_seed(seed, index))`.
pub fn substream(seed: u64, index: u64) -> Rng {
    rng_from_seed(derive_seed(seed, index))
}
