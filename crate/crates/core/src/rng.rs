//! Seedable random streams.
//!
//! Every stochastic routine takes its generator explicitly. Parallel work
//! derives one stream per task from `(seed, index)` so serial and parallel
//! runs see the same numbers.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type RandomSource = ChaCha8Rng;

pub fn seeded(seed: u64) -> RandomSource {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `index` of the generator family keyed by `seed`.
pub fn stream(seed: u64, index: u64) -> RandomSource {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A child seed for task `index`, drawn from [`stream`].
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    stream(seed, index).next_u64()
}
