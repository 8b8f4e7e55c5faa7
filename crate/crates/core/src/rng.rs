//! Deterministic random streams.
//!
//! Every stochastic routine takes an explicit `u64` seed. Sub-streams (one per
//! bootstrap replicate, grid point, realization, ...) are derived by hashing the
//! parent seed with the stream coordinates, so results never depend on the order
//! in which independent work items are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a parent seed with stream coordinates into a child seed.
pub fn derive_seed(seed: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix(seed), |acc, &c| splitmix(acc ^ splitmix(c)))
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, coords: &[u64]) -> Rng {
    rng_from(derive_seed(seed, coords))
}
