//! Seeded randomness.
//!
//! Every random draw in the crate (weight init, shuffling, augmentation,
//! synthetic data) goes through [`Rng`], which is ChaCha8: a counter-based
//! stream cipher generator whose output for a given seed is fixed across
//! platforms and releases of `rand_chacha`.

use rand::SeedableRng;

pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Independent generator for a named sub-stream of `seed`, so that e.g.
/// epoch `k` shuffling does not depend on how many draws happened before.
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
