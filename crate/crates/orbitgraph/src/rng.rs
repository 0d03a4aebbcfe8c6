//! Seeded random streams. Every random draw in the crate flows from a
//! `(seed, stream)` pair so datasets, initializations and training
//! schedules regenerate bit-identically.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent deterministic stream for a given seed.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
