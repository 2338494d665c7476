//! Seeded random streams.
//!
//! All randomness flows from ChaCha8, which is reproducible across platforms
//! and crate versions. Parallel work draws one base seed from the caller's
//! generator and gives each run its own stream, so results depend only on
//! the seed and run index, never on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` derived from `base`.
pub fn stream(base: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng
}

/// Draws a base seed for a family of streams.
pub fn fork<R: Rng + ?Sized>(rng: &mut R) -> u64 {
    rng.gen()
}
