//! Seed expansion. A single 64-bit seed fans out into one independent stream
//! per design point plus a stream for the budget scheduler, so per-point
//! sampling stays reproducible regardless of the order points are visited in.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream used by the multinomial scheduler.
pub fn scheduler_stream(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

/// Independent stream for design point `point`.
pub fn point_stream(seed: u64, point: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(point as u64 + 1);
    rng
}

/// One stream per design point.
pub fn point_streams(seed: u64, d: usize) -> Vec<ChaCha8Rng> {
    (0..d).map(|i| point_stream(seed, i)).collect()
}
