//! Seeded generators. Every random draw in the crate comes from here so that
//! identical seeds give bit-identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SnapRng = ChaCha8Rng;

/// Seeds used for repeated runs.
pub const DEFAULT_SEEDS: [u64; 3] = [13, 17, 23];

pub fn seeded(seed: u64) -> SnapRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent counter-addressed substream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> SnapRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
