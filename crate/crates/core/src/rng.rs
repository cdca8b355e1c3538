//! Seeded random streams.
//!
//! Every run derives independent ChaCha streams from one master seed, one
//! per purpose, so that switching a loss term on or off never shifts the
//! draws seen by data shuffling, initialization or pair selection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for the named substreams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Shuffle = 1,
    Init = 2,
    Pairs = 3,
    Subset = 4,
    Features = 5,
    Projection = 6,
}

/// Returns the substream `stream` of the master `seed`.
pub fn substream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Plain seeded generator for one-off draws.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
