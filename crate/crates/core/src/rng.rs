//! Seed-derived random streams. Every replication or bootstrap draw owns a
//! stream keyed by its index, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream key for replicate `index` on its `attempt`-th try.
pub(crate) fn attempt_stream(index: usize, attempt: usize) -> u64 {
    ((index as u64) << 8) | attempt as u64
}
