//! Seeded random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream for a (purpose, index) pair, so unrelated consumers of one seed
/// never share draws.
pub fn keyed_stream(seed: u64, purpose: u32, index: u64) -> Rng {
    substream(seed, (u64::from(purpose) << 48) ^ index)
}
