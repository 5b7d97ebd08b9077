//! Named random substreams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Scorer = 1,
    Synth = 2,
    Init = 3,
    Shuffle = 4,
    Dropout = 5,
}

/// Generator for `stream` under `seed`. Streams never overlap for a given seed.
pub fn substream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
