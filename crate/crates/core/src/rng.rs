//! Deterministic random-stream derivation.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from the
//! master seed, so training, validation, testing and initialization never
//! share state: extending a training run cannot change the test episodes.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Train,
    Val,
    Test,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Init => 0,
            Stream::Train => 1,
            Stream::Val => 2,
            Stream::Test => 3,
        }
    }
}

/// RNG for stream `stream`, substream `idx` (validation round, test episode).
pub fn stream_rng(seed: u64, stream: Stream, idx: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream.tag() << 48) | (idx & 0xFFFF_FFFF_FFFF));
    rng
}
