//! Seeded random streams. Each run derives independent ChaCha streams from a
//! single master seed, one per purpose, so that consuming draws from one never
//! shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    InitialStates,
    Params,
}

impl Stream {
    fn label(self) -> u64 {
        match self {
            Stream::InitialStates => 1,
            Stream::Params => 2,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.label());
    rng
}
