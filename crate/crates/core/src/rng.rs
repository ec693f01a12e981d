//! Named random sub-streams derived from a single seed.
//!
//! Every consumer of randomness asks for its own stream so that changing, for
//! instance, the parameter initialization does not shift the data sampled by
//! the generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data,
    Split,
    Init,
    Sampling,
    Fallback,
    Truth,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::Split => 2,
            Stream::Init => 3,
            Stream::Sampling => 4,
            Stream::Fallback => 5,
            Stream::Truth => 6,
        }
    }
}

pub type Rng = ChaCha8Rng;

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}

/// A stream further split by an integer (epoch, model variant, ...).
pub fn substream(seed: u64, which: Stream, index: u64) -> Rng {
    let mixed = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    stream(mixed, which)
}
