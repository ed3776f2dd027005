//! Seeded random streams.
//!
//! Every consumer of randomness draws from ChaCha20 keyed by the run seed,
//! with the stream id chosen by purpose. ChaCha20 is counter based and fully
//! specified, so a given `(seed, purpose)` pair produces the same words on
//! every platform and from any language with a conforming implementation.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type StreamRng = ChaCha20Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Dataset = 1,
    Split = 2,
    Noise = 3,
    Init = 4,
    Batching = 5,
    Probe = 6,
    Mixup = 7,
    Shuffle = 8,
    Metric = 9,
    Theory = 10,
}

pub fn stream(seed: u64, purpose: Purpose) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// A second generator for the same purpose, e.g. the two batch sets of the
/// mixup trainer. `lane` 0 is identical to [`stream`].
pub fn stream_lane(seed: u64, purpose: Purpose, lane: u64) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64 | (lane << 32));
    rng
}
