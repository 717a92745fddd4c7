//! Deterministic splitting of one top-level seed into independent streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent randomness streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 0,
    Init = 1,
    Shuffle = 2,
    Lambda = 3,
    Subsample = 4,
    Split = 5,
}

/// Returns the generator for `stream` under `seed`.
///
/// Streams of the same seed never overlap, and a stream's sequence does not
/// depend on how many values other streams consumed.
pub fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
