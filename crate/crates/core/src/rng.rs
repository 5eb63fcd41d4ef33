//! Seeded random streams.
//!
//! Every stochastic component draws from an explicit [`RandomStream`]; nothing
//! touches ambient entropy, so identical seeds replay identical transcripts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type RandomStream = ChaCha8Rng;

/// Stream `stream` of the generator family rooted at `seed`.
pub fn random_stream(seed: u64, stream: u64) -> RandomStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Splits an independent child stream off `parent`.
pub fn fork(parent: &mut RandomStream) -> RandomStream {
    ChaCha8Rng::from_seed(parent.random())
}
