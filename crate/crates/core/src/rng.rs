//! Every random draw in the crate derives from one user seed. Each consumer
//! reads its own ChaCha stream so that adding draws in one place never
//! shifts the numbers seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers for [`stream`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    TrainTestSplit = 1,
    Restarts = 2,
    SyntheticChain = 3,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
