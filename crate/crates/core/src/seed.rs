//! Root-seed expansion.
//!
//! Every stochastic stage draws from its own ChaCha stream keyed by the same
//! root seed, so re-seeding one stage never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Split = 1,
    Negatives = 2,
    Init = 3,
    Shuffle = 4,
    Carve = 5,
    Synthetic = 6,
}

pub fn stage_rng(root: u64, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stage as u64);
    rng
}
