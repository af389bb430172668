//! Shared test support: seeded generators for random QPs and formation
//! scenarios, plus oracles that do not go through the solvers under test.

pub mod formation;
pub mod qp;
pub mod suites;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
