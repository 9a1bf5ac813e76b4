//! Seed-derived random streams.
//!
//! Every randomized operation draws from a ChaCha8 generator keyed by the
//! user seed. Independent work items (phantom index, sample id, purpose) get
//! their own stream number so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes. Combined with an item index into a ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Root = 0,
    Shapes = 1,
    Field = 2,
    Noise = 3,
    Mask = 4,
    Params = 5,
    Coils = 6,
    Init = 7,
    Shuffle = 8,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for work item `index` and `purpose`, independent of every
/// other (index, purpose) pair under the same seed.
pub fn stream(seed: u64, index: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index.wrapping_mul(16).wrapping_add(purpose as u64));
    r
}

/// Mixes a seed with an index into a fresh seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
