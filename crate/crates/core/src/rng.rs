//! Deterministic seed streams.
//!
//! Every random quantity in the toolkit is drawn from a ChaCha stream whose
//! seed is derived from `(master seed, stream tag, index)`, so parallel work
//! can be scheduled in any order and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a stream tag and an index.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream.rotate_left(17)) ^ index)
}

pub fn rng_for(master: u64, stream: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, stream, index))
}

/// Stream tags. Distinct constants keep unrelated draws independent.
pub mod streams {
    pub const TRAIN: u64 = 1;
    pub const VAL: u64 = 2;
    pub const PRIOR: u64 = 3;
    pub const REPRESENTATIVE: u64 = 4;
    pub const OPTIMIZER: u64 = 5;
    pub const POSTERIOR_DRAWS: u64 = 6;
    pub const TRIAL: u64 = 7;
    pub const PROBES: u64 = 8;
    pub const SCENARIO: u64 = 9;
    pub const HISTOGRAM: u64 = 10;
}
