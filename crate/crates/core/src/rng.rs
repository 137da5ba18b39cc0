//! Counter-derived RNG streams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by a tuple
//! of integers (seed, purpose, class, index, ...), so results do not depend on
//! iteration or thread scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a key tuple into a single 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6A09_E667_F3BC_C908, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(parts: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

/// Stream purposes, used as the second key component.
pub(crate) mod purpose {
    pub const DATA_TRAIN: u64 = 1;
    pub const DATA_TEST: u64 = 2;
    pub const STUDENT_INIT: u64 = 3;
    pub const STUDENT_TRAIN: u64 = 4;
    pub const DISTILL_INIT: u64 = 5;
    pub const DISTILL_STEP: u64 = 6;
    pub const CORESET: u64 = 7;
    pub const DM_INIT: u64 = 8;
    pub const ABLATION: u64 = 9;
}
