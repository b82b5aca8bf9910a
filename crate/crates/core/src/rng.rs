//! Counter-based random streams.
//!
//! Every consumer derives its own generator from the run seed and a path of
//! integers (method family, task, center, purpose), so the order in which
//! independent consumers run never changes what they draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream from `seed` and `path`.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let mut state = splitmix64(seed);
    for &p in path {
        state = splitmix64(state ^ splitmix64(p.wrapping_add(0xA5A5_A5A5)));
    }
    ChaCha8Rng::seed_from_u64(state)
}

/// Purposes used as the last element of a stream path.
pub mod purpose {
    pub const GEN_INIT: u64 = 1;
    pub const DISC_INIT: u64 = 2;
    pub const CENTER: u64 = 3;
    pub const FAKE_NOISE: u64 = 4;
    pub const REMINDING: u64 = 5;
    pub const EVAL: u64 = 6;
}
