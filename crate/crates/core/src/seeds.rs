//! Counter-based seed derivation.
//!
//! Every run takes one master seed. Child seeds are
//! `splitmix64(splitmix64(master ^ stream) + index)`, where `stream` is a fixed
//! per-purpose constant; this keeps e.g. the seed of student 3 independent of
//! how many students are trained and of every other use of the master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Per-purpose stream constants.
pub mod stream {
    pub const TEACHER: u64 = 0x7465_6163_6865_7200;
    pub const DATA: u64 = 0x6461_7461_0000_0000;
    pub const STUDENT: u64 = 0x7374_7564_656e_7400;
    pub const PROBE: u64 = 0x7072_6f62_6500_0000;
    pub const RETRAIN: u64 = 0x7265_7472_6169_6e00;
    pub const GRID: u64 = 0x6772_6964_0000_0000;
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ stream).wrapping_add(index))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
