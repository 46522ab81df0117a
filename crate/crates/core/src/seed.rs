//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a derived seed and, where work is split, a stream id, so results
//! never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of words into one seed. Order-sensitive.
pub fn derive(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &p| mix64(acc ^ mix64(p)))
}

/// Generator for `seed`, positioned on stream `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Salts separating the independent uses of one user seed.
pub(crate) mod salt {
    pub const BOOTSTRAP: u64 = 0x01;
    pub const IMPORTANCE: u64 = 0x02;
    pub const SPLIT: u64 = 0x03;
    pub const FOLDS: u64 = 0x04;
    pub const TEST_CASE: u64 = 0x05;
    pub const FOLD_MODEL: u64 = 0x06;
    pub const SYNTH: u64 = 0x07;
    pub const SCENE: u64 = 0x08;
}
