//! Deterministic child-seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded from a
//! 64-bit value obtained by folding a path of task indices into the root
//! seed with the SplitMix64 finalizer:
//!
//! ```text
//! child(seed, [a, b, c]) = mix(mix(mix(seed ^ TAG) ^ a) ^ b) ^ c ...
//! ```
//!
//! Because a task's stream depends only on its path, results do not depend
//! on which thread runs the task or in which order tasks finish.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Path tags, so sibling streams with equal indices never collide.
pub mod tag {
    pub const REPETITION: u64 = 0x5245_5045;
    pub const FOLDS: u64 = 0x464f_4c44;
    pub const NUISANCE: u64 = 0x4e55_4953;
    pub const TREE: u64 = 0x5452_4545;
    pub const GROUP: u64 = 0x4752_5550;
    pub const SIZES: u64 = 0x5349_5a45;
    pub const REPLICATE_DATA: u64 = 0x5244_4154;
    pub const REPLICATE_FIT: u64 = 0x5246_4954;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ p))
}

pub fn rng_from(seed: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(seed, path))
}
