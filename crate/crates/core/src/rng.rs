//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from a base seed mixed with a path of tags, so parallel work can be
//! split without sharing generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags used across modules.
pub mod tag {
    pub const INITIAL_DESIGN: u64 = 0x1a17;
    pub const SUGGEST: u64 = 0x5066;
    pub const GP_FIT: u64 = 0x6f17;
    pub const BOOTSTRAP: u64 = 0xb007;
    pub const POSTERIOR: u64 = 0x9057;
    pub const RANDOM_SEARCH: u64 = 0x7a4d;
    pub const FINALIZE: u64 = 0xf17a;
    pub const DATA: u64 = 0xda7a;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `tags` into `base`. Order matters.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_from(base: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, tags))
}

/// Stable 64-bit FNV-1a hash, used to turn problem ids into seed tags.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
