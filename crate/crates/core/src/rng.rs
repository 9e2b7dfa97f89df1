//! Seed derivation.
//!
//! Every random stream in the pipeline is a ChaCha8 generator seeded from a
//! 64-bit value derived from `(root seed, purpose tag, index...)`. Streams
//! for different purposes never share state, so adding a consumer does not
//! perturb the draws of existing ones, and results do not depend on the
//! order in which parallel jobs happen to run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a child seed for `tag` from `seed`.
pub fn derive(seed: u64, tag: &str) -> u64 {
    splitmix64(splitmix64(seed) ^ fnv1a(tag))
}

/// Derives a child seed for the `index`-th member of a tagged family.
pub fn derive_indexed(seed: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive(seed, tag) ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(seed: u64, tag: &str) -> Rng {
    rng_from(derive(seed, tag))
}
