//! Derivation of independent, reproducible random streams.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a base seed with a path of stream coordinates into a new seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut h = FnvHasher::default();
    h.write_u64(seed);
    for p in path {
        h.write_u64(*p);
    }
    splitmix(h.finish())
}

pub fn derive_rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

/// Stable 64-bit digest of a string.
pub fn text_digest(text: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(text.as_bytes());
    h.finish()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
