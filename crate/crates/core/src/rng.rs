//! Seeded generator streams.
//!
//! Every trial, cell and Monte-Carlo chunk owns a generator derived from the
//! root seed and a tuple of integer tags, so results never depend on thread
//! count or scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator type used throughout the crate.
pub type SimRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a root seed with a list of tags into a 64-bit stream key.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for &t in tags {
        h = splitmix64(h ^ splitmix64(t.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

/// A generator for the stream identified by `(seed, tags...)`.
pub fn stream(seed: u64, tags: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, tags))
}
