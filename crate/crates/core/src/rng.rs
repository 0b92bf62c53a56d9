//! Deterministic random streams.
//!
//! Every stochastic stage derives its own ChaCha stream from a parent seed
//! and an index, so results do not depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for stream `index` under `parent`.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    mix64(mix64(parent ^ 0x9e37_79b9_7f4a_7c15).wrapping_add(mix64(index.wrapping_add(0x632b_e59b_d9b4_e019))))
}

pub fn stream(parent: u64, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(parent, index))
}

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
