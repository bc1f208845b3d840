//! Seed and stream management.
//!
//! Every stochastic component draws from a counter-based ChaCha generator so
//! that a `(master seed, stream index)` pair pins the entire sequence of
//! draws regardless of thread scheduling. Parallel work items must each take
//! their own stream, never share one.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for one logical stream. `seed` selects the key, `stream` the
/// independent counter stream within that key.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stable mix of a master seed and an index into a fresh 64-bit seed
/// (splitmix64 finalizer). Used when a sub-experiment needs its own key
/// rather than a stream of the parent key.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
