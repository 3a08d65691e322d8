//! Deterministic randomness plumbing: one top-level seed, split
//! hierarchically into independent named children and indexed streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// An RNG for stream `stream` of the given seed. Streams are mutually
/// independent and stable across runs and thread schedules.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A child seed for a named component (e.g. "market", "method:pw",
/// "bootstrap"), so that sub-systems draw from unrelated streams.
pub fn child_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x1_0000_0000_01b3);
    }
    h
}
