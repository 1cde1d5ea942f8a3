//! Derived RNG streams.
//!
//! Every source of randomness in a run is a ChaCha8 stream seeded from the
//! master seed plus a stream label, so the sequence a component sees does
//! not depend on scheduling or on how many other components drew numbers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Each (tag, a, b) triple names one independent stream.
pub const TAG_TOPIC_INIT: u64 = 1;
pub const TAG_CRITIC_INIT: u64 = 2;
pub const TAG_FACTOR_INIT: u64 = 3;
pub const TAG_SELECT: u64 = 4;
pub const TAG_CLIENT: u64 = 5;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a master seed and a stream label into one 64-bit seed.
pub fn stream_seed(master: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut s = splitmix64(master);
    for word in [tag, a, b] {
        s = splitmix64(s ^ splitmix64(word));
    }
    s
}

/// ChaCha8 stream for `(master, tag, a, b)`.
pub fn stream_rng(master: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, tag, a, b))
}
