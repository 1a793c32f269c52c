//! Counter-based random sub-streams. Every (iteration, claim, cell) triple gets its
//! own generator derived from the master seed, so resampling results do not depend
//! on the order in which iterations run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stable 64-bit FNV-1a, used to key claims by id.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn substream_seed(seed: u64, iteration: u64, claim: u64, cell: u64) -> u64 {
    [iteration, claim, cell]
        .into_iter()
        .fold(splitmix64(seed), |h, v| splitmix64(h ^ splitmix64(v)))
}

pub fn substream(seed: u64, iteration: u64, claim: u64, cell: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(seed, iteration, claim, cell))
}
