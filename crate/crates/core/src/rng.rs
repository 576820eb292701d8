//! Seeded random streams.
//!
//! All randomness comes from ChaCha8 (`rand_chacha`), which produces the same
//! output on every platform. A stream is addressed by a 64-bit seed and a
//! stream id: the seed keys the generator through `seed_from_u64` and the id
//! selects one of ChaCha's 2^64 independent streams. Child seeds are derived
//! with a SplitMix64 mix of `(parent, tag)`, so every consumer (a weight
//! matrix, one dataset sequence, a sweep cell) owns its own substream and
//! results do not depend on generation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids used under a single seed.
pub mod stream {
    pub const VALUES: u64 = 0;
    pub const MASK: u64 = 1;
    pub const BITS: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const PHASES: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const INITIAL_STATE: u64 = 6;
}

/// Tags for child seeds derived from a reservoir or run seed.
pub mod tag {
    pub const W_IN: u64 = 0x57_49_4e;
    pub const W: u64 = 0x57;
    pub const W_FB: u64 = 0x57_46_42;
    pub const CHANNEL: u64 = 0x43_48;
    pub const RESERVOIR: u64 = 0x52_45_53;
    pub const SPLIT: u64 = 0x53_50_4c;
    pub const DATASET: u64 = 0x44_53;
}

pub fn stream(seed: u64, id: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `tag` under `parent`.
pub fn derive_seed(parent: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ tag)
}

/// Stable 64-bit FNV-1a hash, used to turn names into seed tags.
pub fn name_tag(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
