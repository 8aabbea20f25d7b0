//! Counter-based random streams.
//!
//! Each consumer (feature draws, treatment coin, outcome coin, arm routing)
//! gets its own tag. A record's generator is keyed by `(seed, tag, period)`
//! and selects the ChaCha stream by record index, so draws never depend on the
//! order in which records are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_POPULATION: u64 = 0x706f_7075;
pub const TAG_TREATMENT: u64 = 0x7472_6561;
pub const TAG_OUTCOME: u64 = 0x6f75_7463;
pub const TAG_ARM: u64 = 0x6172_6d73;
pub const TAG_LEARNER: u64 = 0x6c65_6172;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, tag: u64, period: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.rotate_left(17) ^ period.wrapping_mul(0x2545_f491_4f6c_dd1d)))
}

pub fn record_rng(seed: u64, tag: u64, period: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, period));
    rng.set_stream(index);
    rng
}
