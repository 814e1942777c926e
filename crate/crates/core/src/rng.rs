//! Counter-based random streams.
//!
//! Every random draw in a run comes from a ChaCha stream selected by
//! `(seed, purpose, slot, block, sub)`. Results therefore depend only on the
//! seed and the configuration, never on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Propagate = 1,
    Lookahead = 2,
    MhProposal = 3,
    MhLookahead = 4,
    Resample = 5,
    Replication = 6,
    Oracle = 7,
}

const fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of a stream key, used as the ChaCha stream id.
pub fn stream_id(purpose: Purpose, slot: u64, block: u64, sub: u64) -> u64 {
    let mut h = splitmix64(purpose as u64);
    h = splitmix64(h ^ slot);
    h = splitmix64(h ^ block.rotate_left(21));
    splitmix64(h ^ sub.rotate_left(42))
}

pub fn stream(seed: u64, purpose: Purpose, slot: u64, block: u64, sub: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(purpose, slot, block, sub));
    rng
}

/// Seed for replication `index` of a run with base seed `seed`.
pub fn replication_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ 0x5851_f42d_4c95_7f2d) ^ index)
}
