//! Deterministic seed derivation.
//!
//! Every random stream in the workspace is a ChaCha8 generator seeded by
//! splitmix64-mixing the master seed with stream tags. Worker results are
//! merged in index order, so outputs are independent of thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Keeping them in one place avoids accidental collisions.
pub mod tags {
    pub const NET_INIT: u64 = 0x6e65_745f_696e_6974;
    pub const COLLECT: u64 = 0x636f_6c6c_6563_7431;
    pub const TRAIN: u64 = 0x7472_6169_6e5f_7374;
    pub const HOLDOUT: u64 = 0x686f_6c64_6f75_7431;
    pub const EVAL: u64 = 0x6576_616c_5f73_7464;
    pub const LAVI: u64 = 0x6c61_7669_5f73_6f6c;
    pub const SWEEP: u64 = 0x7377_6565_705f_3131;
    pub const ABLATE: u64 = 0x6162_6c61_7465_3031;
}

/// splitmix64 finalizer; a full-period bijection on u64.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Fold a list of parts into one seed. Order matters.
pub fn mix(parts: &[u64]) -> u64 {
    let mut acc = 0x243f_6a88_85a3_08d3; // arbitrary non-zero start
    for &p in parts {
        acc = splitmix64(acc ^ splitmix64(p));
    }
    acc
}

/// ChaCha8 stream from mixed parts.
pub fn seeded(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}
