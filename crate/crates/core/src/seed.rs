//! Seed derivation for reproducible, independent random substreams.
//!
//! Every Monte-Carlo run gets `run_seed = mix(master_seed, run_index)`; the
//! graph, stream, and any other randomness of that run are drawn from
//! `substream(run_seed, name)`. Both steps use the SplitMix64 finalizer, so
//! seeds are stable across platforms and independent of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of run `run_index` under `master_seed`.
pub fn run_seed(master_seed: u64, run_index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(run_index.wrapping_mul(GOLDEN_GAMMA)))
}

/// Named substream of a run seed (FNV-1a over the name, then mixed).
pub fn substream_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(seed ^ h)
}

pub fn substream(seed: u64, name: &str) -> SimRng {
    SimRng::seed_from_u64(substream_seed(seed, name))
}
