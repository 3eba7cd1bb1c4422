//! Seed fan-out.
//!
//! Every random stream in a run is keyed by a path of integers
//! (master seed, repetition, iteration, agent, ...). The path is folded
//! through SplitMix64 so nearby keys give unrelated ChaCha8 streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags; keep these stable, they are part of the reproducibility contract.
pub mod tag {
    pub const PROBLEM: u64 = 0x5052_4f42;
    pub const REPETITION: u64 = 0x5245_5053;
    pub const AGENTS: u64 = 0x4147_4e54;
    pub const LOCAL: u64 = 0x4c4f_4341;
    pub const PROBE: u64 = 0x5052_4f42_45;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a key path into a single 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6a09_e667_f3bc_c908, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(parts: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(parts))
}
