//! Seed splitting.
//!
//! Every random component derives its generator from the single 64-bit run
//! seed: `derive_seed(master, stream)` is one SplitMix64 output of
//! `master + (stream + 1) * 0x9E3779B97F4A7C15`. Replication `r` uses
//! `derive_seed(seed, r)`; inside a replication, stream 0 generates the data
//! and stream 1 drives the sampler.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master.wrapping_add(stream.wrapping_add(1).wrapping_mul(GOLDEN)))
}

pub fn rng_for(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream))
}

pub const DATA_STREAM: u64 = 0;
pub const CHAIN_STREAM: u64 = 1;
