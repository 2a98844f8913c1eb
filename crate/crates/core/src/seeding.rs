//! Deterministic random substreams.
//!
//! Every agent owns a private ChaCha8 stream whose seed is
//! `mix(master, agent_index, role)`. Streams of existing agents do not
//! depend on how many agents exist, so growing a roster never perturbs
//! the agents that were already there.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose of a substream; part of the seed derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamRole {
    /// Map initialization plus every decision the agent takes.
    Agent = 1,
    /// Uniform-random baseline policy.
    Baseline = 2,
    /// Environment-level randomness (fuzzers, scripted environments).
    Environment = 3,
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the substream for `(master, index, role)`.
pub fn mix(master: u64, index: u64, role: StreamRole) -> u64 {
    let h = splitmix64(master);
    let h = splitmix64(h ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    splitmix64(h ^ (role as u64).wrapping_mul(0xA076_1D64_78BD_642F))
}

pub fn substream(master: u64, index: u64, role: StreamRole) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(master, index, role))
}
