//! Seed derivation and per-step noise.
//!
//! Every random draw in the crate is a pure function of an explicit seed.
//! Batch workloads derive one seed per work item with [`derive`], so results
//! do not depend on how items are scheduled across threads. Rollouts draw
//! their per-step uniforms from [`StepNoise`], which hashes
//! `(episode seed, stream, t)`; two rollouts sharing an episode seed see the
//! same uniforms at every step even after their actions diverge (common
//! random numbers).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Prng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for work item `index` under `master`.
#[inline]
pub fn derive(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng(seed: u64) -> Prng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[inline]
fn unit_from_bits(bits: u64) -> f64 {
    // 53 high bits -> [0, 1)
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Initial = 1,
    Action = 2,
    Transition = 3,
    Reward = 4,
}

/// Deterministic per-step uniforms for one episode.
#[derive(Debug, Clone, Copy)]
pub struct StepNoise {
    seed: u64,
}

impl StepNoise {
    pub fn new(episode_seed: u64) -> Self {
        Self { seed: episode_seed }
    }

    pub fn uniform(&self, stream: Stream, t: usize) -> f64 {
        unit_from_bits(derive(derive(self.seed, stream as u64), t as u64))
    }

    /// A generator for draws that need more than one uniform (e.g. Gaussian rewards).
    pub fn rng(&self, stream: Stream, t: usize) -> Prng {
        rng(derive(derive(self.seed, stream as u64 + 16), t as u64))
    }
}
