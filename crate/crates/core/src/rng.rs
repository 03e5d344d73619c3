//! Counter-based random numbers.
//!
//! Every draw is a pure function of a key `(seed, stream, path, step)`, so a
//! path's noise does not depend on which other paths share its batch or on
//! the order in which paths are simulated.

use std::f64::consts::TAU;

/// Named independent noise streams.
pub mod stream {
    pub const BROWNIAN: u64 = 0x01;
    pub const LATENT: u64 = 0x02;
    pub const JITTER: u64 = 0x03;
    pub const INTERPOLATE: u64 = 0x04;
    pub const SPLIT: u64 = 0x05;
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseKey {
    pub seed: u64,
    pub stream: u64,
    pub path: u64,
    pub step: u64,
}

impl NoiseKey {
    pub fn new(seed: u64, stream: u64, path: u64, step: u64) -> Self {
        Self {
            seed,
            stream,
            path,
            step,
        }
    }

    /// Raw 64-bit output for one lane of this key.
    pub fn bits(&self, lane: u64) -> u64 {
        let mut h = mix64(self.seed.wrapping_add(GOLDEN));
        h = mix64(h ^ self.stream.wrapping_mul(GOLDEN));
        h = mix64(h ^ self.path.wrapping_add(0x632b_e59b_d9b4_e019));
        h = mix64(h ^ self.step.wrapping_mul(0xd1b5_4a32_d192_ed03));
        mix64(h ^ lane.wrapping_add(GOLDEN))
    }

    /// Uniform in the open interval (0, 1).
    pub fn uniform(&self, lane: u64) -> f64 {
        ((self.bits(lane) >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal by Box-Muller on lanes `2·lane` and `2·lane + 1`.
    pub fn normal(&self, lane: u64) -> f64 {
        let u1 = self.uniform(2 * lane);
        let u2 = self.uniform(2 * lane + 1);
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }
}

/// Standard normal keyed by `(seed, stream, path, step)`.
pub fn normal(seed: u64, stream: u64, path: u64, step: u64) -> f64 {
    NoiseKey::new(seed, stream, path, step).normal(0)
}

/// Uniform on (0, 1) keyed by `(seed, stream, path, step)`.
pub fn uniform(seed: u64, stream: u64, path: u64, step: u64) -> f64 {
    NoiseKey::new(seed, stream, path, step).uniform(0)
}

/// Derive a child seed, e.g. one per training step.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    NoiseKey::new(seed, tag, index, u64::MAX).bits(7)
}
