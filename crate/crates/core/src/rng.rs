//! Counter-based random numbers.
//!
//! Every draw is a pure function of `(seed, stream, counter)`, so the value
//! assigned to a given tensor element does not depend on evaluation order.

use core::f64::consts::PI;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Well-known stream identifiers so that unrelated consumers sharing a seed
/// never see correlated values.
pub mod stream {
    pub const NOISE: u64 = 1;
    pub const TIMESTEP: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SCENE: u64 = 4;
    pub const TEST: u64 = 5;
    pub const TRAIN: u64 = 6;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            key: mix64(mix64(seed.wrapping_add(GOLDEN)) ^ stream.wrapping_mul(GOLDEN)),
        }
    }

    /// Derive an independent generator, e.g. one per training step.
    pub fn fork(&self, tag: u64) -> Self {
        Self {
            key: mix64(self.key ^ mix64(tag.wrapping_add(GOLDEN))),
        }
    }

    #[inline]
    pub fn bits(&self, counter: [u64; 3]) -> u64 {
        let mut h = self.key;
        for c in counter {
            h = mix64(h ^ c.wrapping_mul(GOLDEN).wrapping_add(0x632B_E59B_D9B4_E019));
        }
        h
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn uniform(&self, counter: [u64; 3]) -> f64 {
        (self.bits(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller on two decorrelated words.
    #[inline]
    pub fn normal(&self, counter: [u64; 3]) -> f64 {
        let a = self.bits(counter);
        let b = mix64(a ^ 0xD6E8_FEB8_6659_FD93);
        // u1 in (0, 1] so the log is finite.
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * PI * u2)
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range_inclusive(&self, counter: [u64; 3], lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi);
        let span = (hi - lo) as u64 + 1;
        lo + (self.bits(counter) % span) as usize
    }
}
