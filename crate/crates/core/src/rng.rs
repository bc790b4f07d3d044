//! Seeded random streams shared by weight initialisation and tile synthesis.
//!
//! Everything that needs randomness draws from a SplitMix64 stream whose
//! state is the user-supplied seed, so a seed fully determines the output.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

/// SplitMix64 stream with the value mappings used throughout the crate.
#[derive(Debug, Clone)]
pub struct SeededStream {
    inner: SplitMix64,
}

impl SeededStream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: SplitMix64::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[0, 1)` as `f32` (24 bits of resolution, exactly representable).
    pub fn next_unit_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    /// Uniform in `[-0.1, 0.1)`, the weight-initialisation range.
    pub fn next_weight(&mut self) -> f32 {
        (self.next_unit_f64() * 0.2 - 0.1) as f32
    }

    /// Uniform integer in `[0, n)`. `n` must be non-zero.
    pub fn next_below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }
}
