//! Named generator for every random draw in the simulator: SplitMix64.
//!
//! State is a single u64 initialised to the seed. Each draw:
//!
//! ```text
//! state = state + 0x9e3779b97f4a7c15            (wrapping)
//! z = state
//! z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9      (wrapping)
//! z = (z ^ (z >> 27)) * 0x94d049bb133111eb      (wrapping)
//! return z ^ (z >> 31)
//! ```
//!
//! Derived draws: `uniform(lo, hi) = lo + next % (hi - lo + 1)` and
//! `chance(p) = (next >> 11) / 2^53 < p`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

#[derive(Debug, Clone)]
pub struct SimRng(SplitMix64);

impl SimRng {
    pub fn new(seed: u64) -> SimRng {
        SimRng(SplitMix64::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Inclusive range. The modulo bias is part of the stream definition.
    pub fn uniform(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        let span = hi - lo;
        let x = self.next_u64();
        if span == u64::MAX {
            x
        } else {
            lo + x % (span + 1)
        }
    }

    pub fn chance(&mut self, p: f64) -> bool {
        let unit = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        unit < p
    }

    pub fn fill(&mut self, buf: &mut [u8]) {
        for chunk in buf.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
