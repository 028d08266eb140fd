//! Seeded sampling.
//!
//! Every random draw in the pipeline goes through [`SampleStream`], a
//! xoshiro256++ generator seeded via SplitMix64 (`seed_from_u64`). Unit
//! floats take the top 53 bits of each output: `(x >> 11) * 2^-53`.
//! Per-stage seeds come from [`derive_seed`], the first eight bytes
//! (little endian) of `SHA-256(label || 0x00 || master.to_le_bytes())`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(label.as_bytes());
    hasher.update([0u8]);
    hasher.update(master.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

#[derive(Debug, Clone)]
pub struct SampleStream(Xoshiro256PlusPlus);

impl SampleStream {
    pub fn new(seed: u64) -> Self {
        Self(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`; returns `lo` when the range is degenerate.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = self.unit();
        lo + (hi - lo) * u
    }

    /// Integer in `lo..=hi` by widening multiply.
    pub fn int_inclusive(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        let span = (hi - lo) as u128 + 1;
        let r = ((self.0.next_u64() as u128 * span) >> 64) as i64;
        lo + r
    }
}
