//! Portable seeded randomness.
//!
//! All stochastic steps (optimizer initialization, perspective sampling)
//! draw from SplitMix64 so that golden outputs are identical on every
//! platform. Seeds for independent streams are derived with FNV-1a over
//! the stream's identifying parts.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

#[derive(Debug, Clone)]
pub struct SeededRng(SplitMix64);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self(SplitMix64::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform draw from `[0, 1)` using the top 53 bits.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Draw from the symmetric Dirichlet(1, …, 1), i.e. uniform on the
    /// simplex, via normalized unit exponentials.
    pub fn dirichlet_uniform(&mut self, n: usize) -> Vec<f64> {
        let draws: Vec<f64> = (0..n).map(|_| -(1.0 - self.next_unit()).ln()).collect();
        let total: f64 = draws.iter().sum();
        draws.into_iter().map(|d| d / total).collect()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Derives a stream seed from a base seed and string parts. Parts are
/// length-prefixed so that `("ab", "c")` and `("a", "bc")` differ.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut hash = FNV_OFFSET;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            hash ^= u64::from(*b);
            hash = hash.wrapping_mul(FNV_PRIME);
        }
    };
    feed(&base.to_le_bytes());
    for part in parts {
        feed(&(part.len() as u64).to_le_bytes());
        feed(part.as_bytes());
    }
    // one splitmix round to spread the FNV state
    SeededRng::new(hash).next_u64()
}
