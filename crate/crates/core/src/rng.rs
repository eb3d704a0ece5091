//! Portable seeded randomness for plans, splits and synthetic cohorts.
//!
//! The generator is ChaCha with 8 rounds (`rand_chacha::ChaCha8Rng`) seeded
//! through `SeedableRng::seed_from_u64`, whose seed expansion (PCG32) and
//! output stream are value-stable across platforms and releases. Bounded
//! integers are drawn here rather than through `rand`'s distributions so that
//! a plan file depends only on the ChaCha8 stream:
//!
//! * `below(n)`: Lemire's multiply-shift on a 64-bit word, with rejection of
//!   the biased low zone (`lo < 2^64 mod n`).
//! * `shuffle`: Fisher-Yates from the last index down, swapping `i` with
//!   `below(i + 1)`.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

#[derive(Debug, Clone)]
pub struct PlanRng {
    inner: ChaCha8Rng,
}

impl PlanRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let product = u128::from(self.next_u64()) * u128::from(n);
            if (product as u64) >= threshold {
                return (product >> 64) as usize;
            }
        }
    }

    /// Uniform real in `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
