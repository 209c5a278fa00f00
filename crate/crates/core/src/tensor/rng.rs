//! Seeded random streams.
//!
//! Every random draw in the crate goes through [`SplitRng`]. The generator is
//! xoshiro256++; a `u64` seed is expanded into the 256-bit state with
//! SplitMix64 (the reference seeding procedure for the xoshiro family).
//!
//! Child streams are produced with [`SplitRng::split`]: the child starts from
//! the parent's current state advanced by `stream_id + 1` long jumps of
//! 2^192 steps each. Two children of the same parent with different ids are
//! therefore separated by at least 2^192 outputs and never overlap in
//! practice-reachable lengths.
//!
//! Seeds for derived objects (problem instances, sample designs, folds) are
//! computed with [`mix64`] / [`derive_seed`], the SplitMix64 finalizer applied
//! to a packed key.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// The SplitMix64 increment ("golden gamma").
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of words into a seed: `h ← mix64(h ⊕ (w + γ))` starting from
/// `h = mix64(parent + γ)`.
pub fn derive_seed(parent: u64, words: &[u64]) -> u64 {
    let mut h = mix64(parent.wrapping_add(GOLDEN_GAMMA));
    for &w in words {
        h = mix64(h ^ w.wrapping_add(GOLDEN_GAMMA));
    }
    h
}

/// Seeded xoshiro256++ stream with explicit splitting.
#[derive(Clone, Debug)]
pub struct SplitRng {
    inner: Xoshiro256PlusPlus,
    stream: u64,
}

impl SplitRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            stream: 0,
        }
    }

    /// Independent child stream; see the module docs for the construction.
    pub fn split(&self, stream_id: u32) -> Self {
        let mut inner = self.inner.clone();
        for _ in 0..=stream_id {
            inner.long_jump();
        }
        Self {
            inner,
            stream: u64::from(stream_id),
        }
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal draw.
    pub fn gaussian(&mut self) -> f64 {
        use rand_distr::Distribution;
        rand_distr::StandardNormal.sample(self)
    }

    /// Uniform integer in `0..n` (`n > 0`).
    pub fn below(&mut self, n: usize) -> usize {
        use rand::Rng;
        self.gen_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// A uniformly random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

impl RngCore for SplitRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}
