//! Seedable, platform-independent pseudo-random numbers.
//!
//! The generator is SplitMix64 in counter form. Output number `i` (1-based) of
//! a stream with seed `s` is
//!
//! ```text
//! z  = s + i · 0x9E3779B97F4A7C15            (mod 2^64)
//! z  = (z ^ (z >> 30)) · 0xBF58476D1CE4E5B9  (mod 2^64)
//! z  = (z ^ (z >> 27)) · 0x94D049BB133111EB  (mod 2^64)
//! out = z ^ (z >> 31)
//! ```
//!
//! so the full state is `(seed, position)` and is trivially checkpointed.
//! Floats use the top 53 bits; normals use Box-Muller with no cached spare,
//! which keeps the position the only piece of state.

use serde::{Deserialize, Serialize};

pub const ALGORITHM: &str = "splitmix64";

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a seed and a list of tags into a new seed. Used to derive
/// independent streams, e.g. one per (seed, epoch, sample).
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut h = mix64(seed ^ 0x6A09_E667_F3BC_C908);
    for &t in tags {
        h = mix64(h.wrapping_add(GAMMA) ^ mix64(t.wrapping_add(0x3C6E_F372_FE94_F82B)));
    }
    h
}

/// Serializable snapshot of a generator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub algorithm: String,
    pub seed: u64,
    pub position: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    position: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, position: 0 }
    }

    pub fn derived(seed: u64, tags: &[u64]) -> Self {
        Self::new(derive_seed(seed, tags))
    }

    pub fn state(&self) -> RngState {
        RngState {
            algorithm: ALGORITHM.to_string(),
            seed: self.seed,
            position: self.position,
        }
    }

    pub fn from_state(state: &RngState) -> Option<Self> {
        (state.algorithm == ALGORITHM).then_some(Self {
            seed: state.seed,
            position: state.position,
        })
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.position = self.position.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.position.wrapping_mul(GAMMA)))
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal via Box-Muller (two draws per call).
    pub fn normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `[0, n)`, unbiased by rejection. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n) - 1;
        loop {
            let x = self.next_u64();
            if x <= zone {
                return x % n;
            }
        }
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below((hi - lo + 1) as u64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}
