//! Seeded randomness.
//!
//! All stochastic code paths (noise draws, probe vectors, initializers,
//! dataset synthesis) take an explicit [`SeededRng`] so that a run is a pure
//! function of its seeds. ChaCha8 keeps the stream identical across
//! platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct SeededRng(ChaCha8Rng);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Child rng for a labelled subtask. Children are independent of the
    /// parent stream, so parallel subtasks can be reseeded without
    /// coordinating draw order.
    pub fn derive(&self, parts: &[u64]) -> SeededRng {
        let mut state = self.0.get_seed();
        for (i, part) in parts.iter().enumerate() {
            let mixed = splitmix64(part.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1)));
            for (j, byte) in mixed.to_le_bytes().iter().enumerate() {
                state[(i * 8 + j) % 32] ^= *byte;
            }
        }
        SeededRng(ChaCha8Rng::from_seed(state))
    }

    pub fn normal_f32(&mut self) -> f32 {
        StandardNormal.sample(&mut self.0)
    }

    pub fn normal_f64(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }

    /// +1 or -1 with equal probability.
    pub fn rademacher(&mut self) -> f32 {
        if self.0.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn uniform_f32(&mut self) -> f32 {
        self.0.random::<f32>()
    }

    pub fn uniform_in(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.0.random::<f32>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    pub fn u64(&mut self) -> u64 {
        self.0.random()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.0.random_range(0..=i);
            items.swap(i, j);
        }
    }
}

/// Deterministic seed for a (root, labels...) tuple. Used to give every
/// grid point / trial its own noise stream so that parallel execution and
/// re-runs agree.
pub fn derive_seed(root: u64, parts: &[u64]) -> u64 {
    let mut acc = splitmix64(root);
    for part in parts {
        acc = splitmix64(acc ^ splitmix64(*part));
    }
    acc
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
