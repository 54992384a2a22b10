//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit [`Stream`]. Child streams are
//! derived from a parent seed and a label, so adding a new consumer never
//! shifts the draws of an existing one.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct Stream {
    seed: u64,
    rng: ChaCha8Rng,
}

/// SplitMix64 finalizer; used to mix seeds with labels.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of a byte string (FNV-1a followed by a mix).
pub fn hash_label(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(h)
}

/// Derive a seed from a parent seed and a numeric key.
pub fn derive_seed(seed: u64, key: u64) -> u64 {
    mix(seed ^ mix(key))
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream identified by `label`.
    pub fn child(&self, label: &str) -> Stream {
        Stream::new(derive_seed(self.seed, hash_label(label)))
    }

    /// Independent child stream identified by `label` and an index (epoch, trial, ...).
    pub fn child_indexed(&self, label: &str, index: u64) -> Stream {
        Stream::new(derive_seed(derive_seed(self.seed, hash_label(label)), index))
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform integer in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> alloc::vec::Vec<usize> {
        let mut p: alloc::vec::Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let mut a = Stream::new(7);
        let mut b = Stream::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn children_are_independent_of_parent_consumption() {
        let a = Stream::new(3);
        let mut b = Stream::new(3);
        b.next_u64();
        assert_eq!(a.child("init").next_u64(), b.child("init").next_u64());
        assert_ne!(a.child("init").next_u64(), a.child("dropout").next_u64());
        assert_ne!(
            a.child_indexed("epoch", 0).next_u64(),
            a.child_indexed("epoch", 1).next_u64()
        );
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut s = Stream::new(1);
        let mut p = s.permutation(50);
        p.sort_unstable();
        assert!(p.iter().enumerate().all(|(i, &v)| i == v));
    }
}
