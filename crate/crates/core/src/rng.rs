//! Deterministic pseudo-random numbers.
//!
//! Fixture generation and the loop harness must produce identical bytes for
//! identical seeds across releases, so the generator is pinned here instead
//! of depending on an external crate whose stream may change.

/// SplitMix64. Passes through the full 64-bit state space, good enough for
/// fixture sampling.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform value in `0..bound` (`bound > 0`), via rejection sampling.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    /// `len` distinct values sampled from `0..n`, in sorted order.
    pub fn distinct_sorted(&mut self, n: usize, len: usize) -> Vec<usize> {
        assert!(len <= n);
        let mut picked = Vec::with_capacity(len);
        while picked.len() < len {
            let v = self.below(n as u64) as usize;
            if !picked.contains(&v) {
                picked.push(v);
            }
        }
        picked.sort_unstable();
        picked
    }
}
