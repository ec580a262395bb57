//! Seeded pseudo-random numbers.
//!
//! The generator is pinned so that a seed reproduces the same model, split and
//! batch order on every platform:
//!
//! * state expansion: SplitMix64 applied to the 64-bit seed fills the four
//!   words of a xoshiro256** state (the reference `seed_from_u64` scheme);
//! * stream: xoshiro256** `next_u64`;
//! * `next_f64`: `(x >> 11) * 2^-53`, uniform on `[0, 1)`;
//! * `next_f32`: `(x >> 40) * 2^-24`, uniform on `[0, 1)`;
//! * `below(n)`: `(x * n) >> 64` computed in 128 bits (multiply-shift, no rejection);
//! * `shuffle`: Fisher-Yates from the last index down, `j = below(i + 1)`;
//! * `fork(stream)`: a fresh generator seeded with
//!   `splitmix64(seed ^ splitmix64(stream))`, so `(seed, epoch)` pairs get
//!   independent streams.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: Xoshiro256StarStar,
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for a numbered sub-stream of this seed.
    pub fn fork(&self, stream: u64) -> Rng {
        Rng::new(splitmix64(self.seed ^ splitmix64(stream)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n`. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn pinned_first_outputs() {
        // SplitMix64 of 0 is the first state word of the reference seeding.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        let mut a = Rng::new(0);
        let first = a.next_u64();
        let mut b = Rng::new(0);
        assert_eq!(first, b.next_u64());
        assert_ne!(first, a.next_u64());
    }

    #[test]
    fn unit_floats_in_range() {
        let mut r = Rng::new(3);
        for _ in 0..10_000 {
            let x = r.next_f32();
            assert!((0.0..1.0).contains(&x));
            let y = r.next_f64();
            assert!((0.0..1.0).contains(&y));
        }
    }

    #[test]
    fn forks_differ_by_stream() {
        let base = Rng::new(42);
        let mut a = base.fork(1);
        let mut b = base.fork(2);
        let mut a2 = base.fork(1);
        let x = a.next_u64();
        assert_ne!(x, b.next_u64());
        assert_eq!(x, a2.next_u64());
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut r = Rng::new(11);
        let mut v: Vec<u32> = (0..50).collect();
        r.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}
