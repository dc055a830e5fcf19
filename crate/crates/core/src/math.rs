//! Float helpers that work under both `std` and `no_std`, plus the seeded
//! random-number plumbing shared by the RANSAC classifier and the synthetic
//! renderer.

#![allow(clippy::excessive_precision)]

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub const PI: f64 = core::f64::consts::PI;

macro_rules! shim {
    ($name:ident, $libm:ident, 1) => {
        #[inline]
        pub fn $name(x: f64) -> f64 {
            #[cfg(feature = "std")]
            {
                x.$name()
            }
            #[cfg(not(feature = "std"))]
            {
                libm::$libm(x)
            }
        }
    };
    ($name:ident, $libm:ident, 2) => {
        #[inline]
        pub fn $name(x: f64, y: f64) -> f64 {
            #[cfg(feature = "std")]
            {
                x.$name(y)
            }
            #[cfg(not(feature = "std"))]
            {
                libm::$libm(x, y)
            }
        }
    };
}

shim!(sqrt, sqrt, 1);
shim!(sin, sin, 1);
shim!(cos, cos, 1);
shim!(ln, log, 1);
shim!(floor, floor, 1);
shim!(ceil, ceil, 1);
shim!(round, round, 1);
shim!(atan2, atan2, 2);
shim!(hypot, hypot, 2);

/// Deterministic stream of pseudo-random numbers, seeded explicitly.
///
/// Every random draw in the crate flows through this type so that results
/// are reproducible across platforms and thread counts.
pub struct SeededRng(ChaCha8Rng);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Derives an independent child stream; used to give each trial or
    /// candidate its own seed so evaluation order cannot matter.
    pub fn child(seed: u64, index: u64) -> Self {
        Self::new(seed ^ splitmix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform draw from [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw from [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Rejection sampling keeps the distribution exactly uniform.
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Standard normal draw (Box-Muller; two uniforms per sample).
    pub fn gaussian(&mut self) -> f64 {
        let u1 = loop {
            let u = self.uniform();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.uniform();
        sqrt(-2.0 * ln(u1)) * cos(2.0 * PI * u2)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Nearest-rank percentile of an unsorted sample; `p` in [0, 100].
pub fn percentile(values: &mut alloc::vec::Vec<f64>, p: f64) -> f64 {
    assert!(!values.is_empty());
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let rank = ceil(p / 100.0 * values.len() as f64) as usize;
    values[rank.clamp(1, values.len()) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = SeededRng::new(1);
        for _ in 0..1000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..32 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = SeededRng::new(7);
        let n = 20_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            let g = rng.gaussian();
            sum += g;
            sum2 += g * g;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn percentile_nearest_rank() {
        let mut v = alloc::vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&mut v, 50.0), 2.0);
        assert_eq!(percentile(&mut v, 100.0), 4.0);
        assert_eq!(percentile(&mut v, 1.0), 1.0);
    }
}
