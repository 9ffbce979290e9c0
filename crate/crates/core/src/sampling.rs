//! Seeded low-discrepancy point sets over axis-aligned boxes.
//!
//! Points come from a Halton sequence with a Cranley–Patterson rotation drawn
//! from a seeded ChaCha stream, so the `i`-th point depends only on `(seed, i)`
//! and a longer run always extends a shorter one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

#[derive(Debug, Clone)]
pub struct HaltonBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
    shift: Vec<f64>,
}

impl HaltonBox {
    /// Panics if the box has more dimensions than supported bases (16).
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, seed: u64) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.len() <= PRIMES.len(), "at most {} dimensions", PRIMES.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = (0..lo.len()).map(|_| rng.gen::<f64>()).collect();
        Self { lo, hi, shift }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Unit-cube coordinates of point `i`.
    pub fn unit_point(&self, i: u64) -> Vec<f64> {
        (0..self.dim())
            .map(|k| {
                let s = radical_inverse(i + 1, PRIMES[k]) + self.shift[k];
                s - s.floor()
            })
            .collect()
    }

    pub fn point(&self, i: u64) -> Vec<f64> {
        self.unit_point(i)
            .into_iter()
            .enumerate()
            .map(|(k, s)| self.lo[k] + s * (self.hi[k] - self.lo[k]))
            .collect()
    }
}

/// An independent ChaCha stream keyed on `(seed, stream, index)`; used where
/// each sample needs its own reproducible randomness regardless of
/// evaluation order.
pub fn indexed_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) * 64);
    rng
}

/// A direction uniformly distributed on the unit sphere of `ℝᵈ`.
pub fn random_unit_vector<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d)
            .map(|_| {
                // Box–Muller
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        let n = crate::dynamics::norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}
