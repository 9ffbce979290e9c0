//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// `e^A` by scaling and squaring with a 30-term Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.iter().map(|v| v.abs()).sum::<f64>();
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let b = a * scale;
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &b / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Exact flow of `ẋ = Ax + c` through the augmented matrix `[[A, c], [0, 0]]`.
pub fn affine_flow(a: &DMatrix<f64>, c: &DVector<f64>, x0: &[f64], t: f64) -> Vec<f64> {
    let n = a.nrows();
    let mut aug = DMatrix::<f64>::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, 1)).copy_from(c);
    let e = expm(&(aug * t));
    let mut z = DVector::<f64>::zeros(n + 1);
    z.rows_mut(0, n).copy_from_slice(x0);
    z[n] = 1.0;
    let y = e * z;
    y.rows(0, n).iter().copied().collect()
}

/// `ẋ = Ax + bu` of the cruise-control model with constant lag `tau`.
pub fn acc_affine(k: f64, tau: f64) -> (DMatrix<f64>, DVector<f64>) {
    let j = clf_etc::models::acc_jacobian(k, tau);
    (DMatrix::from_row_slice(3, 3, &j), DVector::from_vec(vec![0.0, 0.0, -1.0 / tau]))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Small deterministic generator for test inputs (SplitMix64).
pub struct Rng(u64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * ((self.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
    }

    pub fn point(&mut self, d: usize, r: f64) -> Vec<f64> {
        (0..d).map(|_| self.uniform(-r, r)).collect()
    }
}
