//! Dormand–Prince 5(4) with Hairer's fourth-order continuous extension.

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// An autonomous right-hand side `y′ = f(y)`.
pub trait Rhs {
    fn eval(&self, y: &[f64], dy: &mut [f64]);
}

impl<F: Fn(&[f64], &mut [f64])> Rhs for F {
    fn eval(&self, y: &[f64], dy: &mut [f64]) {
        self(y, dy)
    }
}

/// One attempted step from `(t, y)` with size `h`.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub y1: Vec<f64>,
    /// Derivative at the new point (first stage of the next step).
    pub f1: Vec<f64>,
    /// Scaled RMS error estimate; the step is acceptable when ≤ 1.
    pub err: f64,
    ks: [Vec<f64>; 7],
}

/// Polynomial interpolant on an accepted step.
#[derive(Debug, Clone)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    r: [Vec<f64>; 5],
}

impl DenseStep {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn eval(&self, t: f64, out: &mut [f64]) {
        let theta = (t - self.t0) / self.h;
        let theta1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.r;
        for i in 0..out.len() {
            out[i] = r1[i] + theta * (r2[i] + theta1 * (r3[i] + theta * (r4[i] + theta1 * r5[i])));
        }
    }
}

pub fn error_norm(y0: &[f64], y1: &[f64], err: &[f64], rtol: f64, atol: f64) -> f64 {
    let n = y0.len().max(1);
    let sum: f64 = (0..y0.len())
        .map(|i| {
            let sc = atol + rtol * y0[i].abs().max(y1[i].abs());
            (err[i] / sc).powi(2)
        })
        .sum();
    (sum / n as f64).sqrt()
}

/// Takes one step of size `h` from `y` with `f0 = f(y)` already known.
pub fn step<R: Rhs + ?Sized>(f: &R, y: &[f64], f0: &[f64], h: f64, rtol: f64, atol: f64) -> StepResult {
    let n = y.len();
    let mut tmp = vec![0.0; n];
    let k1 = f0.to_vec();
    let stage = |tmp: &mut Vec<f64>, coeffs: &[(f64, &Vec<f64>)]| {
        for i in 0..n {
            tmp[i] = y[i] + h * coeffs.iter().map(|(a, k)| a * k[i]).sum::<f64>();
        }
    };
    let mut k2 = vec![0.0; n];
    stage(&mut tmp, &[(A21, &k1)]);
    f.eval(&tmp, &mut k2);
    let mut k3 = vec![0.0; n];
    stage(&mut tmp, &[(A31, &k1), (A32, &k2)]);
    f.eval(&tmp, &mut k3);
    let mut k4 = vec![0.0; n];
    stage(&mut tmp, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
    f.eval(&tmp, &mut k4);
    let mut k5 = vec![0.0; n];
    stage(&mut tmp, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
    f.eval(&tmp, &mut k5);
    let mut k6 = vec![0.0; n];
    stage(&mut tmp, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]);
    f.eval(&tmp, &mut k6);
    let mut y1 = vec![0.0; n];
    stage(&mut y1, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
    let mut k7 = vec![0.0; n];
    f.eval(&y1, &mut k7);
    let err_vec: Vec<f64> = (0..n)
        .map(|i| h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]))
        .collect();
    let err = error_norm(y, &y1, &err_vec, rtol, atol);
    StepResult { y1, f1: k7.clone(), err, ks: [k1, k2, k3, k4, k5, k6, k7] }
}

impl StepResult {
    pub fn dense(&self, t0: f64, h: f64, y0: &[f64]) -> DenseStep {
        let n = y0.len();
        let [k1, _, k3, k4, k5, k6, k7] = &self.ks;
        let r1 = y0.to_vec();
        let r2: Vec<f64> = (0..n).map(|i| self.y1[i] - y0[i]).collect();
        let r3: Vec<f64> = (0..n).map(|i| h * k1[i] - r2[i]).collect();
        let r4: Vec<f64> = (0..n).map(|i| r2[i] - h * k7[i] - r3[i]).collect();
        let r5: Vec<f64> = (0..n)
            .map(|i| h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]))
            .collect();
        DenseStep { t0, h, r: [r1, r2, r3, r4, r5] }
    }
}

/// Step-size factor after a step with scaled error `err`.
pub fn step_factor(err: f64) -> f64 {
    if err == 0.0 {
        return 5.0;
    }
    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
}

/// Hairer's starting step heuristic.
pub fn initial_step<R: Rhs + ?Sized>(f: &R, y: &[f64], f0: &[f64], rtol: f64, atol: f64, max_step: f64) -> f64 {
    let n = y.len();
    let sc: Vec<f64> = y.iter().map(|v| atol + rtol * v.abs()).collect();
    let rms = |v: &[f64]| (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt();
    let d0 = rms(y);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(max_step);
    let y1: Vec<f64> = (0..n).map(|i| y[i] + h0 * f0[i]).collect();
    let mut f1 = vec![0.0; n];
    f.eval(&y1, &mut f1);
    let diff: Vec<f64> = (0..n).map(|i| f1[i] - f0[i]).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    (100.0 * h0).min(h1).min(max_step)
}
