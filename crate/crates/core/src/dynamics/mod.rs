//! Systems `ẋ = F(x, u)`, control Lyapunov certificates and the convergence
//! rate machinery built on `Γ`.

pub mod quadrature;
mod rate;

use std::ops::Deref;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use rate::{EnergyTimeMap, RateForm, RateFunction, ScalarFn};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("rate function invariant violated: {0}")]
    RateInvariant(String),
    #[error("quadrature failed: {0}")]
    Quadrature(String),
}

fn check_finite(coords: &[f64]) -> Result<(), DynamicsError> {
    match coords.iter().position(|c| !c.is_finite()) {
        Some(i) => Err(DynamicsError::NonFinite(i)),
        None => Ok(()),
    }
}

/// A point of the state space `ℝᵈ` with finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(coords: Vec<f64>) -> Result<Self, DynamicsError> {
        check_finite(&coords)?;
        Ok(Self(coords))
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl Deref for StateVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A control value in `ℝᵐ` with finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlVector(Vec<f64>);

impl ControlVector {
    pub fn new(coords: Vec<f64>) -> Result<Self, DynamicsError> {
        check_finite(&coords)?;
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ControlVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Vector field `F(x, u)`. Implementations must be deterministic.
pub trait ControlSystem: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Writes `F(x, u)` into `dx`.
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]);
}

/// A control Lyapunov function `V` with its gradient, a stabilizing feedback
/// `Û` and the decay rate `γ` it certifies: `V′(x)F(x, Û(x)) ≤ −γ(V(x))`.
pub trait ClfCertificate: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    /// Writes `Û(x)` into `out`. May be discontinuous.
    fn feedback(&self, x: &[f64], out: &mut [f64]);
    fn energy_map(&self) -> &EnergyTimeMap;

    fn rate(&self) -> &RateFunction {
        self.energy_map().rate()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_dims(
    cert: &dyn ClfCertificate,
    sys: &dyn ControlSystem,
    x: &[f64],
    u: &[f64],
) -> Result<(), DynamicsError> {
    let d = sys.state_dim();
    let m = sys.input_dim();
    if cert.state_dim() != d {
        return Err(DynamicsError::DimensionMismatch { what: "certificate state", expected: d, got: cert.state_dim() });
    }
    if cert.input_dim() != m {
        return Err(DynamicsError::DimensionMismatch { what: "certificate input", expected: m, got: cert.input_dim() });
    }
    if x.len() != d {
        return Err(DynamicsError::DimensionMismatch { what: "state", expected: d, got: x.len() });
    }
    if u.len() != m {
        return Err(DynamicsError::DimensionMismatch { what: "control", expected: m, got: u.len() });
    }
    Ok(())
}

/// `W(x, u) = V′(x)F(x, u)`.
pub fn lyapunov_derivative(
    cert: &dyn ClfCertificate,
    sys: &dyn ControlSystem,
    x: &[f64],
    u: &[f64],
) -> Result<f64, DynamicsError> {
    check_dims(cert, sys, x, u)?;
    Ok(w_unchecked(cert, sys, x, u))
}

pub(crate) fn w_unchecked(cert: &dyn ClfCertificate, sys: &dyn ControlSystem, x: &[f64], u: &[f64]) -> f64 {
    let d = x.len();
    let mut grad = vec![0.0; d];
    let mut f = vec![0.0; d];
    cert.gradient(x, &mut grad);
    sys.rhs(x, u, &mut f);
    dot(&grad, &f)
}

/// Evaluates `Û(x)` into a fresh vector.
pub fn feedback_at(cert: &dyn ClfCertificate, x: &[f64]) -> Vec<f64> {
    let mut u = vec![0.0; cert.input_dim()];
    cert.feedback(x, &mut u);
    u
}

/// `Γ⁻¹(Γ(v₀) − σt)` for the certificate's rate.
pub fn convergence_bound(cert: &dyn ClfCertificate, sigma: f64, v0: f64, t: f64) -> Result<f64, DynamicsError> {
    cert.energy_map().convergence_bound(sigma, v0, t)
}

/// Central-difference gradient of `V` with step `h = 1e-6·(1 + |xᵢ|)`.
pub fn finite_difference_gradient(cert: &dyn ClfCertificate, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * (1.0 + x[i].abs());
            probe[i] = x[i] + h;
            let up = cert.value(&probe);
            probe[i] = x[i] - h;
            let down = cert.value(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClfViolation {
    pub index: usize,
    pub x: Vec<f64>,
    /// `γ(V(x)) + W(x, Û(x))`, positive here.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClfReport {
    pub n_samples: usize,
    /// Samples at the origin, where the decrease condition is vacuous.
    pub n_skipped: usize,
    /// Largest margin seen (≤ 0 means every sample satisfied the inequality).
    pub max_margin: f64,
    pub violations: Vec<ClfViolation>,
    /// Indices of nonzero samples with `V(x) ≤ 0`.
    pub positivity_violations: Vec<usize>,
}

impl ClfReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.positivity_violations.is_empty()
    }
}

/// Checks `W(x, Û(x)) ≤ −γ(V(x))` and `V(x) > 0` at every nonzero sample.
///
/// A margin counts as a violation only when it exceeds rounding noise,
/// `1e-10·(|W| + γ)`: certificates whose inequality is tight along a manifold
/// would otherwise fail on the last bit.
pub fn verify_clf_pointwise(
    cert: &dyn ClfCertificate,
    sys: &dyn ControlSystem,
    samples: &[StateVector],
) -> Result<ClfReport, DynamicsError> {
    if samples.is_empty() {
        return Err(DynamicsError::Domain("verification needs at least one sample".into()));
    }
    let u0 = vec![0.0; sys.input_dim()];
    for s in samples {
        check_dims(cert, sys, s, &u0)?;
    }
    let rate = cert.rate();
    let per_sample: Vec<Option<(f64, bool, bool)>> = samples
        .par_iter()
        .map(|s| {
            if s.iter().all(|&c| c == 0.0) {
                return None;
            }
            let v = cert.value(s);
            let u = feedback_at(cert, s);
            let w = w_unchecked(cert, sys, s, &u);
            let g = rate.eval(v.max(0.0));
            let margin = g + w;
            let violated = !margin.is_finite() || margin > 1e-10 * (w.abs() + g.abs());
            Some((margin, violated, !(v > 0.0)))
        })
        .collect();

    let mut report = ClfReport {
        n_samples: samples.len(),
        n_skipped: 0,
        max_margin: f64::NEG_INFINITY,
        violations: Vec::new(),
        positivity_violations: Vec::new(),
    };
    for (index, entry) in per_sample.into_iter().enumerate() {
        match entry {
            None => report.n_skipped += 1,
            Some((margin, violated, not_positive)) => {
                if margin > report.max_margin || margin.is_nan() {
                    report.max_margin = margin;
                }
                if violated {
                    report.violations.push(ClfViolation { index, x: samples[index].to_vec(), margin });
                }
                if not_positive {
                    report.positivity_violations.push(index);
                }
            }
        }
    }
    Ok(report)
}
