//! Decay-rate functions `γ` and the energy-time map `Γ(s) = ∫₁ˢ dv/γ(v)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::quadrature;
use super::DynamicsError;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Analytic shape of a rate function, when one is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum RateForm {
    /// `γ(v) = æ·v`
    Linear { ae: f64 },
    /// `γ(v) = æ·vᵃ`, `a > 0`, `a ≠ 1`
    Power { ae: f64, a: f64 },
    Custom,
}

/// A continuous rate function `γ: [0, ∞) → [0, ∞)` with `γ(v) > 0` for `v > 0`.
#[derive(Clone)]
pub struct RateFunction {
    form: RateForm,
    gamma: Option<ScalarFn>,
    gamma_prime: Option<ScalarFn>,
    monotone_nondecreasing: bool,
}

impl fmt::Debug for RateFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RateFunction")
            .field("form", &self.form)
            .field("has_derivative", &self.has_derivative())
            .field("monotone_nondecreasing", &self.monotone_nondecreasing)
            .finish()
    }
}

impl RateFunction {
    pub fn linear(ae: f64) -> Result<Self, DynamicsError> {
        if !(ae > 0.0 && ae.is_finite()) {
            return Err(DynamicsError::Domain(format!("linear rate needs æ > 0, got {ae}")));
        }
        Ok(Self { form: RateForm::Linear { ae }, gamma: None, gamma_prime: None, monotone_nondecreasing: true })
    }

    /// `γ(v) = æ·vᵃ`. `a = 1` collapses to [`RateFunction::linear`].
    pub fn power(ae: f64, a: f64) -> Result<Self, DynamicsError> {
        if !(ae > 0.0 && ae.is_finite()) {
            return Err(DynamicsError::Domain(format!("power rate needs æ > 0, got {ae}")));
        }
        if !(a > 0.0 && a.is_finite()) {
            return Err(DynamicsError::Domain(format!("power rate needs a > 0, got {a}")));
        }
        if a == 1.0 {
            return Self::linear(ae);
        }
        Ok(Self { form: RateForm::Power { ae, a }, gamma: None, gamma_prime: None, monotone_nondecreasing: true })
    }

    pub fn custom(gamma: ScalarFn, gamma_prime: Option<ScalarFn>, monotone_nondecreasing: bool) -> Self {
        Self { form: RateForm::Custom, gamma: Some(gamma), gamma_prime, monotone_nondecreasing }
    }

    pub fn form(&self) -> RateForm {
        self.form
    }

    pub fn is_monotone(&self) -> bool {
        self.monotone_nondecreasing
    }

    pub fn has_derivative(&self) -> bool {
        !matches!(self.form, RateForm::Custom) || self.gamma_prime.is_some()
    }

    pub fn eval(&self, v: f64) -> f64 {
        match self.form {
            RateForm::Linear { ae } => ae * v,
            RateForm::Power { ae, a } => ae * v.max(0.0).powf(a),
            RateForm::Custom => (self.gamma.as_ref().expect("custom rate has γ"))(v),
        }
    }

    /// `γ′(v)` when available.
    pub fn derivative(&self, v: f64) -> Option<f64> {
        match self.form {
            RateForm::Linear { ae } => Some(ae),
            RateForm::Power { ae, a } => Some(ae * a * v.max(0.0).powf(a - 1.0)),
            RateForm::Custom => self.gamma_prime.as_ref().map(|g| g(v)),
        }
    }

    /// Sampled check of the rate-function invariants on a log grid over
    /// `[v_min, v_max]`: positivity, the declared monotonicity, and agreement
    /// of `γ′` with central differences.
    pub fn validate(&self, v_min: f64, v_max: f64, n: usize) -> Result<(), DynamicsError> {
        if !(v_min > 0.0 && v_max > v_min) || n < 2 {
            return Err(DynamicsError::Domain("validation grid needs 0 < v_min < v_max, n ≥ 2".into()));
        }
        let ratio = (v_max / v_min).ln();
        let grid: Vec<f64> = (0..n).map(|i| v_min * (ratio * i as f64 / (n - 1) as f64).exp()).collect();
        let mut prev: Option<f64> = None;
        for &v in &grid {
            let g = self.eval(v);
            if !(g > 0.0 && g.is_finite()) {
                return Err(DynamicsError::RateInvariant(format!("γ({v}) = {g} is not positive")));
            }
            if self.monotone_nondecreasing {
                if let Some(p) = prev {
                    if g < p * (1.0 - 1e-12) {
                        return Err(DynamicsError::RateInvariant(format!(
                            "γ declared non-decreasing but γ({v}) = {g} < {p}"
                        )));
                    }
                }
            }
            prev = Some(g);
            if let Some(d) = self.derivative(v) {
                let h = 1e-6 * v.max(1e-3);
                let lo = (v - h).max(0.0);
                let fd = (self.eval(v + h) - self.eval(lo)) / (v + h - lo);
                let scale = 1.0 + d.abs() + g.abs() / v;
                if (fd - d).abs() > 1e-4 * scale {
                    return Err(DynamicsError::RateInvariant(format!(
                        "γ′({v}) = {d} disagrees with finite difference {fd}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The map `Γ` for a given rate, with its limits `Γ̲ = lim_{s→0} Γ(s)` and
/// `Γ̄ = lim_{s→∞} Γ(s)` (possibly infinite).
#[derive(Debug, Clone)]
pub struct EnergyTimeMap {
    rate: RateFunction,
    lower_limit: f64,
    upper_limit: f64,
}

const QUAD_REL_TOL: f64 = 1e-10;
const INVERSE_REL_TOL: f64 = 1e-12;

impl EnergyTimeMap {
    pub fn new(rate: RateFunction) -> Self {
        let (lower_limit, upper_limit) = match rate.form {
            RateForm::Linear { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            RateForm::Power { ae, a } => {
                let lim = 1.0 / (ae * (a - 1.0));
                if a > 1.0 {
                    (f64::NEG_INFINITY, lim)
                } else {
                    (lim, f64::INFINITY)
                }
            }
            RateForm::Custom => (f64::NEG_INFINITY, f64::INFINITY),
        };
        Self { rate, lower_limit, upper_limit }
    }

    /// Custom rates whose limits are known analytically.
    pub fn with_limits(rate: RateFunction, lower_limit: f64, upper_limit: f64) -> Self {
        Self { rate, lower_limit, upper_limit }
    }

    pub fn rate(&self) -> &RateFunction {
        &self.rate
    }

    pub fn lower_limit(&self) -> f64 {
        self.lower_limit
    }

    pub fn upper_limit(&self) -> f64 {
        self.upper_limit
    }

    /// `Γ(s)`; closed form for linear and power rates, quadrature otherwise.
    pub fn gamma_big(&self, s: f64) -> Result<f64, DynamicsError> {
        if !(s > 0.0) || s.is_nan() {
            return Err(DynamicsError::Domain(format!("Γ(s) needs s > 0, got {s}")));
        }
        match self.rate.form {
            RateForm::Linear { ae } => Ok(s.ln() / ae),
            RateForm::Power { ae, a } => Ok(-((1.0 - a) * s.ln()).exp_m1() / (ae * (a - 1.0))),
            RateForm::Custom => self.gamma_big_quadrature(s),
        }
    }

    /// `Γ(s)` by adaptive quadrature regardless of the rate's analytic form,
    /// integrating `eᵘ/γ(eᵘ)` over `u ∈ [0, ln s]`.
    pub fn gamma_big_quadrature(&self, s: f64) -> Result<f64, DynamicsError> {
        if !(s > 0.0) || s.is_nan() {
            return Err(DynamicsError::Domain(format!("Γ(s) needs s > 0, got {s}")));
        }
        if !s.is_finite() {
            return Ok(self.upper_limit);
        }
        let rate = &self.rate;
        let integrand = |u: f64| {
            let v = u.exp();
            v / rate.eval(v)
        };
        quadrature::integrate(integrand, 0.0, s.ln(), QUAD_REL_TOL, 1e-300)
            .map(|r| r.value)
            .map_err(|e| DynamicsError::Quadrature(e.to_string()))
    }

    /// `Γ⁻¹(r)`, clamped to `0` for `r ≤ Γ̲`.
    pub fn gamma_big_inverse(&self, r: f64) -> Result<f64, DynamicsError> {
        if r.is_nan() {
            return Err(DynamicsError::Domain("Γ⁻¹ of NaN".into()));
        }
        if r >= self.upper_limit {
            return Err(DynamicsError::Domain(format!("Γ⁻¹(r) needs r < Γ̄ = {}, got {r}", self.upper_limit)));
        }
        if r <= self.lower_limit {
            return Ok(0.0);
        }
        match self.rate.form {
            RateForm::Linear { ae } => Ok((ae * r).exp()),
            RateForm::Power { ae, a } => Ok(((-ae * (a - 1.0) * r).ln_1p() / (1.0 - a)).exp()),
            RateForm::Custom => self.invert_by_bisection(r),
        }
    }

    fn invert_by_bisection(&self, r: f64) -> Result<f64, DynamicsError> {
        // Γ(1) = 0 splits the search into s < 1 and s > 1.
        let (mut lo, mut hi) = if r < 0.0 { (0.5, 1.0) } else { (1.0, 2.0) };
        if r < 0.0 {
            while self.gamma_big(lo)? > r {
                hi = lo;
                lo *= 0.5;
                if lo < 1e-300 {
                    // Γ̲ is finite and r lies at or below it within resolution.
                    return Ok(0.0);
                }
            }
        } else {
            while self.gamma_big(hi)? < r {
                lo = hi;
                hi *= 2.0;
                if hi > 1e300 {
                    return Err(DynamicsError::Domain(format!("Γ⁻¹({r}): r is not below Γ̄")));
                }
            }
        }
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= INVERSE_REL_TOL * mid || mid <= lo || mid >= hi {
                break;
            }
            if self.gamma_big(mid)? < r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Upper bound `Γ⁻¹(Γ(v₀) − σt)` on `V(x(t))` under the decrease
    /// condition `V̇ ≤ −σγ(V)`.
    pub fn convergence_bound(&self, sigma: f64, v0: f64, t: f64) -> Result<f64, DynamicsError> {
        if v0 < 0.0 || v0.is_nan() {
            return Err(DynamicsError::Domain(format!("initial level must be ≥ 0, got {v0}")));
        }
        if t < 0.0 || t.is_nan() {
            return Err(DynamicsError::Domain(format!("elapsed time must be ≥ 0, got {t}")));
        }
        if v0 == 0.0 {
            return Ok(0.0);
        }
        if t == 0.0 {
            return Ok(v0);
        }
        let r = self.gamma_big(v0)? - sigma * t;
        self.gamma_big_inverse(r)
    }
}
