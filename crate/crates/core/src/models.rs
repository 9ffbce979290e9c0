//! Ready-made systems paired with their certificates.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::certificates::KnownConstants;
use crate::dynamics::{ClfCertificate, ControlSystem, DynamicsError, EnergyTimeMap, RateFunction, ScalarFn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssumptionStatus {
    SatisfiesAll,
    ViolatesNondegeneracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub name: String,
    pub state_dim: usize,
    pub input_dim: usize,
    pub parameters: BTreeMap<String, f64>,
    pub known_constants: KnownConstants,
    pub expected_status: AssumptionStatus,
    /// Half-width of the box used for pointwise certificate checks.
    pub check_radius: f64,
}

#[derive(Clone)]
pub struct Model {
    pub descriptor: ModelDescriptor,
    pub system: Arc<dyn ControlSystem>,
    pub certificate: Arc<dyn ClfCertificate>,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model").field("descriptor", &self.descriptor).finish_non_exhaustive()
    }
}

impl Model {
    fn from_parts<T: ControlSystem + ClfCertificate + 'static>(descriptor: ModelDescriptor, inner: T) -> Self {
        let inner = Arc::new(inner);
        Self { descriptor, system: inner.clone(), certificate: inner }
    }

    pub fn sys(&self) -> &dyn ControlSystem {
        self.system.as_ref()
    }

    pub fn cert(&self) -> &dyn ClfCertificate {
        self.certificate.as_ref()
    }
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn half_norm_sq(x: &[f64]) -> f64 {
    0.5 * x.iter().map(|c| c * c).sum::<f64>()
}

// ---------------------------------------------------------------------------
// Adaptive cruise control

/// Driveline lag `τ(v)` between commanded and actual acceleration.
#[derive(Clone)]
pub enum TauLag {
    Constant(f64),
    Function(ScalarFn),
}

impl TauLag {
    fn at(&self, v: f64) -> f64 {
        match self {
            TauLag::Constant(t) => *t,
            TauLag::Function(f) => f(v),
        }
    }
}

impl Default for TauLag {
    fn default() -> Self {
        TauLag::Constant(0.3)
    }
}

/// Maps between the vehicle variables `(d, v, a)` and the backstepping
/// coordinates `x₁ = d − d₀`, `x₂ = (v₀ − v) + kx₁`, `x₃ = −a + 2k(v₀ − v) + k²x₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccCoordinates {
    pub k: f64,
    pub v0: f64,
    pub d0: f64,
}

impl AccCoordinates {
    pub fn to_state(&self, d: f64, v: f64, a: f64) -> [f64; 3] {
        let k = self.k;
        let x1 = d - self.d0;
        let x2 = (self.v0 - v) + k * x1;
        let x3 = -a + 2.0 * k * (self.v0 - v) + k * k * x1;
        [x1, x2, x3]
    }

    /// `(d, v, a)` from the state.
    pub fn from_state(&self, x: &[f64]) -> [f64; 3] {
        let k = self.k;
        let d = x[0] + self.d0;
        let v = self.v0 - (x[1] - k * x[0]);
        let a = 2.0 * k * x[1] - k * k * x[0] - x[2];
        [d, v, a]
    }

    /// Speed corresponding to a state.
    pub fn speed(&self, x: &[f64]) -> f64 {
        self.v0 - (x[1] - self.k * x[0])
    }
}

struct Acc {
    coords: AccCoordinates,
    tau: TauLag,
    map: EnergyTimeMap,
}

impl ControlSystem for Acc {
    fn state_dim(&self) -> usize {
        3
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let k = self.coords.k;
        let tau = self.tau.at(self.coords.speed(x));
        dx[0] = x[1] - k * x[0];
        dx[1] = x[2] - k * x[1];
        dx[2] = k * k * (x[1] - k * x[0]) + (1.0 / tau - 2.0 * k) * (2.0 * k * x[1] - k * k * x[0] - x[2]) - u[0] / tau;
    }
}

impl ClfCertificate for Acc {
    fn state_dim(&self) -> usize {
        3
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64]) -> f64 {
        half_norm_sq(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn feedback(&self, x: &[f64], out: &mut [f64]) {
        let k = self.coords.k;
        let tau = self.tau.at(self.coords.speed(x));
        out[0] = tau * k * k * (x[1] - k * x[0]) + (1.0 - 2.0 * k * tau) * (2.0 * k * x[1] - k * k * x[0] - x[2])
            - tau * (x[0] - k * x[2]);
    }
    fn energy_map(&self) -> &EnergyTimeMap {
        &self.map
    }
}

/// Jacobian of the cruise-control field in `x` for a constant lag, row-major.
pub fn acc_jacobian(k: f64, tau: f64) -> [f64; 9] {
    let c = 1.0 / tau - 2.0 * k;
    [-k, 1.0, 0.0, 0.0, -k, 1.0, -k * k * k - c * k * k, k * k + 2.0 * k * c, -c]
}

fn spectral_norm_3(m: &[f64; 9]) -> f64 {
    nalgebra::Matrix3::from_row_slice(m).singular_values().max()
}

/// Vehicle following a platoon at speed `v0` with target gap `d0`, in
/// backstepping coordinates, with `V = ½|x|²` and `γ(v) = 2(k−1)v`.
pub fn acc_backstepping(k: f64, tau_lag: TauLag, v0: f64, d0: f64) -> Result<Model, DynamicsError> {
    if !(k > 1.0) {
        return Err(DynamicsError::Domain(format!("backstepping gain must exceed 1, got {k}")));
    }
    let rate = RateFunction::linear(2.0 * (k - 1.0))?;
    let mut parameters = params(&[("k", k), ("v0", v0), ("d0", d0)]);
    let known_constants = match &tau_lag {
        TauLag::Constant(t) => {
            if !(*t > 0.0) {
                return Err(DynamicsError::Domain(format!("lag must be positive, got {t}")));
            }
            parameters.insert("tau_lag".into(), *t);
            KnownConstants { kappa: Some(spectral_norm_3(&acc_jacobian(k, *t))), nu: Some(1.0) }
        }
        TauLag::Function(_) => KnownConstants { kappa: None, nu: Some(1.0) },
    };
    let descriptor = ModelDescriptor {
        name: "acc".into(),
        state_dim: 3,
        input_dim: 1,
        parameters,
        known_constants,
        expected_status: AssumptionStatus::SatisfiesAll,
        check_radius: 20.0,
    };
    let coords = AccCoordinates { k, v0, d0 };
    Ok(Model::from_parts(descriptor, Acc { coords, tau: tau_lag, map: EnergyTimeMap::new(rate) }))
}

/// Gap 10 m too large at matched speed.
pub fn acc_case1_state(k: f64) -> [f64; 3] {
    [10.0, 10.0 * k, 10.0 * k * k]
}

/// Speed 2 m/s too high at the right gap.
pub fn acc_case2_state(k: f64) -> [f64; 3] {
    [0.0, -2.0, -4.0 * k]
}

// ---------------------------------------------------------------------------
// Homogeneous planar system

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HomogRate {
    /// `γ(v) = v²`
    #[default]
    Square,
    /// `γ(v) = v²/2`
    HalfSquare,
}

struct Homog {
    map: EnergyTimeMap,
}

impl ControlSystem for Homog {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let (a, b) = (x[0], x[1]);
        dx[0] = -a * a * a + a * b * b;
        dx[1] = a * b * b + u[0] - a * a * b;
    }
}

impl ClfCertificate for Homog {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64]) -> f64 {
        half_norm_sq(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn feedback(&self, x: &[f64], out: &mut [f64]) {
        let (a, b) = (x[0], x[1]);
        out[0] = -b * b * b - a * b * b;
    }
    fn energy_map(&self) -> &EnergyTimeMap {
        &self.map
    }
}

/// `ẋ₁ = −x₁³ + x₁x₂²`, `ẋ₂ = x₁x₂² + u − x₁²x₂` with `V = ½|x|²` and
/// `Û(x) = −x₂³ − x₁x₂²`, for which `V′F̄ = −x₁⁴ − x₂⁴`.
pub fn homogeneous_planar(variant: HomogRate) -> Model {
    let ae = match variant {
        HomogRate::Square => 1.0,
        HomogRate::HalfSquare => 0.5,
    };
    let rate = RateFunction::power(ae, 2.0).expect("valid power rate");
    let descriptor = ModelDescriptor {
        name: "homog2d".into(),
        state_dim: 2,
        input_dim: 1,
        parameters: params(&[("rate_coefficient", ae)]),
        known_constants: KnownConstants { kappa: None, nu: Some(1.0) },
        expected_status: AssumptionStatus::SatisfiesAll,
        check_radius: 1.0,
    };
    Model::from_parts(descriptor, Homog { map: EnergyTimeMap::new(rate) })
}

// ---------------------------------------------------------------------------
// Rotating planar system without a uniform dwell time

struct ZenoPolar {
    map: EnergyTimeMap,
}

impl ControlSystem for ZenoPolar {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        dx[0] = x[1] + u[0];
        dx[1] = -x[0] + u[1];
    }
}

impl ClfCertificate for ZenoPolar {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn value(&self, x: &[f64]) -> f64 {
        half_norm_sq(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn feedback(&self, x: &[f64], out: &mut [f64]) {
        let r = x[0].hypot(x[1]);
        if r == 0.0 {
            out[0] = 0.0;
            out[1] = 0.0;
        } else {
            out[0] = -x[0] + x[1] / r;
            out[1] = -x[1] - x[0] / r;
        }
    }
    fn energy_map(&self) -> &EnergyTimeMap {
        &self.map
    }
}

/// `ẋ₁ = x₂ + u₁`, `ẋ₂ = −x₁ + u₂` with `Û(x) = −x + (x₂, −x₁)/|x|`,
/// `V = ½|x|²` and `γ(v) = 2v`. The closed-loop speed tends to 1 at the
/// origin while `V′F̄` vanishes, so the non-degeneracy condition fails.
pub fn zeno_polar(r_star: f64, phi_star: f64) -> Result<Model, DynamicsError> {
    if !(r_star > 0.0 && r_star < 1.0) {
        return Err(DynamicsError::Domain(format!("initial radius must lie in (0, 1), got {r_star}")));
    }
    let descriptor = ModelDescriptor {
        name: "zeno-polar".into(),
        state_dim: 2,
        input_dim: 2,
        parameters: params(&[("r_star", r_star), ("phi_star", phi_star)]),
        known_constants: KnownConstants { kappa: Some(1.0), nu: Some(1.0) },
        expected_status: AssumptionStatus::ViolatesNondegeneracy,
        check_radius: 1.0,
    };
    let rate = RateFunction::linear(2.0)?;
    Ok(Model::from_parts(descriptor, ZenoPolar { map: EnergyTimeMap::new(rate) }))
}

pub fn zeno_initial_state(r_star: f64, phi_star: f64) -> [f64; 2] {
    [r_star * phi_star.cos(), r_star * phi_star.sin()]
}

/// Upper bound on the first inter-event time from `|x*| = r*`:
/// `r*√(1+r*²)·arctan r* / (r*√(1+r*²) + 1 − r*²)`.
pub fn zeno_first_event_bound(r_star: f64) -> f64 {
    let s = r_star * (1.0 + r_star * r_star).sqrt();
    s * r_star.atan() / (s + 1.0 - r_star * r_star)
}

// ---------------------------------------------------------------------------
// Scalar relay

struct Relay {
    map: EnergyTimeMap,
}

impl ControlSystem for Relay {
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn rhs(&self, _x: &[f64], u: &[f64], dx: &mut [f64]) {
        dx[0] = u[0];
    }
}

impl ClfCertificate for Relay {
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64]) -> f64 {
        x[0] * x[0]
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * x[0];
    }
    fn feedback(&self, x: &[f64], out: &mut [f64]) {
        // −sgn x: the sign that actually decreases V = x²
        out[0] = if x[0] > 0.0 {
            -1.0
        } else if x[0] < 0.0 {
            1.0
        } else {
            0.0
        };
    }
    fn energy_map(&self) -> &EnergyTimeMap {
        &self.map
    }
}

/// `ẋ = u` with `Û(x) = −sgn x`, `V = x²` and `γ(v) = 2√v`: a finite-time
/// design where every trajectory reaches 0 at `t = |x₀|`.
pub fn relay_1d() -> Model {
    let descriptor = ModelDescriptor {
        name: "relay1d".into(),
        state_dim: 1,
        input_dim: 1,
        parameters: BTreeMap::new(),
        known_constants: KnownConstants { kappa: Some(0.0), nu: Some(2.0) },
        expected_status: AssumptionStatus::ViolatesNondegeneracy,
        check_radius: 3.0,
    };
    let rate = RateFunction::power(2.0, 0.5).expect("valid power rate");
    Model::from_parts(descriptor, Relay { map: EnergyTimeMap::new(rate) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{feedback_at, lyapunov_derivative};

    #[test]
    fn acc_identities_at_a_point() {
        let k = 1.01;
        let m = acc_backstepping(k, TauLag::default(), 20.0, 30.0).unwrap();
        let x = [1.5, -0.7, 2.2];
        let u = feedback_at(m.cert(), &x);
        let mut f = [0.0; 3];
        m.sys().rhs(&x, &u, &mut f);
        let want = [x[1] - k * x[0], x[2] - k * x[1], x[0] - k * x[2]];
        for i in 0..3 {
            assert!((f[i] - want[i]).abs() < 1e-12);
        }
        let w = lyapunov_derivative(m.cert(), m.sys(), &x, &u).unwrap();
        let v = m.cert().value(&x);
        let spread = (x[0] - x[1]).powi(2) + (x[0] - x[2]).powi(2) + (x[1] - x[2]).powi(2);
        assert!((w + 2.0 * (k - 1.0) * v + 0.5 * spread).abs() < 1e-12);
        assert!(acc_backstepping(1.0, TauLag::default(), 0.0, 0.0).is_err());
    }

    #[test]
    fn acc_coordinates_round_trip() {
        let c = AccCoordinates { k: 1.01, v0: 25.0, d0: 40.0 };
        let x = c.to_state(52.0, 27.0, -0.4);
        let back = c.from_state(&x);
        assert!((back[0] - 52.0).abs() < 1e-12 && (back[1] - 27.0).abs() < 1e-12 && (back[2] + 0.4).abs() < 1e-12);
        let case1 = c.to_state(50.0, 25.0, 0.0);
        let want = acc_case1_state(1.01);
        for i in 0..3 {
            assert!((case1[i] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn homog_identity() {
        let m = homogeneous_planar(HomogRate::Square);
        let x = [0.1, 0.4];
        let u = feedback_at(m.cert(), &x);
        let w = lyapunov_derivative(m.cert(), m.sys(), &x, &u).unwrap();
        assert!((w + 0.0257).abs() < 1e-15);
    }

    #[test]
    fn zeno_identities() {
        let m = zeno_polar(0.5, 0.0).unwrap();
        let x = [0.3, -0.2];
        let u = feedback_at(m.cert(), &x);
        let mut f = [0.0; 2];
        m.sys().rhs(&x, &u, &mut f);
        let r2 = x[0] * x[0] + x[1] * x[1];
        assert!(((f[0] * f[0] + f[1] * f[1]) - (2.0 * r2 + 2.0 * r2.sqrt() + 1.0)).abs() < 1e-12);
        let w = lyapunov_derivative(m.cert(), m.sys(), &x, &u).unwrap();
        assert!((w + r2).abs() < 1e-15);
        let b = zeno_first_event_bound(0.5);
        let s = 0.5 * 1.25f64.sqrt();
        assert!((b - s * 0.5f64.atan() / (s + 0.75)).abs() < 1e-15);
        assert!(zeno_polar(1.0, 0.0).is_err());
    }

    #[test]
    fn relay_rate_identity() {
        let m = relay_1d();
        for &x in &[-2.0, -0.1, 0.3, 5.0] {
            let u = feedback_at(m.cert(), &[x]);
            let w = lyapunov_derivative(m.cert(), m.sys(), &[x], &u).unwrap();
            assert!((w + 2.0 * f64::abs(x)).abs() < 1e-15);
            assert!((m.cert().rate().eval(x * x) - 2.0 * x.abs()).abs() < 1e-15);
        }
        assert_eq!(feedback_at(m.cert(), &[0.0]), vec![0.0]);
    }
}
