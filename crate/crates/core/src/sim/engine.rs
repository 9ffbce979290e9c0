//! Closed-loop simulation: frozen-input flows between control updates, event
//! localization, and run bookkeeping.

use serde::{Deserialize, Serialize};

use super::dopri::{self, DenseStep, StepResult};
use crate::dynamics::{dot, feedback_at, norm, ClfCertificate, ControlSystem, DynamicsError};
use crate::scheduling::{next_decision, ClockState, ScheduleError, TriggerPolicy, TriggerReason, Wake};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("decrease condition fails right after sampling at t = {t}: guard = {guard:e}")]
    FreshSampleViolation { t: f64, guard: f64 },
    #[error("step size underflow at t = {0}")]
    StepUnderflow(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Defaults to `horizon/1000`.
    pub max_step: Option<f64>,
    /// Defaults to `1e-12·horizon`.
    pub event_time_tol: Option<f64>,
    pub max_events: u64,
    pub zeno_floor: f64,
    pub horizon: f64,
    /// Spacing of the recorded output grid; defaults to `horizon/1000`.
    pub output_step: Option<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-11,
            max_step: None,
            event_time_tol: None,
            max_events: 1_000_000,
            zeno_floor: 1e-9,
            horizon: 10.0,
            output_step: None,
        }
    }
}

impl IntegratorConfig {
    pub fn with_horizon(horizon: f64) -> Self {
        Self { horizon, ..Self::default() }
    }

    pub fn max_step(&self) -> f64 {
        self.max_step.unwrap_or(self.horizon / 1000.0)
    }

    pub fn event_time_tol(&self) -> f64 {
        self.event_time_tol.unwrap_or(1e-12 * self.horizon)
    }

    pub fn output_step(&self) -> f64 {
        self.output_step.unwrap_or(self.horizon / 1000.0)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("horizon", self.horizon),
            ("zeno_floor", self.zeno_floor),
            ("max_step", self.max_step()),
            ("event_time_tol", self.event_time_tol()),
            ("output_step", self.output_step()),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.max_events == 0 {
            return Err(SimError::Config("max_events must be at least 1".into()));
        }
        Ok(())
    }
}

const BLOWUP_NORM: f64 = 1e12;
const ZENO_STREAK: u32 = 10;
const PROBES: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Horizon,
    Equilibrium,
    ZenoAbort,
    Blowup,
    EventCap,
}

impl Termination {
    /// Whether the run ended abnormally.
    pub fn is_anomaly(&self) -> bool {
        matches!(self, Self::ZenoAbort | Self::Blowup | Self::EventCap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub index: usize,
    pub t: f64,
    pub x: Vec<f64>,
    /// The control applied from this instant on.
    pub u: Vec<f64>,
    /// Guard `W(x, u_prev) + σγ(V(x))` of the control being replaced.
    pub guard_value: f64,
    /// Time since the previous event; absent for the initial sample.
    pub dwell: Option<f64>,
    pub reason: TriggerReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub v: f64,
    pub w: f64,
    pub event: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<EventRecord>,
    pub termination: Termination,
    pub horizon: f64,
    pub sigma: f64,
    pub policy: String,
    /// Equilibrium threshold used for the run.
    pub eps_eq: f64,
}

impl Trajectory {
    pub fn v0(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.v)
    }

    pub fn end_time(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }
}

/// Dense output of a frozen-input flow.
#[derive(Debug, Clone)]
pub struct Segment {
    pub steps: Vec<DenseStep>,
    pub t_start: f64,
    pub t_end: f64,
    pub x_end: Vec<f64>,
    /// The state norm exceeded `1e12` at `t_end`.
    pub blowup: bool,
}

impl Segment {
    /// State at `t ∈ [t_start, t_end]`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.x_end.len()];
        if self.steps.is_empty() || t >= self.t_end {
            out.copy_from_slice(&self.x_end);
            return out;
        }
        let i = self.steps.partition_point(|s| s.t1() < t).min(self.steps.len() - 1);
        self.steps[i].eval(t, &mut out);
        out
    }
}

/// Adaptive stepping of `ẋ = F(x, u)` with `u` held fixed.
struct Stepper<'a> {
    sys: &'a dyn ControlSystem,
    u: Vec<f64>,
    t: f64,
    y: Vec<f64>,
    f0: Vec<f64>,
    h: f64,
    rtol: f64,
    atol: f64,
    max_step: f64,
}

impl<'a> Stepper<'a> {
    fn new(sys: &'a dyn ControlSystem, u: Vec<f64>, t: f64, y: Vec<f64>, cfg: &IntegratorConfig, h_hint: Option<f64>) -> Self {
        let mut s = Self {
            sys,
            u,
            t,
            f0: vec![0.0; y.len()],
            y,
            h: 0.0,
            rtol: cfg.rel_tol,
            atol: cfg.abs_tol,
            max_step: cfg.max_step(),
        };
        s.refresh_derivative();
        s.h = match h_hint {
            Some(h) => h.min(s.max_step),
            None => {
                let (sys, u) = (s.sys, &s.u);
                let f = |y: &[f64], dy: &mut [f64]| sys.rhs(y, u, dy);
                dopri::initial_step(&f, &s.y, &s.f0, s.rtol, s.atol, s.max_step)
            }
        };
        s
    }

    fn refresh_derivative(&mut self) {
        let mut f0 = vec![0.0; self.y.len()];
        self.sys.rhs(&self.y, &self.u, &mut f0);
        self.f0 = f0;
    }

    fn set_control(&mut self, u: Vec<f64>) {
        self.u = u;
        self.refresh_derivative();
    }

    fn attempt(&self, h: f64) -> StepResult {
        let (sys, u) = (self.sys, &self.u);
        let f = |y: &[f64], dy: &mut [f64]| sys.rhs(y, u, dy);
        dopri::step(&f, &self.y, &self.f0, h, self.rtol, self.atol)
    }

    fn min_step(&self) -> f64 {
        1e-15 * self.t.abs().max(1.0)
    }
}

/// Integrates `ẋ = F(x, u_frozen)` over `t_span` with dense output.
pub fn integrate_frozen(
    sys: &dyn ControlSystem,
    x0: &[f64],
    u_frozen: &[f64],
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<Segment, SimError> {
    cfg.validate()?;
    check_lengths(sys, x0, u_frozen)?;
    let (t0, t1) = t_span;
    if !(t1 >= t0) {
        return Err(SimError::Config(format!("empty time span [{t0}, {t1}]")));
    }
    let mut st = Stepper::new(sys, u_frozen.to_vec(), t0, x0.to_vec(), cfg, None);
    let mut steps = Vec::new();
    let mut blowup = false;
    while st.t < t1 {
        let mut h = st.h.min(st.max_step);
        let snap = st.t + h >= t1 - 1e-13 * t1.abs().max(1.0);
        if snap {
            h = t1 - st.t;
        }
        let res = st.attempt(h);
        if !(res.err <= 1.0) {
            st.h = h * dopri::step_factor(res.err).min(1.0);
            if !res.err.is_finite() {
                st.h = 0.25 * h;
            }
            if st.h < st.min_step() {
                return Err(SimError::StepUnderflow(st.t));
            }
            continue;
        }
        steps.push(res.dense(st.t, h, &st.y));
        st.t = if snap { t1 } else { st.t + h };
        st.y = res.y1;
        st.f0 = res.f1;
        st.h = (h * dopri::step_factor(res.err)).min(st.max_step);
        if norm(&st.y) > BLOWUP_NORM {
            blowup = true;
            break;
        }
    }
    Ok(Segment { steps, t_start: t0, t_end: st.t, x_end: st.y, blowup })
}

fn check_lengths(sys: &dyn ControlSystem, x: &[f64], u: &[f64]) -> Result<(), SimError> {
    if x.len() != sys.state_dim() {
        return Err(DynamicsError::DimensionMismatch { what: "state", expected: sys.state_dim(), got: x.len() }.into());
    }
    if u.len() != sys.input_dim() {
        return Err(DynamicsError::DimensionMismatch { what: "control", expected: sys.input_dim(), got: u.len() }.into());
    }
    Ok(())
}

/// Earliest root of `g` in `[lo, hi]` given `g(lo) < 0 ≤ g(hi)`, by the
/// Illinois variant of regula falsi with a bisection every third iteration.
/// Returns the upper end of the final bracket, where `g ≥ 0`.
pub fn locate_event<G: FnMut(f64) -> f64>(mut g: G, lo: f64, hi: f64, tol: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let (mut ga, mut gb) = (g(a), g(b));
    debug_assert!(ga < 0.0 && gb >= 0.0);
    let mut side = 0i8;
    for iter in 0..200 {
        if b - a <= tol {
            break;
        }
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let mut s = if iter % 3 == 2 { mid } else { (a * gb - b * ga) / (gb - ga) };
        if !(s > a && s < b) {
            s = mid;
        }
        let gs = g(s);
        if gs >= 0.0 {
            b = s;
            gb = gs;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        } else {
            a = s;
            ga = gs;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        }
    }
    b
}

struct Recorder {
    samples: Vec<Sample>,
    grid_dt: f64,
    next_grid: u64,
    horizon: f64,
}

impl Recorder {
    fn grid_time(&self) -> f64 {
        (self.next_grid as f64 * self.grid_dt).min(self.horizon)
    }

    /// Emits grid samples at times in `(t_from, t_to)` (or `(t_from, t_to]`
    /// when `inclusive`), with states from `state_at`.
    fn fill(
        &mut self,
        t_to: f64,
        inclusive: bool,
        mut state_at: impl FnMut(f64) -> Vec<f64>,
        cert: &dyn ClfCertificate,
        sys: &dyn ControlSystem,
        u: &[f64],
    ) {
        loop {
            if self.next_grid as f64 * self.grid_dt > self.horizon * (1.0 + 1e-12) {
                return;
            }
            let tg = self.grid_time();
            if tg > t_to || (!inclusive && tg == t_to) {
                if tg == t_to {
                    // the caller records this instant itself
                    self.next_grid += 1;
                }
                return;
            }
            if self.samples.last().map_or(false, |s| tg <= s.t) {
                self.next_grid += 1;
                continue;
            }
            let x = state_at(tg);
            self.push(tg, x, u, false, cert, sys);
            self.next_grid += 1;
        }
    }

    fn push(&mut self, t: f64, x: Vec<f64>, u: &[f64], event: bool, cert: &dyn ClfCertificate, sys: &dyn ControlSystem) {
        let v = cert.value(&x);
        let w = crate::dynamics::w_unchecked(cert, sys, &x, u);
        self.samples.push(Sample { t, x, u: u.to_vec(), v, w, event });
    }
}

fn guard_value(cert: &dyn ClfCertificate, sys: &dyn ControlSystem, sigma: f64, x: &[f64], u: &[f64]) -> f64 {
    let d = x.len();
    let mut grad = vec![0.0; d];
    let mut f = vec![0.0; d];
    cert.gradient(x, &mut grad);
    sys.rhs(x, u, &mut f);
    dot(&grad, &f) + sigma * cert.rate().eval(cert.value(x).max(0.0))
}

enum Advance {
    Reached,
    Root { t: f64, x: Vec<f64>, guard: f64 },
    Blowup,
}

/// Simulates the sampled-data closed loop under `policy` from `x0` at `t = 0`.
pub fn run_closed_loop(
    sys: &dyn ControlSystem,
    cert: &dyn ClfCertificate,
    policy: &TriggerPolicy,
    x0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    policy.validate()?;
    let zero_u = vec![0.0; sys.input_dim()];
    check_lengths(sys, x0, &zero_u)?;
    if cert.state_dim() != sys.state_dim() || cert.input_dim() != sys.input_dim() {
        return Err(SimError::Config("certificate and system dimensions differ".into()));
    }
    if let Some(i) = x0.iter().position(|c| !c.is_finite()) {
        return Err(DynamicsError::NonFinite(i).into());
    }

    let sigma = policy.sigma();
    let horizon = cfg.horizon;
    let v0 = cert.value(x0);
    let eps_eq = (1e-12 * v0).max(1e-24);
    let origin = vec![0.0; sys.state_dim()];
    let u_origin = feedback_at(cert, &origin);

    let mut rec = Recorder { samples: Vec::new(), grid_dt: cfg.output_step(), next_grid: 1, horizon };
    let mut events: Vec<EventRecord> = Vec::new();
    let finish = |rec: Recorder, events: Vec<EventRecord>, termination: Termination| Trajectory {
        samples: rec.samples,
        events,
        termination,
        horizon,
        sigma,
        policy: policy.name().to_string(),
        eps_eq,
    };

    if v0 <= eps_eq {
        rec.push(0.0, x0.to_vec(), &u_origin, true, cert, sys);
        events.push(EventRecord {
            index: 0,
            t: 0.0,
            x: x0.to_vec(),
            u: u_origin.clone(),
            guard_value: guard_value(cert, sys, sigma, x0, &u_origin),
            dwell: None,
            reason: TriggerReason::EquilibriumFrozen,
        });
        return Ok(finish(rec, events, Termination::Equilibrium));
    }

    let u0 = feedback_at(cert, x0);
    let g0 = guard_value(cert, sys, sigma, x0, &u0);
    if !(g0 < 0.0) {
        return Err(SimError::FreshSampleViolation { t: 0.0, guard: g0 });
    }
    rec.push(0.0, x0.to_vec(), &u0, true, cert, sys);
    events.push(EventRecord {
        index: 0,
        t: 0.0,
        x: x0.to_vec(),
        u: u0.clone(),
        guard_value: g0,
        dwell: None,
        reason: TriggerReason::Start,
    });

    let mut st = Stepper::new(sys, u0, 0.0, x0.to_vec(), cfg, None);
    let mut clock = ClockState { t_last: 0.0, n_updates: 1, k_check: 0 };
    let mut zeno_streak = 0u32;
    let mut x_update = x0.to_vec();
    let t_tol = cfg.event_time_tol();

    let termination = loop {
        if st.t >= horizon {
            break Termination::Horizon;
        }
        let wake = policy.next_wake(&clock, &x_update)?;
        let (target, monitor) = match wake {
            Wake::OnGuard => (horizon, true),
            Wake::At(tw) if tw <= horizon * (1.0 + 1e-12) => (tw, false),
            Wake::At(_) => (horizon, false),
        };
        let outcome = advance(&mut st, target, monitor, sigma, cert, t_tol, &mut rec)?;
        let (t_hit, x_hit, decision) = match outcome {
            Advance::Blowup => {
                let (t, y, u) = (st.t, st.y.clone(), st.u.clone());
                rec.push(t, y, &u, false, cert, sys);
                break Termination::Blowup;
            }
            Advance::Reached => {
                let is_wake = matches!(wake, Wake::At(tw) if tw <= horizon * (1.0 + 1e-12));
                if !is_wake {
                    let (t, y, u) = (st.t, st.y.clone(), st.u.clone());
                    if rec.samples.last().map_or(true, |s| s.t < t) {
                        rec.push(t, y, &u, false, cert, sys);
                    }
                    break Termination::Horizon;
                }
                let decision = next_decision(policy, cert, sys, &st.y, &st.u, eps_eq)?;
                if !decision.fire {
                    clock.k_check += 1;
                    continue;
                }
                (st.t, st.y.clone(), decision)
            }
            Advance::Root { t, x, guard } => {
                let reason =
                    if cert.value(&x) <= eps_eq { TriggerReason::EquilibriumFrozen } else { TriggerReason::GuardZero };
                st.t = t;
                st.y = x.clone();
                (t, x, crate::scheduling::TriggerDecision { fire: true, guard_value: guard, reason })
            }
        };

        // control update at t_hit
        if matches!(policy, TriggerPolicy::PeriodicEvent { .. }) {
            clock.k_check += 1;
        }
        let dwell = t_hit - clock.t_last;
        let frozen = decision.reason == TriggerReason::EquilibriumFrozen;
        let u_new = if frozen { u_origin.clone() } else { feedback_at(cert, &x_hit) };
        events.push(EventRecord {
            index: events.len(),
            t: t_hit,
            x: x_hit.clone(),
            u: u_new.clone(),
            guard_value: decision.guard_value,
            dwell: Some(dwell),
            reason: decision.reason,
        });
        rec.push(t_hit, x_hit.clone(), &u_new, true, cert, sys);
        if frozen {
            break Termination::Equilibrium;
        }
        let g_new = guard_value(cert, sys, sigma, &x_hit, &u_new);
        if !(g_new < 0.0) {
            return Err(SimError::FreshSampleViolation { t: t_hit, guard: g_new });
        }
        zeno_streak = if dwell < cfg.zeno_floor { zeno_streak + 1 } else { 0 };
        if zeno_streak >= ZENO_STREAK {
            break Termination::ZenoAbort;
        }
        if events.len() as u64 >= cfg.max_events {
            break Termination::EventCap;
        }
        clock.t_last = t_hit;
        clock.n_updates += 1;
        x_update = x_hit;
        st.set_control(u_new);
    };
    Ok(finish(rec, events, termination))
}

/// Integrates from the stepper's state to `target`, recording grid samples.
/// With `monitor`, stops at the first zero of the event guard instead.
fn advance(
    st: &mut Stepper<'_>,
    target: f64,
    monitor: bool,
    sigma: f64,
    cert: &dyn ClfCertificate,
    t_tol: f64,
    rec: &mut Recorder,
) -> Result<Advance, SimError> {
    let sys = st.sys;
    let d = st.y.len();
    let mut g_start = if monitor { guard_value(cert, sys, sigma, &st.y, &st.u) } else { 0.0 };
    while st.t < target {
        let mut h = st.h.min(st.max_step);
        let snap = st.t + h >= target - 1e-13 * target.abs().max(1.0);
        if snap {
            h = target - st.t;
        }
        if h <= 0.0 {
            st.t = target;
            break;
        }
        let res = st.attempt(h);
        if !(res.err <= 1.0) {
            st.h = if res.err.is_finite() { h * dopri::step_factor(res.err).min(1.0) } else { 0.25 * h };
            if st.h < st.min_step() {
                return Err(SimError::StepUnderflow(st.t));
            }
            continue;
        }
        let dense = res.dense(st.t, h, &st.y);
        let t_next = if snap { target } else { st.t + h };

        if monitor {
            let mut probe = vec![0.0; d];
            let mut times = [0.0; PROBES];
            let mut values = [0.0; PROBES];
            for i in 0..PROBES {
                let ti = if i + 1 == PROBES { t_next } else { st.t + h * (i + 1) as f64 / PROBES as f64 };
                if i + 1 == PROBES {
                    probe.copy_from_slice(&res.y1);
                } else {
                    dense.eval(ti, &mut probe);
                }
                times[i] = ti;
                values[i] = guard_value(cert, sys, sigma, &probe, &st.u);
            }
            let mut changes = 0;
            let mut prev_neg = g_start < 0.0;
            let mut first = None;
            for (i, &g) in values.iter().enumerate() {
                let neg = g < 0.0;
                if neg != prev_neg {
                    changes += 1;
                    if first.is_none() && !neg {
                        first = Some(i);
                    }
                }
                prev_neg = neg;
            }
            if changes > 1 && h > 64.0 * st.min_step() {
                st.h = 0.5 * h;
                continue;
            }
            if let Some(j) = first {
                let t_lo = if j == 0 { st.t } else { times[j - 1] };
                let (t_root, x_root, g_root) = refine_root(st, &dense, &res, t_lo, times[j], t_next, g_start, sigma, cert, t_tol);
                let u = st.u.clone();
                rec.fill(t_root, false, |t| eval_dense(&dense, t, d), cert, sys, &u);
                st.h = h;
                return Ok(Advance::Root { t: t_root, x: x_root, guard: g_root });
            }
            g_start = values[PROBES - 1];
        }

        let u = st.u.clone();
        rec.fill(t_next, true, |t| if t >= t_next { res.y1.clone() } else { eval_dense(&dense, t, d) }, cert, sys, &u);
        st.t = t_next;
        st.y = res.y1;
        st.f0 = res.f1;
        st.h = (h * dopri::step_factor(res.err)).min(st.max_step);
        if norm(&st.y) > BLOWUP_NORM {
            return Ok(Advance::Blowup);
        }
    }
    Ok(Advance::Reached)
}

fn eval_dense(dense: &DenseStep, t: f64, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    dense.eval(t, &mut out);
    out
}

/// Finds the guard root inside an accepted step starting at `st.t`.
///
/// The state at a trial time `s` is recomputed by a single Runge–Kutta step
/// from the step's start to `s`, so the located event inherits the
/// integrator's accuracy rather than the interpolant's. If the re-stepped
/// guard does not bracket a root, the root of the interpolated guard is used
/// and the state re-anchored once.
#[allow(clippy::too_many_arguments)]
fn refine_root(
    st: &Stepper<'_>,
    dense: &DenseStep,
    accepted: &StepResult,
    t_lo: f64,
    t_hi: f64,
    t_end: f64,
    g_start: f64,
    sigma: f64,
    cert: &dyn ClfCertificate,
    t_tol: f64,
) -> (f64, Vec<f64>, f64) {
    let sys = st.sys;
    let d = st.y.len();
    let restep = |s: f64| -> Vec<f64> {
        if s <= st.t {
            st.y.clone()
        } else if s >= t_end {
            accepted.y1.clone()
        } else {
            st.attempt(s - st.t).y1
        }
    };
    let phi = |s: f64| guard_value(cert, sys, sigma, &restep(s), &st.u);

    let (mut lo, mut hi) = (t_lo, t_hi);
    if phi(lo) >= 0.0 {
        lo = st.t;
    }
    let mut ghi = phi(hi);
    if ghi < 0.0 {
        hi = t_end;
        ghi = phi(hi);
    }
    let bracketed = g_start < 0.0 && phi(lo) < 0.0 && ghi >= 0.0;
    let t_root = if bracketed {
        locate_event(phi, lo, hi, t_tol)
    } else {
        let g_dense = |s: f64| guard_value(cert, sys, sigma, &eval_dense(dense, s, d), &st.u);
        if g_dense(t_lo) < 0.0 && g_dense(t_hi) >= 0.0 {
            locate_event(g_dense, t_lo, t_hi, t_tol)
        } else {
            t_hi
        }
    };
    let x = restep(t_root);
    let g = guard_value(cert, sys, sigma, &x, &st.u);
    (t_root, x, g)
}
