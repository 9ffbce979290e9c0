//! The four sampling policies and their firing rules.
//!
//! The engine asks a policy two things: after a control update, when it
//! should next look ([`TriggerPolicy::next_wake`]); and when it looks, whether
//! to sample again ([`next_decision`]).

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{dot, norm, ClfCertificate, ControlSystem, DynamicsError};

pub type TauFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("invalid policy: {0}")]
    Config(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Sampling at `k·period`.
    Period(f64),
    /// Explicit increasing instants after `t = 0`; once exhausted, the last
    /// gap repeats so the sequence stays unbounded.
    Instants(Vec<f64>),
}

#[derive(Clone)]
pub enum TriggerPolicy {
    EventTriggered { sigma: f64 },
    SelfTriggered { sigma: f64, tau_fn: TauFn },
    TimeTriggered { sigma: f64, schedule: Schedule },
    /// `big_m` is the non-degeneracy constant used inside the predicate.
    PeriodicEvent { sigma: f64, sigma_tilde: f64, k_big: f64, h: f64, big_m: f64 },
}

impl fmt::Debug for TriggerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EventTriggered { sigma } => f.debug_struct("EventTriggered").field("sigma", sigma).finish(),
            Self::SelfTriggered { sigma, .. } => f.debug_struct("SelfTriggered").field("sigma", sigma).finish(),
            Self::TimeTriggered { sigma, schedule } => {
                f.debug_struct("TimeTriggered").field("sigma", sigma).field("schedule", schedule).finish()
            }
            Self::PeriodicEvent { sigma, sigma_tilde, k_big, h, big_m } => f
                .debug_struct("PeriodicEvent")
                .field("sigma", sigma)
                .field("sigma_tilde", sigma_tilde)
                .field("k_big", k_big)
                .field("h", h)
                .field("big_m", big_m)
                .finish(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerReason {
    /// Initial sample at `t₀`.
    Start,
    GuardZero,
    Clock,
    PredicateFalse,
    EquilibriumFrozen,
    /// A periodic check where nothing happened.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerDecision {
    pub fire: bool,
    pub guard_value: f64,
    pub reason: TriggerReason,
}

/// What the engine waits for after a control update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Wake {
    /// The first zero of the event guard.
    OnGuard,
    /// A clock instant.
    At(f64),
}

/// Timing bookkeeping for the policies.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClockState {
    /// Time of the last control update.
    pub t_last: f64,
    /// Number of control updates so far, including the one at `t₀`.
    pub n_updates: u64,
    /// Index `k` of the last periodic check (`t = k·h`).
    pub k_check: u64,
}

fn check_sigma(sigma: f64) -> Result<(), ScheduleError> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(ScheduleError::Config(format!("σ must lie in (0, 1), got {sigma}")));
    }
    Ok(())
}

impl TriggerPolicy {
    pub fn sigma(&self) -> f64 {
        match self {
            Self::EventTriggered { sigma }
            | Self::SelfTriggered { sigma, .. }
            | Self::TimeTriggered { sigma, .. }
            | Self::PeriodicEvent { sigma, .. } => *sigma,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::EventTriggered { .. } => "event",
            Self::SelfTriggered { .. } => "self",
            Self::TimeTriggered { .. } => "time",
            Self::PeriodicEvent { .. } => "periodic-event",
        }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        check_sigma(self.sigma())?;
        match self {
            Self::EventTriggered { .. } | Self::SelfTriggered { .. } => Ok(()),
            Self::TimeTriggered { schedule, .. } => match schedule {
                Schedule::Period(p) if !(*p > 0.0 && p.is_finite()) => {
                    Err(ScheduleError::Config(format!("period must be positive, got {p}")))
                }
                Schedule::Period(_) => Ok(()),
                Schedule::Instants(ts) => {
                    if ts.is_empty() {
                        return Err(ScheduleError::Config("instant schedule is empty".into()));
                    }
                    let mut prev = 0.0;
                    for &t in ts {
                        if !(t > prev && t.is_finite()) {
                            return Err(ScheduleError::Config(format!(
                                "instants must be strictly increasing after 0, got {t} after {prev}"
                            )));
                        }
                        prev = t;
                    }
                    Ok(())
                }
            },
            Self::PeriodicEvent { sigma, sigma_tilde, k_big, h, big_m } => {
                if !(*sigma_tilde > *sigma && *sigma_tilde < 1.0) {
                    return Err(ScheduleError::Config(format!("σ̃ must lie in (σ, 1), got {sigma_tilde}")));
                }
                if !(*k_big > 1.0) {
                    return Err(ScheduleError::Config(format!("K must exceed 1, got {k_big}")));
                }
                if !(*h > 0.0 && h.is_finite()) {
                    return Err(ScheduleError::Config(format!("h must be positive, got {h}")));
                }
                if !(*big_m > 0.0 && big_m.is_finite()) {
                    return Err(ScheduleError::Config(format!("M must be positive, got {big_m}")));
                }
                Ok(())
            }
        }
    }

    /// When to look next, given the update just made at `clock.t_last` from
    /// state `x_update`.
    pub fn next_wake(&self, clock: &ClockState, x_update: &[f64]) -> Result<Wake, ScheduleError> {
        match self {
            Self::EventTriggered { .. } => Ok(Wake::OnGuard),
            Self::SelfTriggered { tau_fn, .. } => {
                let tau = tau_fn(x_update);
                if !(tau > 0.0 && tau.is_finite()) {
                    return Err(ScheduleError::Config(format!("self-triggered τ(x) must be positive, got {tau}")));
                }
                Ok(Wake::At(clock.t_last + tau))
            }
            Self::TimeTriggered { schedule, .. } => Ok(Wake::At(scheduled_instant(schedule, clock.n_updates))),
            Self::PeriodicEvent { h, .. } => Ok(Wake::At((clock.k_check + 1) as f64 * h)),
        }
    }
}

/// The `n`-th scheduled sampling instant (`n = 0` is `t₀ = 0`).
pub fn scheduled_instant(schedule: &Schedule, n: u64) -> f64 {
    match schedule {
        Schedule::Period(p) => n as f64 * p,
        Schedule::Instants(ts) => {
            if n == 0 {
                return 0.0;
            }
            let i = (n - 1) as usize;
            if i < ts.len() {
                return ts[i];
            }
            let last = ts[ts.len() - 1];
            let gap = if ts.len() >= 2 { last - ts[ts.len() - 2] } else { last };
            last + (i + 1 - ts.len()) as f64 * gap
        }
    }
}

/// `g(x) = W(x, u) + σγ(V(x))`: negative while the decrease condition holds
/// strictly, zero on the event surface.
pub fn event_guard(
    cert: &dyn ClfCertificate,
    sys: &dyn ControlSystem,
    sigma: f64,
    x: &[f64],
    u: &[f64],
) -> Result<f64, DynamicsError> {
    let w = crate::dynamics::lyapunov_derivative(cert, sys, x, u)?;
    Ok(w + sigma * cert.rate().eval(cert.value(x).max(0.0)))
}

/// `P(x, u)`: `W < −σ̃γ(V)` and `(|V′||F| + |F|²)/(M|W|) ≤ K`.
pub fn predicate_p(
    cert: &dyn ClfCertificate,
    sys: &dyn ControlSystem,
    sigma_tilde: f64,
    k_big: f64,
    big_m: f64,
    x: &[f64],
    u: &[f64],
) -> bool {
    let d = x.len();
    let mut grad = vec![0.0; d];
    let mut f = vec![0.0; d];
    cert.gradient(x, &mut grad);
    sys.rhs(x, u, &mut f);
    let w = dot(&grad, &f);
    if !(w < -sigma_tilde * cert.rate().eval(cert.value(x).max(0.0))) {
        return false;
    }
    let (ng, nf) = (norm(&grad), norm(&f));
    (ng * nf + nf * nf) <= k_big * big_m * w.abs()
}

/// Firing decision at a wake-up, with state `x` and the held control `u`.
///
/// `eps_eq` is the equilibrium threshold: below it the feedback is frozen at
/// `Û(0)` for good.
pub fn next_decision(
    policy: &TriggerPolicy,
    cert: &dyn ClfCertificate,
    sys: &dyn ControlSystem,
    x: &[f64],
    u: &[f64],
    eps_eq: f64,
) -> Result<TriggerDecision, DynamicsError> {
    let guard_value = event_guard(cert, sys, policy.sigma(), x, u)?;
    if cert.value(x) <= eps_eq {
        return Ok(TriggerDecision { fire: true, guard_value, reason: TriggerReason::EquilibriumFrozen });
    }
    let (fire, reason) = match policy {
        TriggerPolicy::EventTriggered { .. } => (guard_value >= 0.0, TriggerReason::GuardZero),
        TriggerPolicy::SelfTriggered { .. } | TriggerPolicy::TimeTriggered { .. } => (true, TriggerReason::Clock),
        TriggerPolicy::PeriodicEvent { sigma_tilde, k_big, big_m, .. } => {
            (!predicate_p(cert, sys, *sigma_tilde, *k_big, *big_m, x, u), TriggerReason::PredicateFalse)
        }
    };
    Ok(TriggerDecision { fire, guard_value, reason: if fire { reason } else { TriggerReason::None } })
}
