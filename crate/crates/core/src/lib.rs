//! Event-triggered, self-triggered, time-triggered and periodic event-triggered
//! stabilization from control Lyapunov functions with a prescribed decay rate.
//!
//! A controller is described by a [`ControlSystem`](dynamics::ControlSystem)
//! `ẋ = F(x, u)` together with a [`ClfCertificate`](dynamics::ClfCertificate):
//! a Lyapunov function `V`, its gradient, a feedback map `Û` and a rate
//! function `γ` such that `V′(x)F(x, Û(x)) ≤ −γ(V(x))`. Sampling the feedback
//! and holding it constant is safe as long as the decrease condition
//! `V̇ ≤ −σγ(V)` keeps holding, and the crate provides
//!
//! * the energy-time map `Γ(s) = ∫₁ˢ dv/γ(v)` and its inverse ([`dynamics`]),
//! * sampled estimates of the Lipschitz and non-degeneracy constants that
//!   enter the dwell-time bounds ([`certificates`]),
//! * the dwell-time formulas themselves ([`dwell`]),
//! * the four sampling policies ([`scheduling`]),
//! * a hybrid simulator with precise event localization ([`sim`]),
//! * ready-made models ([`models`]) and the experiment front end used by
//!   the `clf-etc` binary ([`experiment`]).

pub mod certificates;
pub mod dwell;
pub mod dynamics;
pub mod experiment;
pub mod models;
pub mod sampling;
pub mod scheduling;
pub mod sim;

pub use dynamics::{ClfCertificate, ControlSystem, ControlVector, EnergyTimeMap, RateFunction, StateVector};
pub use models::Model;
