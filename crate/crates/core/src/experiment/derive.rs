//! Turning a [`PolicySpec`] into a [`TriggerPolicy`], filling in periods and
//! constants from the dwell-time estimates.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PolicyKind, PolicySpec};
use super::ExperimentError;
use crate::certificates::{
    bound_sublevel_box, estimate_constants, BoxOptions, CertificateConstants, EstimateReport, SamplingOptions,
    SublevelRegion,
};
use crate::dwell::{tau_min_over_sublevel, AnchorConstants, DwellKind, LevelBucketTau, TauMinOptions, TauMinReport};
use crate::models::Model;
use crate::scheduling::{Schedule, TriggerPolicy};

/// Values the policy was built with, and where they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDerivation {
    pub policy: String,
    pub sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_tilde: Option<f64>,
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub k_big: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    /// `"config"` or `"derived"` for the period / h.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clock_source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub big_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_min: Option<f64>,
}

pub fn sampling_options(cfg: &ExperimentConfig) -> SamplingOptions {
    SamplingOptions {
        n_samples: cfg.estimation.n_samples,
        safety_factor: cfg.estimation.safety_factor,
        seed: cfg.seed,
    }
}

pub fn tau_min_options(cfg: &ExperimentConfig) -> TauMinOptions {
    TauMinOptions {
        n_anchors: cfg.estimation.n_anchors,
        safety: cfg.estimation.tau_safety,
        constants: AnchorConstants::Global,
        sampling: sampling_options(cfg),
        boxing: BoxOptions { seed: cfg.seed, ..BoxOptions::default() },
    }
}

/// `B(x₀)` with its bounding box.
pub fn initial_region(cfg: &ExperimentConfig, model: &Model) -> Result<SublevelRegion, ExperimentError> {
    Ok(bound_sublevel_box(model.cert(), &cfg.x0(), &tau_min_options(cfg).boxing)?)
}

/// κ, ν, M, ρ, μ over `B(x₀)`.
pub fn initial_constants(
    cfg: &ExperimentConfig,
    model: &Model,
) -> Result<(CertificateConstants, Vec<EstimateReport>), ExperimentError> {
    let region = initial_region(cfg, model)?;
    Ok(estimate_constants(
        model.sys(),
        model.cert(),
        &region,
        &model.descriptor.known_constants,
        &sampling_options(cfg),
    )?)
}

pub fn dwell_bound(
    cfg: &ExperimentConfig,
    model: &Model,
    kind: DwellKind,
) -> Result<TauMinReport, ExperimentError> {
    let region = initial_region(cfg, model)?;
    Ok(tau_min_over_sublevel(
        model.sys(),
        model.cert(),
        &region,
        &model.descriptor.known_constants,
        kind,
        &tau_min_options(cfg),
    )?)
}

fn tau0_kind(spec: &PolicySpec) -> DwellKind {
    DwellKind::Tau0 { sigma: spec.sigma, sigma_tilde: spec.sigma_tilde_or_default(), k_big: spec.k_big_or_default() }
}

pub fn build_policy(
    cfg: &ExperimentConfig,
    model: &Model,
) -> Result<(TriggerPolicy, PolicyDerivation), ExperimentError> {
    let spec = &cfg.policy;
    let sigma = spec.sigma;
    let mut d = PolicyDerivation {
        policy: String::new(),
        sigma,
        sigma_tilde: None,
        k_big: None,
        period: None,
        h: None,
        clock_source: None,
        big_m: None,
        tau_min: None,
    };
    let policy = match spec.policy {
        PolicyKind::Event => TriggerPolicy::EventTriggered { sigma },
        PolicyKind::SelfTriggered => {
            let bucket = LevelBucketTau::new(
                model.system.clone(),
                model.certificate.clone(),
                &cfg.x0(),
                DwellKind::Tau { sigma },
                model.descriptor.known_constants,
                tau_min_options(cfg),
            );
            TriggerPolicy::SelfTriggered { sigma, tau_fn: Arc::new(bucket).into_tau_fn() }
        }
        PolicyKind::Time => {
            let schedule = match (&spec.instants, spec.period) {
                (Some(ts), _) => {
                    d.clock_source = Some("config".into());
                    Schedule::Instants(ts.clone())
                }
                (None, Some(p)) => {
                    d.clock_source = Some("config".into());
                    d.period = Some(p);
                    Schedule::Period(p)
                }
                (None, None) => {
                    let tau = dwell_bound(cfg, model, DwellKind::Tau { sigma })?.value;
                    d.clock_source = Some("derived".into());
                    d.period = Some(tau);
                    d.tau_min = Some(tau);
                    Schedule::Period(tau)
                }
            };
            TriggerPolicy::TimeTriggered { sigma, schedule }
        }
        PolicyKind::PeriodicEvent => {
            let sigma_tilde = spec.sigma_tilde_or_default();
            let k_big = spec.k_big_or_default();
            let h = match spec.h {
                Some(h) => {
                    d.clock_source = Some("config".into());
                    h
                }
                None => {
                    let h = dwell_bound(cfg, model, tau0_kind(spec))?.value;
                    d.clock_source = Some("derived".into());
                    d.tau_min = Some(h);
                    h
                }
            };
            let (c, _) = initial_constants(cfg, model)?;
            d.sigma_tilde = Some(sigma_tilde);
            d.k_big = Some(k_big);
            d.h = Some(h);
            d.big_m = Some(c.big_m);
            TriggerPolicy::PeriodicEvent { sigma, sigma_tilde, k_big, h, big_m: c.big_m }
        }
    };
    d.policy = policy.name().to_string();
    Ok((policy, d))
}
