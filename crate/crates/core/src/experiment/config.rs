//! JSON experiment description.

use serde::{Deserialize, Serialize};

use crate::models::{
    acc_backstepping, acc_case1_state, homogeneous_planar, relay_1d, zeno_initial_state, zeno_polar, HomogRate, Model,
    TauLag,
};
use crate::sim::IntegratorConfig;

use super::ExperimentError;

fn default_k() -> f64 {
    1.01
}
fn default_tau_lag() -> f64 {
    0.3
}
fn default_v0() -> f64 {
    25.0
}
fn default_d0() -> f64 {
    40.0
}
fn default_r_star() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", deny_unknown_fields)]
pub enum ModelSpec {
    #[serde(rename = "acc")]
    Acc {
        #[serde(default = "default_k")]
        k: f64,
        #[serde(default = "default_tau_lag")]
        tau_lag: f64,
        #[serde(default = "default_v0")]
        v0: f64,
        #[serde(default = "default_d0")]
        d0: f64,
    },
    #[serde(rename = "homog2d")]
    Homog2d {
        #[serde(default)]
        variant: HomogRate,
    },
    #[serde(rename = "zeno-polar")]
    ZenoPolar {
        #[serde(default = "default_r_star")]
        r_star: f64,
        #[serde(default)]
        phi_star: f64,
    },
    #[serde(rename = "relay1d")]
    Relay1d,
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Acc { .. } => "acc",
            ModelSpec::Homog2d { .. } => "homog2d",
            ModelSpec::ZenoPolar { .. } => "zeno-polar",
            ModelSpec::Relay1d => "relay1d",
        }
    }

    pub fn build(&self) -> Result<Model, ExperimentError> {
        Ok(match *self {
            ModelSpec::Acc { k, tau_lag, v0, d0 } => acc_backstepping(k, TauLag::Constant(tau_lag), v0, d0)?,
            ModelSpec::Homog2d { variant } => homogeneous_planar(variant),
            ModelSpec::ZenoPolar { r_star, phi_star } => zeno_polar(r_star, phi_star)?,
            ModelSpec::Relay1d => relay_1d(),
        })
    }

    /// Initial state used when the config gives none.
    pub fn default_x0(&self) -> Vec<f64> {
        match *self {
            ModelSpec::Acc { k, .. } => acc_case1_state(k).to_vec(),
            ModelSpec::Homog2d { .. } => vec![0.1, 0.4],
            ModelSpec::ZenoPolar { r_star, phi_star } => zeno_initial_state(r_star, phi_star).to_vec(),
            ModelSpec::Relay1d => vec![1.0],
        }
    }

    pub fn default_horizon(&self) -> f64 {
        match self {
            ModelSpec::Acc { .. } => 60.0,
            ModelSpec::Homog2d { .. } => 200.0,
            ModelSpec::ZenoPolar { .. } => 5.0,
            ModelSpec::Relay1d => 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "event")]
    Event,
    #[serde(rename = "self")]
    SelfTriggered,
    #[serde(rename = "time")]
    Time,
    #[serde(rename = "periodic-event")]
    PeriodicEvent,
}

/// Sampling policy. Omitted `period` / `h` are derived from the dwell-time
/// estimate over `B(x₀)`; omitted `sigma_tilde` and `K` default to `(1+σ)/2`
/// and 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub policy: PolicyKind,
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_tilde: Option<f64>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k_big: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    /// Explicit sampling instants for the time-triggered policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instants: Option<Vec<f64>>,
}

impl PolicySpec {
    pub fn event(sigma: f64) -> Self {
        Self { policy: PolicyKind::Event, sigma, sigma_tilde: None, k_big: None, h: None, period: None, instants: None }
    }

    pub fn with_kind(policy: PolicyKind, sigma: f64) -> Self {
        Self { policy, ..Self::event(sigma) }
    }

    pub fn sigma_tilde_or_default(&self) -> f64 {
        self.sigma_tilde.unwrap_or(0.5 * (1.0 + self.sigma))
    }

    pub fn k_big_or_default(&self) -> f64 {
        self.k_big.unwrap_or(2.0)
    }
}

/// Integrator settings that override the defaults; the horizon lives at the
/// top level of the config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_time_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_events: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeno_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_step: Option<f64>,
}

impl IntegratorOverrides {
    pub fn apply(&self, horizon: f64) -> IntegratorConfig {
        let mut c = IntegratorConfig::with_horizon(horizon);
        if let Some(v) = self.rel_tol {
            c.rel_tol = v;
        }
        if let Some(v) = self.abs_tol {
            c.abs_tol = v;
        }
        if self.max_step.is_some() {
            c.max_step = self.max_step;
        }
        if self.event_time_tol.is_some() {
            c.event_time_tol = self.event_time_tol;
        }
        if let Some(v) = self.max_events {
            c.max_events = v;
        }
        if let Some(v) = self.zeno_floor {
            c.zeno_floor = v;
        }
        if self.output_step.is_some() {
            c.output_step = self.output_step;
        }
        c
    }
}

/// File names of the artifacts, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub trajectory: String,
    pub stats: String,
    pub diagnostics: String,
    pub report: String,
    pub sweep: String,
    pub plot: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            trajectory: "trajectory.csv".into(),
            stats: "stats.json".into(),
            diagnostics: "diagnostics.json".into(),
            report: "report.json".into(),
            sweep: "sweep.csv".into(),
            plot: "trajectory.svg".into(),
        }
    }
}

/// Effort and safety settings for the sampled constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationSpec {
    pub n_samples: usize,
    pub safety_factor: f64,
    pub n_anchors: usize,
    /// Divisor applied to the minimized dwell bound.
    pub tau_safety: f64,
    /// Points used by the pointwise certificate check.
    pub verify_samples: usize,
    /// Half-width of the verification box; the model default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verify_radius: Option<f64>,
}

impl Default for EstimationSpec {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            safety_factor: 1.25,
            n_anchors: 256,
            tau_safety: 1.1,
            verify_samples: 10_000,
            verify_radius: None,
        }
    }
}

/// The parameter varied by `sweep`, with its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", deny_unknown_fields)]
pub enum SweepSpec {
    #[serde(rename = "sigma")]
    Sigma(Vec<f64>),
    #[serde(rename = "sigma_tilde")]
    SigmaTilde(Vec<f64>),
    #[serde(rename = "K")]
    KBig(Vec<f64>),
    #[serde(rename = "h")]
    H(Vec<f64>),
    #[serde(rename = "period")]
    Period(Vec<f64>),
    #[serde(rename = "r_star")]
    RStar(Vec<f64>),
    #[serde(rename = "horizon")]
    Horizon(Vec<f64>),
    #[serde(rename = "policy")]
    Policy(Vec<PolicySpec>),
}

impl SweepSpec {
    pub fn axis(&self) -> &'static str {
        match self {
            SweepSpec::Sigma(_) => "sigma",
            SweepSpec::SigmaTilde(_) => "sigma_tilde",
            SweepSpec::KBig(_) => "K",
            SweepSpec::H(_) => "h",
            SweepSpec::Period(_) => "period",
            SweepSpec::RStar(_) => "r_star",
            SweepSpec::Horizon(_) => "horizon",
            SweepSpec::Policy(_) => "policy",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepSpec::Policy(p) => p.len(),
            SweepSpec::Sigma(v)
            | SweepSpec::SigmaTilde(v)
            | SweepSpec::KBig(v)
            | SweepSpec::H(v)
            | SweepSpec::Period(v)
            | SweepSpec::RStar(v)
            | SweepSpec::Horizon(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The config of the `i`-th run and a printable value of the axis.
    pub fn apply(&self, base: &ExperimentConfig, i: usize) -> Result<(ExperimentConfig, String), ExperimentError> {
        let mut c = base.clone();
        let label = match self {
            SweepSpec::Policy(p) => {
                c.policy = p[i].clone();
                serde_json::to_string(&p[i]).expect("policy serializes")
            }
            SweepSpec::Sigma(v) => {
                c.policy.sigma = v[i];
                v[i].to_string()
            }
            SweepSpec::SigmaTilde(v) => {
                c.policy.sigma_tilde = Some(v[i]);
                v[i].to_string()
            }
            SweepSpec::KBig(v) => {
                c.policy.k_big = Some(v[i]);
                v[i].to_string()
            }
            SweepSpec::H(v) => {
                c.policy.h = Some(v[i]);
                v[i].to_string()
            }
            SweepSpec::Period(v) => {
                c.policy.period = Some(v[i]);
                v[i].to_string()
            }
            SweepSpec::Horizon(v) => {
                c.horizon = Some(v[i]);
                v[i].to_string()
            }
            SweepSpec::RStar(v) => {
                let ModelSpec::ZenoPolar { phi_star, .. } = c.model else {
                    return Err(ExperimentError::Config("the r_star axis needs the zeno-polar model".into()));
                };
                c.model = ModelSpec::ZenoPolar { r_star: v[i], phi_star };
                // the initial state follows r*
                c.x0 = None;
                v[i].to_string()
            }
        };
        Ok((c, label))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub policy: PolicySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub integrator: IntegratorOverrides,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub estimation: EstimationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

impl ExperimentConfig {
    pub fn new(model: ModelSpec, policy: PolicySpec) -> Self {
        Self {
            model,
            policy,
            x0: None,
            horizon: None,
            integrator: IntegratorOverrides::default(),
            output: OutputSpec::default(),
            seed: 0,
            estimation: EstimationSpec::default(),
            sweep: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn x0(&self) -> Vec<f64> {
        self.x0.clone().unwrap_or_else(|| self.model.default_x0())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon.unwrap_or_else(|| self.model.default_horizon())
    }

    pub fn integrator_config(&self) -> IntegratorConfig {
        self.integrator.apply(self.horizon())
    }

    /// Checks everything that can be checked without running anything.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let model = self.model.build()?;
        let x0 = self.x0();
        if x0.len() != model.descriptor.state_dim {
            return Err(ExperimentError::Config(format!(
                "x0 has {} entries, model {} has {} states",
                x0.len(),
                self.model.name(),
                model.descriptor.state_dim
            )));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(ExperimentError::Config("x0 must be finite".into()));
        }
        let p = &self.policy;
        if !(p.sigma > 0.0 && p.sigma < 1.0) {
            return Err(ExperimentError::Config(format!("sigma must lie in (0, 1), got {}", p.sigma)));
        }
        if p.policy == PolicyKind::PeriodicEvent {
            let st = p.sigma_tilde_or_default();
            if !(st > p.sigma && st < 1.0) {
                return Err(ExperimentError::Config(format!("sigma_tilde must lie in (sigma, 1), got {st}")));
            }
            if !(p.k_big_or_default() > 1.0) {
                return Err(ExperimentError::Config("K must exceed 1".into()));
            }
        }
        for (name, v) in [("h", p.h), ("period", p.period)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(ExperimentError::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        let e = &self.estimation;
        if e.n_samples == 0 || e.n_anchors == 0 || e.verify_samples == 0 {
            return Err(ExperimentError::Config("sample counts must be positive".into()));
        }
        if !(e.safety_factor >= 1.0 && e.tau_safety >= 1.0) {
            return Err(ExperimentError::Config("safety factors must be at least 1".into()));
        }
        self.integrator_config().validate()?;
        if let Some(s) = &self.sweep {
            if s.is_empty() {
                return Err(ExperimentError::Config("sweep axis has no values".into()));
            }
            if matches!(s, SweepSpec::RStar(_)) && !matches!(self.model, ModelSpec::ZenoPolar { .. }) {
                return Err(ExperimentError::Config("the r_star axis needs the zeno-polar model".into()));
            }
        }
        Ok(())
    }
}
