//! Lower bounds on inter-event times.
//!
//! `τ` bounds the time a frozen sample `u* = Û(x*)` keeps the decrease
//! condition `W < −σγ(V)` alive; `τ⁰` does the same for samples checked only
//! periodically through the predicate `P`. Both are built from the constants
//! in [`CertificateConstants`].

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificates::{
    bound_sublevel_box, estimate_constants, ray_radius, sublevel_samples, BoxOptions, CertError,
    CertificateConstants, KnownConstants, SamplingOptions, SublevelRegion,
};
use crate::dynamics::{norm, ClfCertificate, ControlSystem, RateFunction};
use crate::scheduling::TauFn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    Nondecreasing,
    C1,
}

impl GammaMode {
    /// Non-decreasing rates take the simpler branch even when `γ′` is known.
    pub fn for_rate(rate: &RateFunction) -> Result<Self, CertError> {
        if rate.is_monotone() {
            Ok(Self::Nondecreasing)
        } else if rate.has_derivative() {
            Ok(Self::C1)
        } else {
            Err(CertError::Config("γ is neither declared non-decreasing nor given a derivative".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellInputs {
    pub constants: CertificateConstants,
    pub sigma: f64,
    pub sigma_tilde: Option<f64>,
    pub k_big: Option<f64>,
    pub gamma_mode: GammaMode,
}

impl DwellInputs {
    pub fn new(constants: CertificateConstants, sigma: f64, gamma_mode: GammaMode) -> Self {
        Self { constants, sigma, sigma_tilde: None, k_big: None, gamma_mode }
    }

    pub fn with_periodic(mut self, sigma_tilde: f64, k_big: f64) -> Self {
        self.sigma_tilde = Some(sigma_tilde);
        self.k_big = Some(k_big);
        self
    }

    fn check_sigma(&self) -> Result<(), CertError> {
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(CertError::Domain(format!("σ must lie in (0, 1), got {}", self.sigma)));
        }
        Ok(())
    }

    fn periodic(&self) -> Result<(f64, f64), CertError> {
        self.check_sigma()?;
        let (Some(st), Some(k)) = (self.sigma_tilde, self.k_big) else {
            return Err(CertError::Config("σ̃ and K are required for the periodic bound".into()));
        };
        if !(st > self.sigma && st < 1.0) {
            return Err(CertError::Domain(format!("σ̃ must lie in (σ, 1) = ({}, 1), got {st}", self.sigma)));
        }
        if !(k > 1.0) {
            return Err(CertError::Domain(format!("K must exceed 1, got {k}")));
        }
        Ok((st, k))
    }
}

/// Which argument of the defining minimum was active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DwellBranch {
    /// The `(…)²/(μ²M²…)` term.
    Rate,
    /// The `1/(1+2κ)` cap.
    Cap,
    /// The term penalizing decreasing `γ` through ρ.
    Rho,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellEstimate {
    pub value: f64,
    pub branch: DwellBranch,
    pub inputs: DwellInputs,
}

/// `c(t) = √((e^{(2κ+1)t} − 1)/(2κ+1))`.
pub fn c_bound(kappa: f64, t: f64) -> f64 {
    let a = 2.0 * kappa + 1.0;
    if a * t < 1e-8 {
        t.max(0.0).sqrt()
    } else {
        ((a * t).exp_m1() / a).sqrt()
    }
}

fn cap(kappa: f64) -> f64 {
    1.0 / (1.0 + 2.0 * kappa)
}

/// `min(first, cap)` with ties reported as [`DwellBranch::Rate`].
fn min_with_cap(first: f64, kappa: f64) -> (f64, DwellBranch) {
    let c = cap(kappa);
    if first <= c {
        (first, DwellBranch::Rate)
    } else {
        (c, DwellBranch::Cap)
    }
}

fn tilde_at(c: &CertificateConstants, sigma: f64) -> (f64, DwellBranch) {
    let mm = c.mu * c.big_m;
    let first = if mm > 0.0 { (1.0 - sigma).powi(2) / (mm * mm) } else { f64::INFINITY };
    min_with_cap(first, c.kappa)
}

fn bar_at(c: &CertificateConstants, sigma: f64, sigma_tilde: f64, k_big: f64) -> (f64, DwellBranch) {
    let denom = (k_big * c.mu * c.big_m * sigma_tilde).powi(2);
    let first = if denom > 0.0 { (sigma_tilde - sigma).powi(2) / denom } else { f64::INFINITY };
    min_with_cap(first, c.kappa)
}

/// `τ̃_σ = min{(1−σ)²/(μ²M²), 1/(1+2κ)}`.
pub fn tau_tilde(inp: &DwellInputs) -> Result<DwellEstimate, CertError> {
    inp.check_sigma()?;
    let (value, branch) = tilde_at(&inp.constants, inp.sigma);
    Ok(DwellEstimate { value, branch, inputs: *inp })
}

/// `τ̂_σ = min(τ̃_{σ₀}, (σ₀−σ)/(σ(2−σ₀)ρ))` with `σ₀ = (1+σ)/2`.
pub fn tau_hat(inp: &DwellInputs) -> Result<DwellEstimate, CertError> {
    inp.check_sigma()?;
    if inp.gamma_mode != GammaMode::C1 {
        return Err(CertError::Config("τ̂ applies to C¹ rates; use the non-decreasing branch".into()));
    }
    let s0 = 0.5 * (1.0 + inp.sigma);
    let (tilde, tilde_branch) = tilde_at(&inp.constants, s0);
    let rho = inp.constants.rho;
    let second = if rho > 0.0 { (s0 - inp.sigma) / (inp.sigma * (2.0 - s0) * rho) } else { f64::INFINITY };
    let (value, branch) = if tilde <= second { (tilde, tilde_branch) } else { (second, DwellBranch::Rho) };
    Ok(DwellEstimate { value, branch, inputs: *inp })
}

/// `τ`: `τ̃_σ` for non-decreasing rates, `τ̂_σ` otherwise.
pub fn tau_select(inp: &DwellInputs) -> Result<DwellEstimate, CertError> {
    match inp.gamma_mode {
        GammaMode::Nondecreasing => tau_tilde(inp),
        GammaMode::C1 => tau_hat(inp),
    }
}

/// `τ̄ = min{(σ̃−σ)²/(K²μ²M²σ̃²), 1/(1+2κ)}`.
pub fn tau_bar(inp: &DwellInputs) -> Result<DwellEstimate, CertError> {
    let (st, k) = inp.periodic()?;
    let (value, branch) = bar_at(&inp.constants, inp.sigma, st, k);
    Ok(DwellEstimate { value, branch, inputs: *inp })
}

/// `τ̆ = min(τ̄_{σ₁,σ̃,K}, (σ₁−σ)/(σ(2σ̃−σ₁)ρ))` with `σ₁ = (σ̃+σ)/2`.
pub fn tau_breve(inp: &DwellInputs) -> Result<DwellEstimate, CertError> {
    let (st, k) = inp.periodic()?;
    if inp.gamma_mode != GammaMode::C1 {
        return Err(CertError::Config("τ̆ applies to C¹ rates; use the non-decreasing branch".into()));
    }
    let s1 = 0.5 * (st + inp.sigma);
    let (bar, bar_branch) = bar_at(&inp.constants, s1, st, k);
    let rho = inp.constants.rho;
    let second = if rho > 0.0 { (s1 - inp.sigma) / (inp.sigma * (2.0 * st - s1) * rho) } else { f64::INFINITY };
    let (value, branch) = if bar <= second { (bar, bar_branch) } else { (second, DwellBranch::Rho) };
    Ok(DwellEstimate { value, branch, inputs: *inp })
}

/// `τ⁰`: `τ̄` for non-decreasing rates, `τ̆` otherwise.
pub fn tau0_select(inp: &DwellInputs) -> Result<DwellEstimate, CertError> {
    match inp.gamma_mode {
        GammaMode::Nondecreasing => tau_bar(inp),
        GammaMode::C1 => tau_breve(inp),
    }
}

/// Which bound to minimize over the sublevel set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DwellKind {
    /// `τ`, for event-, self- and time-triggered sampling.
    Tau { sigma: f64 },
    /// `τ⁰`, for periodic checks of the predicate.
    Tau0 { sigma: f64, sigma_tilde: f64, k_big: f64 },
}

impl DwellKind {
    fn inputs(&self, constants: CertificateConstants, mode: GammaMode) -> DwellInputs {
        match *self {
            DwellKind::Tau { sigma } => DwellInputs::new(constants, sigma, mode),
            DwellKind::Tau0 { sigma, sigma_tilde, k_big } => {
                DwellInputs::new(constants, sigma, mode).with_periodic(sigma_tilde, k_big)
            }
        }
    }

    fn evaluate(&self, inp: &DwellInputs) -> Result<DwellEstimate, CertError> {
        match self {
            DwellKind::Tau { .. } => tau_select(inp),
            DwellKind::Tau0 { .. } => tau0_select(inp),
        }
    }
}

/// How constants are obtained for each anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AnchorConstants {
    /// One estimate over `B(x₀)` reused at every anchor. Since `B(x) ⊆ B(x₀)`
    /// for `x ∈ B(x₀)`, this can only make `τ` smaller.
    Global,
    /// A fresh box and fresh estimates per anchor.
    PerAnchor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauMinOptions {
    pub n_anchors: usize,
    pub safety: f64,
    pub constants: AnchorConstants,
    pub sampling: SamplingOptions,
    pub boxing: BoxOptions,
}

impl Default for TauMinOptions {
    fn default() -> Self {
        Self {
            n_anchors: 256,
            safety: 1.1,
            constants: AnchorConstants::Global,
            sampling: SamplingOptions::default(),
            boxing: BoxOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauMinReport {
    /// `min τ / safety` over the anchors.
    pub value: f64,
    pub minimizer: Vec<f64>,
    pub estimate_at_minimizer: DwellEstimate,
    pub n_anchors: usize,
    pub safety: f64,
}

/// Sampled `inf_{x ∈ B(x₀)} τ(x)`, divided by the safety factor.
pub fn tau_min_over_sublevel(
    sys: &dyn ControlSystem,
    cert: &dyn ClfCertificate,
    region: &SublevelRegion,
    known: &KnownConstants,
    kind: DwellKind,
    opts: &TauMinOptions,
) -> Result<TauMinReport, CertError> {
    let mode = GammaMode::for_rate(cert.rate())?;
    let anchors = sublevel_samples(cert, region, opts.n_anchors, opts.sampling.seed);
    let estimates: Vec<Result<DwellEstimate, CertError>> = match opts.constants {
        AnchorConstants::Global => {
            let (c, _) = estimate_constants(sys, cert, region, known, &opts.sampling)?;
            // κ and M are suprema over B(x₀), so every anchor sees the same τ
            let est = kind.evaluate(&kind.inputs(c, mode));
            anchors.iter().map(|_| est.clone()).collect()
        }
        AnchorConstants::PerAnchor => anchors
            .par_iter()
            .map(|x| {
                let sub = bound_sublevel_box(cert, x, &opts.boxing)?;
                let (c, _) = estimate_constants(sys, cert, &sub, known, &opts.sampling)?;
                kind.evaluate(&kind.inputs(c, mode))
            })
            .collect(),
    };
    let mut best: Option<(usize, DwellEstimate)> = None;
    for (i, est) in estimates.into_iter().enumerate() {
        let est = est?;
        // the anchor at the origin has a degenerate region and τ = 1
        if region.level > 0.0 && cert.value(&anchors[i]) == 0.0 {
            continue;
        }
        if best.as_ref().map_or(true, |(_, b)| est.value < b.value) {
            best = Some((i, est));
        }
    }
    let (i, est) = match best {
        Some(b) => b,
        None => (0, kind.evaluate(&kind.inputs(estimate_constants(sys, cert, region, known, &opts.sampling)?.0, mode))?),
    };
    Ok(TauMinReport {
        value: est.value / opts.safety,
        minimizer: anchors[i].clone(),
        estimate_at_minimizer: est,
        n_anchors: anchors.len(),
        safety: opts.safety,
    })
}

const MAX_BUCKET: u32 = 200;

/// State-dependent `τ(x)` for self-triggered sampling.
///
/// Constants are estimated on `B` at the level `V(x₀)·2^{−j}` just above
/// `V(x)` and cached per bucket `j`, so a run only pays for one estimate per
/// halving of `V`. Bucket 0 is `B(x₀)` itself. Each bucket's sublevel set
/// contains `B(x)`, and so does `B(x₀)`, so both bounds are valid at `x` and
/// the larger one is used.
pub struct LevelBucketTau {
    sys: Arc<dyn ControlSystem>,
    cert: Arc<dyn ClfCertificate>,
    x0: Vec<f64>,
    v0: f64,
    kind: DwellKind,
    known: KnownConstants,
    opts: TauMinOptions,
    cache: Mutex<BTreeMap<u32, Result<f64, String>>>,
}

impl LevelBucketTau {
    pub fn new(
        sys: Arc<dyn ControlSystem>,
        cert: Arc<dyn ClfCertificate>,
        x0: &[f64],
        kind: DwellKind,
        known: KnownConstants,
        opts: TauMinOptions,
    ) -> Self {
        let v0 = cert.value(x0);
        Self { sys, cert, x0: x0.to_vec(), v0, kind, known, opts, cache: Mutex::new(BTreeMap::new()) }
    }

    pub fn bucket(&self, v: f64) -> u32 {
        if !(v > 0.0) {
            return MAX_BUCKET;
        }
        ((self.v0 / v).log2().floor().max(0.0) as u32).min(MAX_BUCKET)
    }

    pub fn level(&self, bucket: u32) -> f64 {
        self.v0 * (-(bucket as f64)).exp2()
    }

    fn compute(&self, bucket: u32, x: &[f64]) -> Result<f64, CertError> {
        let anchor = if bucket == 0 {
            self.x0.clone()
        } else {
            let level = self.level(bucket);
            let r = norm(x);
            let dir: Vec<f64> = if r > 0.0 {
                x.iter().map(|c| c / r).collect()
            } else {
                (0..x.len()).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect()
            };
            let radius = ray_radius(self.cert.as_ref(), &dir, level)?;
            dir.iter().map(|c| c * radius).collect()
        };
        let region = bound_sublevel_box(self.cert.as_ref(), &anchor, &self.opts.boxing)?;
        let mode = GammaMode::for_rate(self.cert.rate())?;
        let (c, _) = estimate_constants(self.sys.as_ref(), self.cert.as_ref(), &region, &self.known, &self.opts.sampling)?;
        Ok(self.kind.evaluate(&self.kind.inputs(c, mode))?.value / self.opts.safety)
    }

    fn cached(&self, bucket: u32, x: &[f64]) -> Result<f64, CertError> {
        if let Some(v) = self.cache.lock().expect("cache lock").get(&bucket) {
            return v.clone().map_err(CertError::Config);
        }
        let v = self.compute(bucket, x);
        let stored = v.as_ref().map(|t| *t).map_err(|e| e.to_string());
        self.cache.lock().expect("cache lock").insert(bucket, stored);
        v
    }

    pub fn tau(&self, x: &[f64]) -> Result<f64, CertError> {
        let base = self.cached(0, &self.x0)?;
        let bucket = self.bucket(self.cert.value(x));
        if bucket == 0 {
            return Ok(base);
        }
        Ok(self.cached(bucket, x)?.max(base))
    }

    /// Buckets computed so far with their `τ`.
    pub fn computed(&self) -> Vec<(u32, f64)> {
        let cache = self.cache.lock().expect("cache lock");
        cache.iter().filter_map(|(j, v)| v.as_ref().ok().map(|t| (*j, *t))).collect()
    }

    /// Wraps into the policy callback; failures surface as a non-positive
    /// `τ`, which the engine rejects.
    pub fn into_tau_fn(self: Arc<Self>) -> TauFn {
        Arc::new(move |x: &[f64]| self.tau(x).unwrap_or(f64::NAN))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificates::{compute_mu, Provenance};

    /// Constants with prescribed μ (through ν alone when κ = 0).
    fn constants(kappa: f64, nu: f64, big_m: f64, rho: f64) -> CertificateConstants {
        CertificateConstants::new(kappa, nu, big_m, rho, Provenance::ClosedForm).unwrap()
    }

    /// κ = 0 and ν = 1/√e give μ = 1.
    fn unit_mu(big_m: f64, rho: f64) -> CertificateConstants {
        let c = constants(0.0, (-0.5f64).exp(), big_m, rho);
        assert!((c.mu - 1.0).abs() < 1e-15);
        c
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn c_bound_values() {
        assert_eq!(c_bound(0.0, 0.0), 0.0);
        assert!(close(c_bound(0.0, 1.0), (1f64.exp() - 1.0).sqrt(), 1e-15));
        assert!(close(c_bound(0.0, 1.0), 1.310_832_494_432_086, 1e-14));
        let c = c_bound(0.5, 0.5);
        assert!(c <= (0.5 * 1f64.exp()).sqrt());
        // small-argument expansion agrees with the exact form
        assert!(close(c_bound(0.1, 1e-9), 1e-9f64.sqrt(), 1e-8));
    }

    #[test]
    fn tau_tilde_examples() {
        let inp = DwellInputs::new(unit_mu(1.0, 0.0), 0.9, GammaMode::Nondecreasing);
        let t = tau_tilde(&inp).unwrap();
        assert!(close(t.value, 0.01, 1e-12));
        assert_eq!(t.branch, DwellBranch::Rate);

        let zero = DwellInputs::new(constants(0.0, 0.0, 1.0, 0.0), 0.9, GammaMode::Nondecreasing);
        let t = tau_tilde(&zero).unwrap();
        assert_eq!(t.value, 1.0);
        assert_eq!(t.branch, DwellBranch::Cap);

        let near_one = DwellInputs { sigma: 1.0 - 1e-6, ..inp };
        assert!(tau_tilde(&near_one).unwrap().value < 1e-11);
        assert!(tau_tilde(&DwellInputs { sigma: 1.0, ..inp }).is_err());
    }

    #[test]
    fn tau_hat_examples() {
        let inp = DwellInputs::new(unit_mu(1.0, 1.0), 0.5, GammaMode::C1);
        assert!(close(tau_hat(&inp).unwrap().value, 0.0625, 1e-12));

        let inp = DwellInputs::new(unit_mu(1.0, 10.0), 0.9, GammaMode::C1);
        let t = tau_hat(&inp).unwrap();
        assert!(close(t.value, 0.0025, 1e-12));
        let rho_term = 0.05 / (0.9 * 1.05 * 10.0);
        assert!(close(rho_term, 0.005291, 1e-3));

        let flat = DwellInputs::new(unit_mu(1.0, 0.0), 0.9, GammaMode::C1);
        let tilde95 = tau_tilde(&DwellInputs { sigma: 0.95, gamma_mode: GammaMode::Nondecreasing, ..flat }).unwrap();
        assert_eq!(tau_hat(&flat).unwrap().value, tilde95.value);

        let mono = DwellInputs { gamma_mode: GammaMode::Nondecreasing, ..flat };
        assert!(matches!(tau_hat(&mono), Err(CertError::Config(_))));
    }

    #[test]
    fn rho_branch_is_reported() {
        let inp = DwellInputs::new(unit_mu(0.1, 1000.0), 0.5, GammaMode::C1);
        let t = tau_hat(&inp).unwrap();
        assert_eq!(t.branch, DwellBranch::Rho);
        assert!(close(t.value, 0.25 / (0.5 * 1.25 * 1000.0), 1e-12));
    }

    #[test]
    fn select_prefers_monotone_branch() {
        // with ρ ≥ 0 the C¹ branch never exceeds the monotone one
        for &s in &[0.1, 0.5, 0.9] {
            for &m in &[0.5, 1.0, 4.0] {
                for &rho in &[0.0, 0.3, 3.0] {
                    let c = unit_mu(m, rho);
                    let mono = tau_select(&DwellInputs::new(c, s, GammaMode::Nondecreasing)).unwrap();
                    let c1 = tau_select(&DwellInputs::new(c, s, GammaMode::C1)).unwrap();
                    assert_eq!(mono.value, tau_tilde(&DwellInputs::new(c, s, GammaMode::Nondecreasing)).unwrap().value);
                    assert!(c1.value > 0.0);
                    // τ̂ uses σ₀ > σ in the first branch, so it may exceed τ̃ only through that term
                    let s0 = 0.5 * (1.0 + s);
                    assert!(c1.value <= tau_tilde(&DwellInputs::new(c, s0, GammaMode::Nondecreasing)).unwrap().value);
                }
            }
        }
    }

    #[test]
    fn tau_bar_and_breve_examples() {
        let inp = DwellInputs::new(unit_mu(1.0, 0.0), 0.8, GammaMode::Nondecreasing).with_periodic(0.9, 2.0);
        let t = tau_bar(&inp).unwrap();
        assert!(close(t.value, 0.01 / (4.0 * 0.81), 1e-12));
        assert!(close(t.value, 0.003086, 1e-3));

        let inp = DwellInputs::new(unit_mu(1.0, 1.0), 0.8, GammaMode::C1).with_periodic(0.9, 2.0);
        let t = tau_breve(&inp).unwrap();
        assert!(close(t.value, 0.0025 / (4.0 * 0.81), 1e-12));
        assert!(close(t.value, 7.716e-4, 1e-3));

        let flat = DwellInputs::new(unit_mu(1.0, 0.0), 0.8, GammaMode::C1).with_periodic(0.9, 2.0);
        let bar = tau_bar(&DwellInputs { sigma: 0.85, ..flat }).unwrap();
        assert!(close(tau_breve(&flat).unwrap().value, bar.value, 1e-14));

        let mono = DwellInputs { gamma_mode: GammaMode::Nondecreasing, ..flat };
        assert_eq!(tau0_select(&mono).unwrap().value, tau_bar(&mono).unwrap().value);
    }

    #[test]
    fn periodic_parameter_validation() {
        let base = DwellInputs::new(unit_mu(1.0, 0.0), 0.8, GammaMode::Nondecreasing);
        assert!(tau_bar(&base).is_err());
        assert!(tau_bar(&base.with_periodic(0.8, 2.0)).is_err());
        assert!(tau_bar(&base.with_periodic(0.9, 1.0)).is_err());
        let big_k = tau_bar(&base.with_periodic(0.9, 1e6)).unwrap().value;
        assert!(big_k < 1e-13);
        let close_sigma = tau_bar(&base.with_periodic(0.8 + 1e-6, 2.0)).unwrap().value;
        assert!(close_sigma < 1e-12);
    }

    #[test]
    fn mu_is_recomputed() {
        let c = constants(0.7, 0.2, 3.0, 0.0);
        assert_eq!(c.mu, compute_mu(0.7, 0.2));
        assert!(c.mu >= 0.5f64.exp() * 0.7 && c.mu >= 0.5f64.exp() * 0.2);
    }
}
