//! The `simulate`, `verify`, `dwell`, `sweep` and `stats` commands.
//!
//! Each command returns a JSON report for stdout plus the files it wrote; the
//! binary only maps that onto the process.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelSpec, SweepSpec};
use super::derive::{build_policy, initial_constants, sampling_options, tau_min_options, PolicyDerivation};
use super::{svg, ExperimentError, EXIT_ANOMALY, EXIT_FAILURE, EXIT_OK};
use crate::certificates::{
    bound_sublevel_box, check_nondegeneracy_geometry, estimate_big_m, estimate_kappa, estimate_nu, estimate_rho,
    CertError, CertificateConstants, EstimateReport, GeometryReport, Provenance, SublevelRegion,
};
use crate::dwell::{tau0_select, tau_select, DwellInputs, GammaMode, TauMinReport};
use crate::dynamics::{verify_clf_pointwise, ClfViolation, StateVector};
use crate::models::{zeno_first_event_bound, AssumptionStatus, Model};
use crate::sampling::HaltonBox;
use crate::scheduling::TriggerPolicy;
use crate::sim::export::{check_rate_certificate, read_trajectory_csv, write_trajectory_csv, RateCheck};
use crate::sim::stats::stats_from_event_times;
use crate::sim::{run_closed_loop, run_stats, EventRecord, RunStats, SimError, Termination, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub exit_code: i32,
    /// Summary printed on stdout.
    pub report: serde_json::Value,
    pub files: Vec<PathBuf>,
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("report serializes")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn prepare_dir(out: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

/// First dwell of the rotating counterexample against its analytic bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZenoBoundCheck {
    pub r_star: f64,
    pub first_event_bound: f64,
    pub first_dwell: Option<f64>,
    pub within_bound: Option<bool>,
}

fn zeno_check(cfg: &ExperimentConfig, traj: Option<&Trajectory>) -> Option<ZenoBoundCheck> {
    let ModelSpec::ZenoPolar { r_star, .. } = cfg.model else {
        return None;
    };
    let bound = zeno_first_event_bound(r_star);
    let first = traj.and_then(|t| t.events.get(1)).map(|e| e.t);
    Some(ZenoBoundCheck { r_star, first_event_bound: bound, first_dwell: first, within_bound: first.map(|t| t <= bound) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub model: ModelSpec,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub policy: PolicyDerivation,
    pub stats: RunStats,
    pub rate_check: RateCheck,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeno_bound: Option<ZenoBoundCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub model: ModelSpec,
    pub seed: u64,
    pub policy: String,
    pub termination: Option<Termination>,
    pub error: Option<String>,
    pub t_end: Option<f64>,
    pub n_events: usize,
    /// The last few control updates before the run stopped.
    pub last_events: Vec<EventRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeno_bound: Option<ZenoBoundCheck>,
}

/// A simulated run before anything is written.
pub struct RunOutcome {
    pub model: Model,
    pub x0: Vec<f64>,
    pub derivation: PolicyDerivation,
    pub result: Result<Trajectory, SimError>,
}

impl RunOutcome {
    pub fn summary(&self, cfg: &ExperimentConfig) -> Result<Option<SimulationSummary>, ExperimentError> {
        let Ok(traj) = &self.result else {
            return Ok(None);
        };
        Ok(Some(SimulationSummary {
            model: cfg.model.clone(),
            seed: cfg.seed,
            x0: self.x0.clone(),
            horizon: cfg.horizon(),
            policy: self.derivation.clone(),
            stats: run_stats(traj),
            rate_check: check_rate_certificate(traj, self.model.cert())?,
            zeno_bound: zeno_check(cfg, Some(traj)),
        }))
    }
}

fn is_runtime_anomaly(e: &SimError) -> bool {
    matches!(e, SimError::FreshSampleViolation { .. } | SimError::StepUnderflow(_))
}

/// Builds the model and policy and runs the closed loop. Configuration
/// problems are errors; runtime failures of the simulation land in
/// `result`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    cfg.validate()?;
    let model = cfg.model.build()?;
    let x0 = cfg.x0();
    let (policy, derivation) = build_policy(cfg, &model)?;
    let result = run_closed_loop(model.sys(), model.cert(), &policy, &x0, &cfg.integrator_config());
    match result {
        Err(e) if !is_runtime_anomaly(&e) => Err(e.into()),
        result => Ok(RunOutcome { model, x0, derivation, result }),
    }
}

pub fn simulate(cfg: &ExperimentConfig, out: &Path, plot: bool) -> Result<CommandOutput, ExperimentError> {
    let run = run_experiment(cfg)?;
    prepare_dir(out)?;
    let mut files = Vec::new();
    let diagnostics = |traj: Option<&Trajectory>, error: Option<String>| Diagnostics {
        model: cfg.model.clone(),
        seed: cfg.seed,
        policy: run.derivation.policy.clone(),
        termination: traj.map(|t| t.termination),
        error,
        t_end: traj.map(Trajectory::end_time),
        n_events: traj.map_or(0, |t| t.events.len()),
        last_events: traj.map_or(Vec::new(), |t| t.events[t.events.len().saturating_sub(10)..].to_vec()),
        zeno_bound: zeno_check(cfg, traj),
    };
    let traj = match &run.result {
        Ok(t) => t,
        Err(e) => {
            let path = out.join(&cfg.output.diagnostics);
            let diag = diagnostics(None, Some(e.to_string()));
            write_json(&path, &diag)?;
            files.push(path);
            return Ok(CommandOutput { exit_code: EXIT_ANOMALY, report: to_value(&diag), files });
        }
    };

    let csv_path = out.join(&cfg.output.trajectory);
    write_trajectory_csv(traj, fs::File::create(&csv_path)?)?;
    files.push(csv_path);
    let summary = run.summary(cfg)?.expect("run succeeded");
    let stats_path = out.join(&cfg.output.stats);
    write_json(&stats_path, &summary)?;
    files.push(stats_path);
    if plot {
        let path = out.join(&cfg.output.plot);
        fs::write(&path, svg::render_trajectory(traj, run.model.cert()))?;
        files.push(path);
    }
    if traj.termination.is_anomaly() {
        let path = out.join(&cfg.output.diagnostics);
        let diag = diagnostics(Some(traj), None);
        write_json(&path, &diag)?;
        files.push(path);
        return Ok(CommandOutput { exit_code: EXIT_ANOMALY, report: to_value(&diag), files });
    }
    Ok(CommandOutput { exit_code: EXIT_OK, report: to_value(&summary), files })
}

// ---------------------------------------------------------------------------
// verify

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClfCheck {
    pub radius: f64,
    pub n_samples: usize,
    pub n_skipped: usize,
    pub max_margin: f64,
    pub n_violations: usize,
    pub positivity_violations: usize,
    /// Up to five offending samples.
    pub examples: Vec<ClfViolation>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NondegeneracyCheck {
    pub passed: bool,
    pub big_m: Option<f64>,
    pub failure: Option<String>,
    pub geometry: Option<GeometryReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub model: ModelSpec,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub expected_status: AssumptionStatus,
    pub region: Option<SublevelRegion>,
    pub properness_failure: Option<String>,
    pub constants: Option<CertificateConstants>,
    pub estimates: Vec<EstimateReport>,
    pub clf: ClfCheck,
    pub nondegeneracy: NondegeneracyCheck,
    pub passed: bool,
}

fn clf_check(cfg: &ExperimentConfig, model: &Model) -> Result<ClfCheck, ExperimentError> {
    let d = model.descriptor.state_dim;
    let radius = cfg.estimation.verify_radius.unwrap_or(model.descriptor.check_radius);
    let halton = HaltonBox::new(vec![-radius; d], vec![radius; d], cfg.seed);
    let samples: Vec<StateVector> = (0..cfg.estimation.verify_samples as u64)
        .map(|i| StateVector::new(halton.point(i)))
        .collect::<Result<_, _>>()?;
    let report = verify_clf_pointwise(model.cert(), model.sys(), &samples)?;
    Ok(ClfCheck {
        radius,
        n_samples: report.n_samples,
        n_skipped: report.n_skipped,
        max_margin: report.max_margin,
        n_violations: report.violations.len(),
        positivity_violations: report.positivity_violations.len(),
        examples: report.violations.iter().take(5).cloned().collect(),
        passed: report.passed(),
    })
}

/// Audits the certificate: pointwise decrease on a box, properness of
/// `B(x₀)`, the sampled constants and non-degeneracy.
pub fn audit(cfg: &ExperimentConfig, model: &Model) -> Result<VerifyReport, ExperimentError> {
    let clf = clf_check(cfg, model)?;
    let x0 = cfg.x0();
    let mut report = VerifyReport {
        model: cfg.model.clone(),
        seed: cfg.seed,
        x0: x0.clone(),
        expected_status: model.descriptor.expected_status,
        region: None,
        properness_failure: None,
        constants: None,
        estimates: Vec::new(),
        clf,
        nondegeneracy: NondegeneracyCheck { passed: false, big_m: None, failure: None, geometry: None },
        passed: false,
    };
    let region = match bound_sublevel_box(model.cert(), &x0, &tau_min_options(cfg).boxing) {
        Ok(r) => r,
        Err(e @ CertError::Properness { .. }) => {
            report.properness_failure = Some(e.to_string());
            return Ok(report);
        }
        Err(e) => return Err(e.into()),
    };
    let opts = sampling_options(cfg);
    let known = model.descriptor.known_constants;
    let kappa = match known.kappa {
        Some(k) => k,
        None => {
            let r = estimate_kappa(model.sys(), model.cert(), &region, &opts)?;
            let v = r.value;
            report.estimates.push(r);
            v
        }
    };
    let nu = match known.nu {
        Some(n) => n,
        None => {
            let r = estimate_nu(model.cert(), &region, &opts)?;
            let v = r.value;
            report.estimates.push(r);
            v
        }
    };
    let rho = estimate_rho(model.cert().rate(), region.level)?;
    match estimate_big_m(model.sys(), model.cert(), &region, &opts) {
        Ok(m) => {
            let big_m = m.value;
            report.estimates.push(m);
            let geometry = check_nondegeneracy_geometry(model.sys(), model.cert(), &region, big_m, &opts);
            report.nondegeneracy = NondegeneracyCheck {
                passed: geometry.passed,
                big_m: Some(big_m),
                failure: (!geometry.passed).then(|| "sampled angle or speed condition fails".to_string()),
                geometry: Some(geometry),
            };
            let prov = Provenance::Sampled {
                n_samples: opts.n_samples,
                safety_factor: opts.safety_factor,
                seed: opts.seed,
            };
            report.constants = Some(CertificateConstants::new(kappa, nu, big_m, rho, prov)?);
        }
        Err(e @ CertError::Nondegeneracy { .. }) => {
            report.nondegeneracy.failure = Some(e.to_string());
        }
        Err(e) => return Err(e.into()),
    }
    report.region = Some(region);
    report.passed = report.clf.passed && report.nondegeneracy.passed;
    Ok(report)
}

pub fn verify(cfg: &ExperimentConfig, out: &Path) -> Result<CommandOutput, ExperimentError> {
    cfg.validate()?;
    let model = cfg.model.build()?;
    let report = audit(cfg, &model)?;
    prepare_dir(out)?;
    let path = out.join(&cfg.output.report);
    write_json(&path, &report)?;
    let exit_code = if report.passed { EXIT_OK } else { EXIT_FAILURE };
    Ok(CommandOutput { exit_code, report: to_value(&report), files: vec![path] })
}

// ---------------------------------------------------------------------------
// dwell

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicDwell {
    pub sigma_tilde: f64,
    #[serde(rename = "K")]
    pub k_big: f64,
    /// Recommended check period: the sampled `inf τ⁰` over `B(x₀)`.
    pub h: f64,
    pub report: TauMinReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellSweepRow {
    pub value: f64,
    pub tau_min: f64,
    pub tau0_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub policy: String,
    pub horizon: f64,
    pub n_events: usize,
    pub observed_min_dwell: Option<f64>,
    pub tau_min: f64,
    pub termination: Option<Termination>,
    pub error: Option<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellReport {
    pub model: ModelSpec,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub sigma: f64,
    pub assumptions_passed: bool,
    pub forced: bool,
    pub constants: CertificateConstants,
    pub tau_min: TauMinReport,
    /// Time-triggered period `τ*` (equal to `τ_min`).
    pub recommended_period: f64,
    pub periodic: PeriodicDwell,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_axis: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<DwellSweepRow>>,
    pub cross_check: CrossCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DwellRefusal {
    error: String,
    audit: VerifyReport,
}

/// `τ_min` and `τ⁰_min` from fixed constants; the global-constant bound is
/// the same at every anchor, so no anchor sampling is needed.
fn dwell_pair(
    c: CertificateConstants,
    mode: GammaMode,
    sigma: f64,
    sigma_tilde: f64,
    k_big: f64,
    safety: f64,
) -> Result<(f64, f64), ExperimentError> {
    let tau = tau_select(&DwellInputs::new(c, sigma, mode))?.value / safety;
    let tau0 = tau0_select(&DwellInputs::new(c, sigma, mode).with_periodic(sigma_tilde, k_big))?.value / safety;
    Ok((tau, tau0))
}

pub fn dwell(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<CommandOutput, ExperimentError> {
    cfg.validate()?;
    let model = cfg.model.build()?;
    let audit = audit(cfg, &model)?;
    prepare_dir(out)?;
    let path = out.join(&cfg.output.report);
    let refuse = |error: String, audit: VerifyReport| -> Result<CommandOutput, ExperimentError> {
        let r = DwellRefusal { error, audit };
        write_json(&path, &r)?;
        Ok(CommandOutput { exit_code: EXIT_FAILURE, report: to_value(&r), files: vec![path.clone()] })
    };
    if !audit.passed && !force {
        return refuse("assumptions fail; rerun with --force to estimate anyway".into(), audit);
    }
    let constants = match initial_constants(cfg, &model) {
        Ok((c, _)) => c,
        Err(e) => return refuse(format!("constants unavailable: {e}"), audit),
    };
    let mode = GammaMode::for_rate(model.cert().rate())?;
    let spec = &cfg.policy;
    let opts = tau_min_options(cfg);
    let x0 = cfg.x0();
    let region = match &audit.region {
        Some(r) => r.clone(),
        None => return refuse("sublevel set of x0 could not be bounded".into(), audit),
    };
    let known = model.descriptor.known_constants;
    let tau_min = crate::dwell::tau_min_over_sublevel(
        model.sys(),
        model.cert(),
        &region,
        &known,
        crate::dwell::DwellKind::Tau { sigma: spec.sigma },
        &opts,
    )?;
    let (sigma_tilde, k_big) = (spec.sigma_tilde_or_default(), spec.k_big_or_default());
    let tau0 = crate::dwell::tau_min_over_sublevel(
        model.sys(),
        model.cert(),
        &region,
        &known,
        crate::dwell::DwellKind::Tau0 { sigma: spec.sigma, sigma_tilde, k_big },
        &opts,
    )?;

    let (sweep_axis, sweep) = match &cfg.sweep {
        Some(SweepSpec::Sigma(values)) => {
            let rows = values
                .iter()
                .map(|&s| {
                    let st = spec.sigma_tilde.unwrap_or(0.5 * (1.0 + s));
                    let (tau, tau0) = dwell_pair(constants, mode, s, st, k_big, opts.safety)?;
                    Ok(DwellSweepRow { value: s, tau_min: tau, tau0_min: tau0 })
                })
                .collect::<Result<Vec<_>, ExperimentError>>()?;
            (Some("sigma".to_string()), Some(rows))
        }
        Some(SweepSpec::KBig(values)) => {
            let rows = values
                .iter()
                .map(|&k| {
                    let (tau, tau0) = dwell_pair(constants, mode, spec.sigma, sigma_tilde, k, opts.safety)?;
                    Ok(DwellSweepRow { value: k, tau_min: tau, tau0_min: tau0 })
                })
                .collect::<Result<Vec<_>, ExperimentError>>()?;
            (Some("K".to_string()), Some(rows))
        }
        Some(SweepSpec::SigmaTilde(values)) => {
            let rows = values
                .iter()
                .map(|&st| {
                    let (tau, tau0) = dwell_pair(constants, mode, spec.sigma, st, k_big, opts.safety)?;
                    Ok(DwellSweepRow { value: st, tau_min: tau, tau0_min: tau0 })
                })
                .collect::<Result<Vec<_>, ExperimentError>>()?;
            (Some("sigma_tilde".to_string()), Some(rows))
        }
        _ => (None, None),
    };

    let horizon = cfg.horizon();
    let event = TriggerPolicy::EventTriggered { sigma: spec.sigma };
    let cross_check = match run_closed_loop(model.sys(), model.cert(), &event, &x0, &cfg.integrator_config()) {
        Ok(traj) => {
            let stats = run_stats(&traj);
            CrossCheck {
                policy: "event".into(),
                horizon,
                n_events: stats.n_events,
                observed_min_dwell: stats.min_dwell,
                tau_min: tau_min.value,
                termination: Some(traj.termination),
                error: None,
                passed: stats.min_dwell.map_or(true, |m| m >= tau_min.value) && !traj.termination.is_anomaly(),
            }
        }
        Err(e) => CrossCheck {
            policy: "event".into(),
            horizon,
            n_events: 0,
            observed_min_dwell: None,
            tau_min: tau_min.value,
            termination: None,
            error: Some(e.to_string()),
            passed: false,
        },
    };

    let report = DwellReport {
        model: cfg.model.clone(),
        seed: cfg.seed,
        x0,
        sigma: spec.sigma,
        assumptions_passed: audit.passed,
        forced: force,
        constants,
        recommended_period: tau_min.value,
        tau_min,
        periodic: PeriodicDwell { sigma_tilde, k_big, h: tau0.value, report: tau0 },
        sweep_axis,
        sweep,
        cross_check,
    };
    write_json(&path, &report)?;
    Ok(CommandOutput { exit_code: EXIT_OK, report: to_value(&report), files: vec![path] })
}

// ---------------------------------------------------------------------------
// sweep

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub axis: String,
    pub value: String,
    pub policy: String,
    /// `ok`, `anomaly` or `error`.
    pub status: String,
    pub error: Option<String>,
    pub termination: Option<Termination>,
    pub clock: Option<f64>,
    pub n_events: Option<usize>,
    pub first_event_time: Option<f64>,
    pub last_event_time: Option<f64>,
    pub min_dwell: Option<f64>,
    pub max_dwell: Option<f64>,
    pub mean_event_frequency: Option<f64>,
    pub triggered_min_dwell: Option<f64>,
    pub triggered_max_dwell: Option<f64>,
    pub triggered_event_frequency: Option<f64>,
    pub rate_certificate_ok: Option<bool>,
    pub first_event_bound: Option<f64>,
}

fn sweep_row(base: &ExperimentConfig, spec: &SweepSpec, i: usize) -> SweepRow {
    let mut row = SweepRow {
        index: i,
        axis: spec.axis().to_string(),
        value: String::new(),
        policy: String::new(),
        status: "error".into(),
        error: None,
        termination: None,
        clock: None,
        n_events: None,
        first_event_time: None,
        last_event_time: None,
        min_dwell: None,
        max_dwell: None,
        mean_event_frequency: None,
        triggered_min_dwell: None,
        triggered_max_dwell: None,
        triggered_event_frequency: None,
        rate_certificate_ok: None,
        first_event_bound: None,
    };
    let cfg = match spec.apply(base, i) {
        Ok((c, label)) => {
            row.value = label;
            c
        }
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    row.policy = serde_json::to_value(cfg.policy.policy).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    if let ModelSpec::ZenoPolar { r_star, .. } = cfg.model {
        row.first_event_bound = Some(zeno_first_event_bound(r_star));
    }
    let run = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    row.clock = run.derivation.period.or(run.derivation.h);
    let traj = match &run.result {
        Ok(t) => t,
        Err(e) => {
            row.status = "anomaly".into();
            row.error = Some(e.to_string());
            return row;
        }
    };
    let s = run_stats(traj);
    row.status = if traj.termination.is_anomaly() { "anomaly" } else { "ok" }.into();
    row.termination = Some(traj.termination);
    row.n_events = Some(s.n_events);
    row.first_event_time = s.first_event_time;
    row.last_event_time = Some(s.last_event_time);
    row.min_dwell = s.min_dwell;
    row.max_dwell = s.max_dwell;
    row.mean_event_frequency = s.mean_event_frequency;
    row.triggered_min_dwell = s.triggered_min_dwell;
    row.triggered_max_dwell = s.triggered_max_dwell;
    row.triggered_event_frequency = s.triggered_event_frequency;
    match check_rate_certificate(traj, run.model.cert()) {
        Ok(c) => row.rate_certificate_ok = Some(c.passed()),
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Thread cap from `CLF_ETC_THREADS`; `None` leaves rayon's default.
pub fn thread_cap() -> Result<Option<usize>, ExperimentError> {
    match std::env::var("CLF_ETC_THREADS") {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(ExperimentError::Config(format!("CLF_ETC_THREADS must be a positive integer, got {s:?}"))),
            Ok(n) => Ok(Some(n)),
        },
    }
}

/// Runs every point of the sweep axis, in parallel, and returns the rows in
/// axis order.
pub fn sweep_rows(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<Vec<SweepRow>, ExperimentError> {
    cfg.validate()?;
    let Some(spec) = &cfg.sweep else {
        return Err(ExperimentError::Config("no sweep axis declared".into()));
    };
    let mut base = cfg.clone();
    base.sweep = None;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| ExperimentError::Config(e.to_string()))?;
    Ok(pool.install(|| (0..spec.len()).into_par_iter().map(|i| sweep_row(&base, spec, i)).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SweepSummary {
    model: ModelSpec,
    seed: u64,
    axis: String,
    n_rows: usize,
    n_ok: usize,
    n_anomaly: usize,
    n_error: usize,
    table: PathBuf,
}

pub fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<CommandOutput, ExperimentError> {
    let rows = sweep_rows(cfg, thread_cap()?)?;
    prepare_dir(out)?;
    let path = out.join(&cfg.output.sweep);
    let mut w = csv::Writer::from_path(&path).map_err(crate::sim::export::ExportError::from)?;
    for r in &rows {
        w.serialize(r).map_err(crate::sim::export::ExportError::from)?;
    }
    w.flush()?;
    let count = |s: &str| rows.iter().filter(|r| r.status == s).count();
    let summary = SweepSummary {
        model: cfg.model.clone(),
        seed: cfg.seed,
        axis: cfg.sweep.as_ref().map(|s| s.axis().to_string()).unwrap_or_default(),
        n_rows: rows.len(),
        n_ok: count("ok"),
        n_anomaly: count("anomaly"),
        n_error: count("error"),
        table: path.clone(),
    };
    Ok(CommandOutput { exit_code: EXIT_OK, report: to_value(&summary), files: vec![path] })
}

// ---------------------------------------------------------------------------
// stats

pub fn stats(csv_path: &Path) -> Result<CommandOutput, ExperimentError> {
    let table = read_trajectory_csv(fs::File::open(csv_path)?)?;
    let s = stats_from_event_times(&table.event_times(), None);
    Ok(CommandOutput { exit_code: EXIT_OK, report: to_value(&s), files: Vec::new() })
}
