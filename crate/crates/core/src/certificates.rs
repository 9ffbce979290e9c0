//! Sampled estimates of the sublevel-set constants κ, ν, M, ρ and μ.
//!
//! Each supremum over a continuum is replaced by the maximum over a seeded
//! low-discrepancy sample of `B(x*) = {x : V(x) ≤ V(x*)}`, multiplied by a
//! safety factor. The results are sample-certified, not proof-certified.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{dot, feedback_at, norm, ClfCertificate, ControlSystem, DynamicsError, RateFunction};
use crate::sampling::{indexed_rng, random_unit_vector, HaltonBox};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CertError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-degeneracy violated: {reason} (ratio {ratio:e} at x = {x:?})")]
    Nondegeneracy { reason: String, ratio: f64, x: Vec<f64> },
    #[error("V is not proper along direction {direction:?}: level {level} not exceeded")]
    Properness { direction: Vec<f64>, level: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// `B(x*)` together with an axis-aligned box that covers it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SublevelRegion {
    pub anchor: Vec<f64>,
    pub level: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SublevelRegion {
    /// `B(x*) = {0}`.
    pub fn is_degenerate(&self) -> bool {
        self.level <= 0.0
    }

    /// Largest edge of the bounding box.
    pub fn box_scale(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).fold(0.0, f64::max)
    }

    pub fn contains(&self, cert: &dyn ClfCertificate, x: &[f64]) -> bool {
        cert.value(x) <= self.level
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    ClosedForm,
    Sampled { n_samples: usize, safety_factor: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateConstants {
    pub kappa: f64,
    pub nu: f64,
    pub big_m: f64,
    pub rho: f64,
    pub mu: f64,
    pub provenance: Provenance,
}

impl CertificateConstants {
    /// Builds the record, deriving `μ` from `κ` and `ν`.
    pub fn new(kappa: f64, nu: f64, big_m: f64, rho: f64, provenance: Provenance) -> Result<Self, CertError> {
        for (name, v) in [("kappa", kappa), ("nu", nu), ("rho", rho)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CertError::Domain(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        if !(big_m > 0.0 && big_m.is_finite()) {
            return Err(CertError::Domain(format!("M must be finite and > 0, got {big_m}")));
        }
        Ok(Self { kappa, nu, big_m, rho, mu: compute_mu(kappa, nu), provenance })
    }
}

/// `μ = √e·max{κ, ν(1 + κ√e)}`.
pub fn compute_mu(kappa: f64, nu: f64) -> f64 {
    let se = 0.5f64.exp();
    se * kappa.max(nu * (1.0 + kappa * se))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    pub n_samples: usize,
    pub safety_factor: f64,
    pub seed: u64,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self { n_samples: 2000, safety_factor: 1.25, seed: 0 }
    }
}

impl SamplingOptions {
    fn provenance(&self) -> Provenance {
        Provenance::Sampled { n_samples: self.n_samples, safety_factor: self.safety_factor, seed: self.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub constant: String,
    pub value: f64,
    pub n_samples: usize,
    pub safety_factor: f64,
    pub argmax_point: Option<Vec<f64>>,
    pub seed: u64,
}

impl EstimateReport {
    fn new(constant: &str, value: f64, opts: &SamplingOptions, argmax_point: Option<Vec<f64>>) -> Self {
        Self {
            constant: constant.to_string(),
            value,
            n_samples: opts.n_samples,
            safety_factor: opts.safety_factor,
            argmax_point,
            seed: opts.seed,
        }
    }

    fn zero(constant: &str, opts: &SamplingOptions) -> Self {
        Self::new(constant, 0.0, opts, None)
    }
}

// Stream identifiers keep the random draws of different estimators apart.
const STREAM_PAIRS: u64 = 11;
const STREAM_SHELLS: u64 = 13;
const STREAM_RAYS: u64 = 17;

/// The first `n` low-discrepancy points of the bounding box that fall in
/// `B(x*)`, preceded by the anchor. Prefix-stable in `n`.
pub fn sublevel_samples(cert: &dyn ClfCertificate, region: &SublevelRegion, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut out = vec![region.anchor.clone()];
    if region.is_degenerate() {
        return out;
    }
    let halton = HaltonBox::new(region.lo.clone(), region.hi.clone(), seed);
    let cap = 200 * n as u64 + 1000;
    let mut i = 0;
    while out.len() < n && i < cap {
        let p = halton.point(i);
        if cert.value(&p) <= region.level {
            out.push(p);
        }
        i += 1;
    }
    out
}

/// Maximum of `values` with the smallest index winning ties.
fn argmax(values: &[f64]) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((b, _)) if v <= b => {}
            _ => best = Some((v, i)),
        }
    }
    best
}

fn spectral_norm(rows: usize, cols: usize, entries: &[f64]) -> f64 {
    DMatrix::from_row_slice(rows, cols, entries).singular_values().max()
}

/// Central-difference Jacobian of `f: ℝᵈ → ℝⁿ` at `x`, row-major.
fn fd_jacobian(x: &[f64], n_out: usize, f: &dyn Fn(&[f64], &mut [f64])) -> Vec<f64> {
    let d = x.len();
    let mut jac = vec![0.0; n_out * d];
    let mut probe = x.to_vec();
    let mut up = vec![0.0; n_out];
    let mut down = vec![0.0; n_out];
    for j in 0..d {
        let h = 1e-6 * (1.0 + x[j].abs());
        probe[j] = x[j] + h;
        f(&probe, &mut up);
        probe[j] = x[j] - h;
        f(&probe, &mut down);
        probe[j] = x[j];
        for i in 0..n_out {
            jac[i * d + j] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    jac
}

/// Supremum over `B(x*)` of the Lipschitz quotient of a map `g: ℝᵈ → ℝᵈ`.
///
/// Three families of samples are used: consecutive sample pairs, perturbation
/// pairs `(x, x + δ)` with `|δ| ∈ {1e-4, 1e-2}·box_scale`, and the spectral
/// norm of a finite-difference Jacobian at every sample.
fn lipschitz_sup(
    cert: &dyn ClfCertificate,
    region: &SublevelRegion,
    opts: &SamplingOptions,
    g: &(dyn Fn(&[f64], &mut [f64]) + Sync),
) -> (f64, Vec<f64>) {
    let pts = sublevel_samples(cert, region, opts.n_samples, opts.seed);
    let d = region.anchor.len();
    let scale = region.box_scale();
    let quotient = |a: &[f64], b: &[f64]| {
        let mut ga = vec![0.0; d];
        let mut gb = vec![0.0; d];
        g(a, &mut ga);
        g(b, &mut gb);
        let num: Vec<f64> = ga.iter().zip(&gb).map(|(p, q)| p - q).collect();
        let den: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
        let dn = norm(&den);
        if dn > 0.0 {
            norm(&num) / dn
        } else {
            0.0
        }
    };
    let values: Vec<f64> = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let x = &pts[i];
            let mut best = if i > 0 { quotient(x, &pts[i - 1]) } else { 0.0 };
            let mut rng = indexed_rng(opts.seed, STREAM_PAIRS, i as u64);
            for s in [1e-4, 1e-2] {
                let dir = random_unit_vector(&mut rng, d);
                let y: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + s * scale * b).collect();
                if cert.value(&y) <= region.level {
                    best = best.max(quotient(x, &y));
                }
            }
            let jac = fd_jacobian(x, d, &|p, out| g(p, out));
            best.max(spectral_norm(d, d, &jac))
        })
        .collect();
    match argmax(&values) {
        Some((v, i)) => (v * opts.safety_factor, pts[i].clone()),
        None => (0.0, region.anchor.clone()),
    }
}

fn check_level(region: &SublevelRegion) -> Result<(), CertError> {
    if region.level < 0.0 || region.level.is_nan() {
        return Err(CertError::Domain(format!("sublevel value must be ≥ 0, got {}", region.level)));
    }
    Ok(())
}

/// κ(x*): Lipschitz constant of `F(·, Û(x*))` on `B(x*)`.
pub fn estimate_kappa(
    sys: &dyn ControlSystem,
    cert: &dyn ClfCertificate,
    region: &SublevelRegion,
    opts: &SamplingOptions,
) -> Result<EstimateReport, CertError> {
    check_level(region)?;
    if region.is_degenerate() {
        return Ok(EstimateReport::zero("kappa", opts));
    }
    let u_star = feedback_at(cert, &region.anchor);
    let field = |x: &[f64], out: &mut [f64]| sys.rhs(x, &u_star, out);
    let (value, at) = lipschitz_sup(cert, region, opts, &field);
    Ok(EstimateReport::new("kappa", value, opts, Some(at)))
}

/// ν(x*): Lipschitz constant of `V′` on `B(x*)`.
pub fn estimate_nu(
    cert: &dyn ClfCertificate,
    region: &SublevelRegion,
    opts: &SamplingOptions,
) -> Result<EstimateReport, CertError> {
    check_level(region)?;
    if region.is_degenerate() {
        return Ok(EstimateReport::zero("nu", opts));
    }
    let grad = |x: &[f64], out: &mut [f64]| cert.gradient(x, out);
    let (value, at) = lipschitz_sup(cert, region, opts, &grad);
    Ok(EstimateReport::new("nu", value, opts, Some(at)))
}

/// `(|V′||F̄| + |F̄|²)/|V′F̄|` with `F̄(x) = F(x, Û(x))`, plus its two
/// ingredients `|F̄|/|V′|` and `cos θ = V′F̄/(|V′||F̄|)`.
fn m_ratio(sys: &dyn ControlSystem, cert: &dyn ClfCertificate, x: &[f64]) -> (f64, f64, f64) {
    let d = x.len();
    let u = feedback_at(cert, x);
    let mut grad = vec![0.0; d];
    let mut f = vec![0.0; d];
    cert.gradient(x, &mut grad);
    sys.rhs(x, &u, &mut f);
    let (ng, nf) = (norm(&grad), norm(&f));
    let w = dot(&grad, &f);
    ((ng * nf + nf * nf) / w.abs(), nf / ng, w / (ng * nf))
}

/// Maximum of the M-ratio on the shell `V = level` over `n_dirs` rays.
fn shell_max(
    sys: &dyn ControlSystem,
    cert: &dyn ClfCertificate,
    level: f64,
    n_dirs: usize,
    seed: u64,
    shell: u64,
) -> Result<f64, CertError> {
    let d = cert.state_dim();
    let values: Vec<Result<f64, CertError>> = (0..n_dirs)
        .into_par_iter()
        .map(|i| {
            let mut rng = indexed_rng(seed, STREAM_SHELLS, shell * 1_000_000 + i as u64);
            let dir = random_unit_vector(&mut rng, d);
            let r = ray_radius(cert, &dir, level)?;
            let x: Vec<f64> = dir.iter().map(|c| c * r).collect();
            Ok(m_ratio(sys, cert, &x).0)
        })
        .collect();
    let mut best = 0.0f64;
    for v in values {
        let v = v?;
        if !v.is_finite() {
            return Ok(f64::INFINITY);
        }
        best = best.max(v);
    }
    Ok(best)
}

/// M(x*): the non-degeneracy constant. Fails when a sampled ratio is not
/// finite or when the ratio grows without bound on shrinking shells
/// `V = level·10^{−2j}` around the origin.
pub fn estimate_big_m(
    sys: &dyn ControlSystem,
    cert: &dyn ClfCertificate,
    region: &SublevelRegion,
    opts: &SamplingOptions,
) -> Result<EstimateReport, CertError> {
    check_level(region)?;
    if region.is_degenerate() {
        // The ratio is 0/0 on {0}; any positive constant is admissible.
        return Ok(EstimateReport::new("big_m", 1.0, opts, None));
    }
    let pts = sublevel_samples(cert, region, opts.n_samples, opts.seed);
    let floor = 1e-12 * region.level;
    let values: Vec<f64> = pts
        .par_iter()
        .map(|x| if cert.value(x) < floor { 0.0 } else { m_ratio(sys, cert, x).0 })
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(CertError::Nondegeneracy {
            reason: "ratio is not finite".into(),
            ratio: values[i],
            x: pts[i].clone(),
        });
    }

    let shells: Vec<f64> = (0..6)
        .map(|j| shell_max(sys, cert, region.level * 10f64.powi(-2 * j), 256, opts.seed, j as u64))
        .collect::<Result<_, _>>()?;
    let diverging = shells.iter().any(|v| !v.is_finite())
        || (shells[5] > 10.0 * shells[0] && shells[3] < shells[4] && shells[4] < shells[5]);
    if diverging {
        return Err(CertError::Nondegeneracy {
            reason: format!("ratio grows toward the origin, shell maxima {shells:?}"),
            ratio: shells[5],
            x: vec![0.0; cert.state_dim()],
        });
    }

    let (best, i) = argmax(&values).expect("sample set contains the anchor");
    let best = best.max(shells.iter().cloned().fold(0.0, f64::max));
    Ok(EstimateReport::new("big_m", best * opts.safety_factor, opts, Some(pts[i].clone())))
}

/// ρ on `[0, level]`: the largest value of `max{0, −γ′(v)}`.
pub fn estimate_rho(rate: &RateFunction, level: f64) -> Result<f64, CertError> {
    if level < 0.0 || level.is_nan() {
        return Err(CertError::Domain(format!("level must be ≥ 0, got {level}")));
    }
    if rate.is_monotone() {
        return Ok(0.0);
    }
    if !rate.has_derivative() {
        return Err(CertError::Config(
            "γ is neither declared non-decreasing nor given a derivative".into(),
        ));
    }
    let neg_slope = |v: f64| (-rate.derivative(v).expect("checked above")).max(0.0);
    const N: usize = 10_000;
    let grid: Vec<f64> = (0..=N).map(|i| level * i as f64 / N as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&v| neg_slope(v)).collect();
    let (mut best, i) = argmax(&vals).expect("grid is non-empty");
    if level > 0.0 {
        // golden-section search on the neighbouring cells
        let (mut a, mut b) = (grid[i.saturating_sub(1)], grid[(i + 1).min(N)]);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        for _ in 0..80 {
            if neg_slope(c) > neg_slope(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - phi * (b - a);
            d = a + phi * (b - a);
        }
        best = best.max(neg_slope(0.5 * (a + b)));
    }
    Ok(best)
}

/// Largest `r` with `V(r·dir) ≤ level`, found by doubling then bisection.
pub fn ray_radius(cert: &dyn ClfCertificate, dir: &[f64], level: f64) -> Result<f64, CertError> {
    let at = |r: f64| {
        let x: Vec<f64> = dir.iter().map(|c| c * r).collect();
        cert.value(&x)
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut doublings = 0;
    while at(hi) <= level {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return Err(CertError::Properness { direction: dir.to_vec(), level });
        }
    }
    if doublings == 0 {
        // shrink to find a point inside, keeping hi outside
        while at(hi * 0.5) > level && hi > 1e-300 {
            hi *= 0.5;
        }
        lo = hi * 0.5;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if at(mid) <= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxOptions {
    /// Random ray directions in addition to the `2d` coordinate axes.
    pub n_directions: usize,
    /// Points sampled on each box face during the coverage check.
    pub face_samples: usize,
    pub seed: u64,
}

impl Default for BoxOptions {
    fn default() -> Self {
        Self { n_directions: 128, face_samples: 256, seed: 0 }
    }
}

/// Axis-aligned box around `B(anchor)` from ray bisection along the axes and
/// random directions, inflated by 5%, then grown by 25% until no sampled
/// point of its boundary lies in the sublevel set (at most 8 times).
pub fn bound_sublevel_box(
    cert: &dyn ClfCertificate,
    anchor: &[f64],
    opts: &BoxOptions,
) -> Result<SublevelRegion, CertError> {
    let d = cert.state_dim();
    if anchor.len() != d {
        return Err(DynamicsError::DimensionMismatch { what: "anchor", expected: d, got: anchor.len() }.into());
    }
    let level = cert.value(anchor);
    if !(level >= 0.0) {
        return Err(CertError::Domain(format!("V(anchor) = {level} is negative")));
    }
    if level == 0.0 {
        return Ok(SublevelRegion { anchor: anchor.to_vec(), level, lo: vec![0.0; d], hi: vec![0.0; d] });
    }
    let mut dirs = Vec::with_capacity(2 * d + opts.n_directions);
    for k in 0..d {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[k] = s;
            dirs.push(e);
        }
    }
    for i in 0..opts.n_directions {
        let mut rng = indexed_rng(opts.seed, STREAM_RAYS, i as u64);
        dirs.push(random_unit_vector(&mut rng, d));
    }
    let radii: Vec<Result<f64, CertError>> = dirs.par_iter().map(|dir| ray_radius(cert, dir, level)).collect();
    let mut lo = anchor.to_vec();
    let mut hi = anchor.to_vec();
    for (dir, r) in dirs.iter().zip(radii) {
        let r = r?;
        for k in 0..d {
            let c = dir[k] * r;
            lo[k] = lo[k].min(c);
            hi[k] = hi[k].max(c);
        }
    }
    let scale = |lo: &mut Vec<f64>, hi: &mut Vec<f64>, factor: f64| {
        for k in 0..d {
            let centre = 0.5 * (lo[k] + hi[k]);
            let half = 0.5 * (hi[k] - lo[k]) * factor;
            lo[k] = centre - half;
            hi[k] = centre + half;
        }
    };
    scale(&mut lo, &mut hi, 1.05);
    for _ in 0..8 {
        if faces_clear(cert, &lo, &hi, level, opts) {
            return Ok(SublevelRegion { anchor: anchor.to_vec(), level, lo, hi });
        }
        scale(&mut lo, &mut hi, 1.25);
    }
    Err(CertError::Properness { direction: vec![], level })
}

/// True when no sampled point on the faces of the box has `V ≤ level`.
fn faces_clear(cert: &dyn ClfCertificate, lo: &[f64], hi: &[f64], level: f64, opts: &BoxOptions) -> bool {
    let d = lo.len();
    if d == 1 {
        return cert.value(lo) > level && cert.value(hi) > level;
    }
    (0..d).all(|k| {
        let (flo, fhi): (Vec<f64>, Vec<f64>) =
            (0..d).filter(|&j| j != k).map(|j| (lo[j], hi[j])).unzip();
        let halton = HaltonBox::new(flo, fhi, opts.seed.wrapping_add(k as u64));
        (0..opts.face_samples as u64).all(|i| {
            let face = halton.point(i);
            [lo[k], hi[k]].iter().all(|&side| {
                let mut x = Vec::with_capacity(d);
                let mut it = face.iter();
                for j in 0..d {
                    x.push(if j == k { side } else { *it.next().expect("face point has d-1 coords") });
                }
                cert.value(&x) > level
            })
        })
    })
}

/// Values of κ and ν known in closed form; unknown entries are sampled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KnownConstants {
    pub kappa: Option<f64>,
    pub nu: Option<f64>,
}

/// κ, ν, M, ρ and μ on `region`, with the reports of every sampled estimate.
pub fn estimate_constants(
    sys: &dyn ControlSystem,
    cert: &dyn ClfCertificate,
    region: &SublevelRegion,
    known: &KnownConstants,
    opts: &SamplingOptions,
) -> Result<(CertificateConstants, Vec<EstimateReport>), CertError> {
    let mut reports = Vec::new();
    let kappa = match known.kappa {
        Some(k) if !region.is_degenerate() => k,
        Some(_) => 0.0,
        None => {
            let r = estimate_kappa(sys, cert, region, opts)?;
            let v = r.value;
            reports.push(r);
            v
        }
    };
    let nu = match known.nu {
        Some(n) if !region.is_degenerate() => n,
        Some(_) => 0.0,
        None => {
            let r = estimate_nu(cert, region, opts)?;
            let v = r.value;
            reports.push(r);
            v
        }
    };
    let m = estimate_big_m(sys, cert, region, opts)?;
    let big_m = m.value;
    reports.push(m);
    let rho = estimate_rho(cert.rate(), region.level)?;
    let provenance = opts.provenance();
    Ok((CertificateConstants::new(kappa, nu, big_m, rho, provenance)?, reports))
}

/// Outcome of the two geometric conditions equivalent to the M bound:
/// `|F̄| ≤ M|V′|` and `cos θ ≤ −1/M`, where θ is the angle between `V′` and `F̄`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub big_m: f64,
    pub max_speed_ratio: f64,
    pub max_cos_theta: f64,
    pub n_checked: usize,
    pub passed: bool,
}

pub fn check_nondegeneracy_geometry(
    sys: &dyn ControlSystem,
    cert: &dyn ClfCertificate,
    region: &SublevelRegion,
    big_m: f64,
    opts: &SamplingOptions,
) -> GeometryReport {
    let pts = sublevel_samples(cert, region, opts.n_samples, opts.seed);
    let floor = 1e-12 * region.level;
    let parts: Vec<Option<(f64, f64)>> = pts
        .par_iter()
        .map(|x| {
            if region.is_degenerate() || cert.value(x) < floor {
                None
            } else {
                let (_, speed, cos) = m_ratio(sys, cert, x);
                Some((speed, cos))
            }
        })
        .collect();
    let mut max_speed_ratio = 0.0f64;
    let mut max_cos_theta = f64::NEG_INFINITY;
    let mut n_checked = 0;
    for (speed, cos) in parts.into_iter().flatten() {
        max_speed_ratio = max_speed_ratio.max(speed);
        max_cos_theta = max_cos_theta.max(cos);
        n_checked += 1;
    }
    let passed = n_checked == 0 || (max_speed_ratio <= big_m && max_cos_theta <= -1.0 / big_m);
    GeometryReport { big_m, max_speed_ratio, max_cos_theta, n_checked, passed }
}
