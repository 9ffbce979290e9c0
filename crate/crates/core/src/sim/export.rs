//! Trajectory CSV I/O and post-hoc checks on recorded runs.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::engine::Trajectory;
use crate::dynamics::{ClfCertificate, DynamicsError};

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed trajectory file: {0}")]
    Format(String),
}

pub fn csv_header(d: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=d).map(|i| format!("x{i}")));
    h.extend((1..=m).map(|i| format!("u{i}")));
    h.extend(["V", "W", "event_flag"].map(String::from));
    h
}

/// Writes `t,x1..xd,u1..um,V,W,event_flag`, with floats in shortest
/// round-trip form.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<(), ExportError> {
    let (d, m) = traj.samples.first().map_or((0, 0), |s| (s.x.len(), s.u.len()));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(d, m))?;
    for s in &traj.samples {
        let mut row = Vec::with_capacity(d + m + 4);
        row.push(s.t.to_string());
        row.extend(s.x.iter().map(f64::to_string));
        row.extend(s.u.iter().map(f64::to_string));
        row.push(s.v.to_string());
        row.push(s.w.to_string());
        row.push(if s.event { "1" } else { "0" }.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parsed trajectory table.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub state_dim: usize,
    pub input_dim: usize,
    pub rows: Vec<Vec<f64>>,
}

impl TrajectoryTable {
    pub fn event_times(&self) -> Vec<f64> {
        let flag = 1 + self.state_dim + self.input_dim + 2;
        self.rows.iter().filter(|r| r[flag] != 0.0).map(|r| r[0]).collect()
    }
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<TrajectoryTable, ExportError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let d = header.iter().filter(|h| h.starts_with('x')).count();
    let m = header.iter().filter(|h| h.starts_with('u')).count();
    if header != csv_header(d, m) {
        return Err(ExportError::Format(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let row = row.map_err(|e| ExportError::Format(format!("line {}: {e}", rows.len() + 2)))?;
        if row.len() != header.len() {
            return Err(ExportError::Format(format!("line {}: wrong column count", rows.len() + 2)));
        }
        rows.push(row);
    }
    Ok(TrajectoryTable { state_dim: d, input_dim: m, rows })
}

/// Comparison of a run against `V(x(t)) ≤ Γ⁻¹(Γ(V(x₀)) − σt)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCheck {
    pub n_points: usize,
    pub n_violations: usize,
    /// Largest `V − bound` seen (negative when the bound is never reached).
    pub max_excess: f64,
    pub slack: f64,
    /// Largest increase of `V` between consecutive recorded points.
    pub max_increase: f64,
    pub monotone: bool,
}

impl RateCheck {
    pub fn passed(&self) -> bool {
        self.n_violations == 0
    }
}

/// Checks every recorded point with slack `1e-6·(1 + V(x₀))`, and that `V`
/// never increases by more than `1e-9·V(x₀)` between recorded points.
pub fn check_rate_certificate(traj: &Trajectory, cert: &dyn ClfCertificate) -> Result<RateCheck, DynamicsError> {
    let v0 = traj.v0();
    let slack = 1e-6 * (1.0 + v0);
    let map = cert.energy_map();
    let mut n_violations = 0;
    let mut max_excess = f64::NEG_INFINITY;
    let mut max_increase = f64::NEG_INFINITY;
    let t0 = traj.samples.first().map_or(0.0, |s| s.t);
    for (i, s) in traj.samples.iter().enumerate() {
        let bound = map.convergence_bound(traj.sigma, v0, s.t - t0)?;
        let excess = s.v - bound;
        max_excess = max_excess.max(excess);
        if excess > slack {
            n_violations += 1;
        }
        if i > 0 {
            max_increase = max_increase.max(s.v - traj.samples[i - 1].v);
        }
    }
    Ok(RateCheck {
        n_points: traj.samples.len(),
        n_violations,
        max_excess,
        slack,
        max_increase,
        monotone: max_increase <= 1e-9 * v0,
    })
}
