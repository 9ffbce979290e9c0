//! Per-run event statistics.

use serde::{Deserialize, Serialize};

use super::engine::{Termination, Trajectory};

/// Event statistics of a run.
///
/// `n_events` counts the initial sample at `t₀`. The plain dwell fields cover
/// every inter-event interval; the `triggered_*` fields only cover intervals
/// between events after `t₀`, i.e. they ignore the wait for the first trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub n_events: usize,
    /// First event time after `t₀`.
    pub first_event_time: Option<f64>,
    pub last_event_time: f64,
    pub min_dwell: Option<f64>,
    pub max_dwell: Option<f64>,
    /// `(n_events − 1)/(t_last − t₀)`.
    pub mean_event_frequency: Option<f64>,
    pub triggered_min_dwell: Option<f64>,
    pub triggered_max_dwell: Option<f64>,
    /// `(n_events − 2)/(t_last − t₁)`: intervals per second after the first trigger.
    pub triggered_event_frequency: Option<f64>,
    pub termination: Option<Termination>,
}

fn min_max(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (Some(min), Some(max))
}

/// Statistics from the sorted list of event times (the first being `t₀`).
pub fn stats_from_event_times(times: &[f64], termination: Option<Termination>) -> RunStats {
    let dwells: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let (min_dwell, max_dwell) = min_max(&dwells);
    let triggered = if dwells.len() > 1 { &dwells[1..] } else { &[][..] };
    let (triggered_min_dwell, triggered_max_dwell) = min_max(triggered);
    let n = times.len();
    let last = times.last().copied().unwrap_or(0.0);
    let rate = |count: usize, span: f64| if count > 0 && span > 0.0 { Some(count as f64 / span) } else { None };
    RunStats {
        n_events: n,
        first_event_time: times.get(1).copied(),
        last_event_time: last,
        min_dwell,
        max_dwell,
        mean_event_frequency: if n >= 2 { rate(n - 1, last - times[0]) } else { None },
        triggered_min_dwell,
        triggered_max_dwell,
        triggered_event_frequency: if n >= 3 { rate(n - 2, last - times[1]) } else { None },
        termination,
    }
}

pub fn run_stats(traj: &Trajectory) -> RunStats {
    let times: Vec<f64> = traj.events.iter().map(|e| e.t).collect();
    stats_from_event_times(&times, Some(traj.termination))
}
