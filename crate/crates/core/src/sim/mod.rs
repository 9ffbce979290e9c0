//! Hybrid closed-loop simulation and its artifacts.

pub mod dopri;
pub mod engine;
pub mod export;
pub mod stats;

pub use engine::{
    integrate_frozen, locate_event, run_closed_loop, EventRecord, IntegratorConfig, Sample, Segment, SimError,
    Termination, Trajectory,
};
pub use stats::{run_stats, RunStats};
