//! Experiment front end: JSON configs, policy construction with derived
//! periods, and the commands behind the `clf-etc` binary.

pub mod commands;
pub mod config;
pub mod derive;
pub mod svg;

use crate::certificates::CertError;
use crate::dynamics::DynamicsError;
use crate::scheduling::ScheduleError;
use crate::sim::export::ExportError;
use crate::sim::SimError;

pub use commands::{dwell, simulate, stats, sweep, verify, CommandOutput};
pub use config::{ExperimentConfig, ModelSpec, PolicyKind, PolicySpec, SweepSpec};

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_ANOMALY: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Cert(#[from] CertError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Export(#[from] ExportError),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Sim(SimError::FreshSampleViolation { .. } | SimError::StepUnderflow(_)) => EXIT_ANOMALY,
            _ => EXIT_FAILURE,
        }
    }
}
