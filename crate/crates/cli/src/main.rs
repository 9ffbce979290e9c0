use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clf_etc::experiment::{self, CommandOutput, ExperimentConfig, ExperimentError, EXIT_FAILURE};

/// Event-, self-, time-triggered and periodic event-triggered control from
/// control Lyapunov functions.
#[derive(Debug, Parser)]
#[command(name = "clf-etc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment description (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one closed-loop simulation and write the trajectory and statistics.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write an SVG plot.
        #[arg(long)]
        plot: bool,
    },
    /// Audit the certificate and report the sampled constants.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the minimal inter-event time and recommended periods.
    Dwell {
        #[command(flatten)]
        common: Common,
        /// Estimate even when an assumption fails.
        #[arg(long)]
        force: bool,
    },
    /// Run the sweep axis of the config and write one table row per run.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Event statistics of a trajectory CSV.
    Stats {
        /// Trajectory file written by `simulate`.
        csv: PathBuf,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, ExperimentError> {
    let text = std::fs::read_to_string(&common.config)?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<CommandOutput, ExperimentError> {
    let with = |common: &Common, f: &dyn Fn(&ExperimentConfig, &Path) -> Result<CommandOutput, ExperimentError>| {
        let cfg = load(common)?;
        f(&cfg, &common.out)
    };
    match cli.command {
        Command::Simulate { common, plot } => with(&common, &|c, o| experiment::simulate(c, o, plot)),
        Command::Verify { common } => with(&common, &experiment::verify),
        Command::Dwell { common, force } => with(&common, &|c, o| experiment::dwell(c, o, force)),
        Command::Sweep { common } => with(&common, &experiment::sweep),
        Command::Stats { csv } => experiment::stats(&csv),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            println!("{}", serde_json::to_string_pretty(&out.report).expect("report serializes"));
            for f in &out.files {
                eprintln!("wrote {}", f.display());
            }
            ExitCode::from(out.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.exit_code() == 0 { EXIT_FAILURE } else { e.exit_code() } as u8)
        }
    }
}
