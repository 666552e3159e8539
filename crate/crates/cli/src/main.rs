//! Command-line frontend: `simulate`, `fuse`, `evaluate`, `plot`.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error,
//! 3 numeric/gauge failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use geofuse_core::io::{EvaluateOptions, RunConfig, ScenarioConfig};
use geofuse_core::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(
    name = "geofuse",
    about = "Fuse drifting local odometry with global sensors via pose-graph optimization",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic ground truth and sensor stream files
    Simulate {
        /// scenario config file (flat key = value)
        #[arg(long)]
        scenario: PathBuf,
        /// RNG seed; overrides the scenario file
        #[arg(long)]
        seed: Option<u64>,
        /// output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay sensor files through the pose graph and write fused trajectories
    Fuse {
        /// run config file (flat key = value)
        #[arg(long)]
        config: PathBuf,
        /// output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare an estimated trajectory against ground truth (ATE, RPE)
    Evaluate {
        /// estimated trajectory file
        #[arg(long)]
        est: PathBuf,
        /// ground-truth trajectory file
        #[arg(long)]
        gt: PathBuf,
        /// RPE segment lengths in meters, comma separated
        #[arg(long, value_delimiter = ',')]
        rpe_lengths: Option<Vec<f64>>,
        /// timestamp association tolerance, seconds
        #[arg(long)]
        max_dt: Option<f64>,
        /// similarity alignment (rotation, translation, and scale)
        #[arg(long)]
        similarity: bool,
        /// output directory for report.txt / report.kv
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit aligned x/y/z overlay series for any number of trajectories
    Plot {
        /// output data file
        #[arg(long)]
        out: PathBuf,
        /// trajectory files; the first is the alignment reference
        #[arg(required = true)]
        trajectories: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Simulate { scenario, seed, out } => {
            let mut sc = ScenarioConfig::load(&scenario)?;
            if let Some(seed) = seed {
                sc.seed = seed;
            }
            let outputs = pipeline::run_simulate(&sc, &out)?;
            println!("wrote {}", outputs.truth.display());
            println!("wrote {}", outputs.odometry.display());
            println!("wrote {}", outputs.gps.display());
            println!("wrote {}", outputs.mag.display());
            println!("wrote {}", outputs.baro.display());
            Ok(())
        }
        Command::Fuse { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let summary = pipeline::run_fuse(&cfg, &out)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "fused {} nodes over {} optimization cycles",
                summary.nodes, summary.cycles
            );
            println!("wrote {}", summary.fused_path.display());
            println!("wrote {}", summary.highrate_path.display());
            println!("wrote {}", summary.log_path.display());
            Ok(())
        }
        Command::Evaluate { est, gt, rpe_lengths, max_dt, similarity, out } => {
            let mut options = EvaluateOptions::default();
            if let Some(lengths) = rpe_lengths {
                options.rpe_lengths = lengths;
            }
            if let Some(dt) = max_dt {
                options.association_tolerance = dt;
            }
            options.similarity = similarity;
            pipeline::run_evaluate(&est, &gt, &options, &out)?;
            Ok(())
        }
        Command::Plot { out, trajectories } => {
            pipeline::run_plot(&trajectories, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
