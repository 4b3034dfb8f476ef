//! `ifm`: train, sample, trace and verify interaction field models.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ifm", version, about = "Interaction field matching toolkit")]
pub struct Cli {
    /// Seed for every random draw (overrides the config's `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dataset {
    Gaussian,
    SwissRoll,
    TwoGaussians,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlateArg {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    All,
    Flux,
    Caging,
    Straightness,
    Transfer,
    EfmContrast,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the superposed field at one extended point.
    FieldEval {
        #[arg(long)]
        config: PathBuf,
        /// Point as `x0,..,x{D-1},z`.
        #[arg(long, allow_hyphen_values = true)]
        at: String,
    },
    /// Train a field model and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss history CSV (default: next to the checkpoint).
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Transfer a source cloud with a trained model.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write every trace to this CSV.
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Transfer a source cloud along the exact superposed field and dump traces.
    Trace {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the terminal cloud.
        #[arg(long)]
        terminal: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run verification checks and write a JSON report.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Multiplies the sample counts of the stochastic checks.
        #[arg(long)]
        scale: Option<f64>,
    },
    /// Electrostatic transfer with and without backward lines.
    CompareEfm {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a toy point cloud.
    Generate {
        #[arg(long, value_enum)]
        dataset: Dataset,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Plate tag (default: from a `source_`/`target_` file name, else source).
        #[arg(long, value_enum)]
        plate: Option<PlateArg>,
        /// Dimension of the Gaussian dataset (swiss roll is 2-D, two-gaussians 1-D).
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Swiss-roll noise standard deviation.
        #[arg(long, default_value_t = ifm_core::verification::SWISS_NOISE)]
        noise: f64,
        /// Distance between the two-Gaussian modes.
        #[arg(long, default_value_t = 6.0)]
        separation: f64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(3);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
