//! Command-line entry point. Log level comes from the LATENTDEM_LOG
//! environment variable (error, warn, info, debug, trace).

mod commands;
mod config;
mod scene;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{OracleRequest, Overrides};

#[derive(Parser)]
#[command(
    name = "latentdem",
    about = "Blind inverse problems with annealed latent diffusion posterior sampling and EM forward-operator estimation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Run configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides run.out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Worker-pool size override
    #[arg(long)]
    jobs: Option<usize>,
    /// Write per-step trace CSVs
    #[arg(long)]
    trace: bool,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            jobs: self.jobs,
            trace: self.trace,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Blind deblurring trials: recover image and kernel from observations
    Deblur(CommonArgs),
    /// Pose-free view synthesis trials: recover view and relative pose
    Posefree(CommonArgs),
    /// Sweep skip-gradient settings and emit a benchmark table
    Bench(CommonArgs),
    /// Compare two images (and optionally kernels); JSON to stdout
    Metrics {
        a: PathBuf,
        b: PathBuf,
        /// Estimated kernel (text format)
        #[arg(long)]
        kernel: Option<PathBuf>,
        /// Reference kernel (text format)
        #[arg(long)]
        kernel_truth: Option<PathBuf>,
    },
    /// Reference implementations for ad-hoc verification
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Generate synthetic ground-truth scenes
    Synth(CommonArgs),
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Euclidean projection onto the probability simplex, both routes
    Simplex {
        #[arg(required = true, num_args = 1.., allow_hyphen_values = true)]
        values: Vec<f64>,
    },
    /// Dense vs Fourier HQS data update
    Hqs {
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        x0: PathBuf,
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 5e6)]
        delta: f64,
        #[arg(long, default_value_t = 0.01)]
        sigma: f64,
    },
    /// Closed-form linear-Gaussian posterior (isotropic prior)
    Posterior {
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        a_matrix: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        mean: f64,
        #[arg(long, default_value_t = 1.0)]
        variance: f64,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
    },
    /// Exhaustive rotation-alignment search between two images
    PoseGrid {
        #[arg(long)]
        y1: PathBuf,
        #[arg(long)]
        y2: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        resolution_deg: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("LATENTDEM_LOG"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Deblur(args) => commands::cmd_deblur(&args.config, &args.overrides()),
        Command::Posefree(args) => commands::cmd_posefree(&args.config, &args.overrides()),
        Command::Bench(args) => commands::cmd_bench(&args.config, &args.overrides()),
        Command::Metrics { a, b, kernel, kernel_truth } => {
            commands::cmd_metrics(a, b, kernel.as_deref(), kernel_truth.as_deref())
        }
        Command::Oracle(req) => commands::cmd_oracle(match req {
            OracleCommand::Simplex { values } => OracleRequest::Simplex(values.clone()),
            OracleCommand::Hqs { y, x0, kernel, lambda, delta, sigma } => OracleRequest::Hqs {
                y,
                x0,
                kernel,
                lambda: *lambda,
                delta: *delta,
                sigma: *sigma,
            },
            OracleCommand::Posterior { y, a_matrix, mean, variance, sigma } => {
                OracleRequest::Posterior {
                    y,
                    a_matrix,
                    mean: *mean,
                    variance: *variance,
                    sigma: *sigma,
                }
            }
            OracleCommand::PoseGrid { y1, y2, resolution_deg } => OracleRequest::PoseGrid {
                y1,
                y2,
                resolution_deg: *resolution_deg,
            },
        }),
        Command::Synth(args) => commands::cmd_synth(&args.config, &args.overrides()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
