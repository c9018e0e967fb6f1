//! `wavebench`: simulate, generate data, train surrogates, plan and benchmark.

mod commands;
mod config;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wavebench_core::aem::SurrogateKind;
use wavebench_core::bench::ReportFormat;
use wavebench_core::mpc::Task;
use wavebench_core::robot::SpaceName;

#[derive(Parser, Debug)]
#[command(name = "wavebench", version, about = "Acoustic scattering control testbed")]
pub struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "WAVEBENCH_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// One uncontrolled episode with the initial design held fixed.
    Simulate(SimulateArgs),
    /// Random-action episodes written as a dataset file.
    GenData(GenDataArgs),
    /// Fit a surrogate to a dataset.
    Train(TrainArgs),
    /// Long-horizon prediction curves of one or more checkpoints.
    EvalPred(EvalPredArgs),
    /// One closed-loop episode.
    Control(ControlArgs),
    /// A full benchmark table from a spec file.
    Bench(BenchArgs),
    /// Best frozen design by brute force.
    Oracle(OracleArgs),
    /// Line plots of a CSV, or bars of a report CSV, as SVG.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "P1")]
    pub space: SpaceName,
    /// Action periods to simulate; defaults to the episode length.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Write field snapshots every this many action periods.
    #[arg(long)]
    pub snapshot_stride: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub episodes: usize,
    #[arg(long)]
    pub space: SpaceName,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: SurrogateKind,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Initialization and batch seed; overrides `train_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalPredArgs {
    /// Checkpoint to evaluate; repeat for several models.
    #[arg(long = "ckpt", required = true)]
    pub ckpts: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub horizon: usize,
    /// Evaluate on the last this many episodes of the dataset.
    #[arg(long, default_value_t = 5)]
    pub episodes: usize,
    /// Also roll every AEM with its damping removed.
    #[arg(long)]
    pub ablation: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ControlArgs {
    /// Planner model; without it the random controller runs.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long, default_value = "P1")]
    pub space: SpaceName,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides `mpc_horizon`.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Overrides `sigma_hi`.
    #[arg(long)]
    pub sigma_hi: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Format printed to stdout; both are written to the output directory.
    #[arg(long, default_value = "markdown")]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long, default_value = "P1")]
    pub space: SpaceName,
    /// Lattice positions per axis; radii get half as many levels, rounded up.
    #[arg(long, default_value_t = 9)]
    pub resolution: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output image; only `.svg` is supported.
    #[arg(long)]
    pub out: PathBuf,
    /// Column to use as the x axis; defaults to `t`, then `step`, then the first column.
    #[arg(long)]
    pub x: Option<String>,
    /// Only plot rows whose `episode` column equals this.
    #[arg(long)]
    pub episode: Option<String>,
    #[arg(long)]
    pub title: Option<String>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<wavebench_core::Error>() {
            return e.exit_code() as u8;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return 4;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
