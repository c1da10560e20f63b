mod error;
mod evaluate;
mod restore;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use turbrestore_core::{BitDepth, SimMode};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "turbrestore", version, about = "Restore turbulence-distorted image sequences")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "TURBRESTORE_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Restore one image from a directory of PGM frames.
    Restore(RestoreArgs),
    /// Generate a distorted sequence with ground-truth flows.
    Simulate(SimulateArgs),
    /// Compare a restored image against truth, frames and flows.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
pub struct RestoreArgs {
    /// Directory of PGM frames, read in lexical order.
    #[arg(long, required_unless_present = "replay")]
    pub input: Option<PathBuf>,
    /// Restored PGM; a directory of frames with --window.
    #[arg(long, required_unless_present = "replay")]
    pub output: Option<PathBuf>,
    #[arg(long, conflicts_with = "replay")]
    pub outer: Option<usize>,
    #[arg(long, conflicts_with = "replay")]
    pub inner: Option<usize>,
    /// Initial regularization weight; the cap follows at ten times this.
    #[arg(long, conflicts_with = "replay")]
    pub lambda: Option<f64>,
    /// Forward step size (default 0.9 / frame count).
    #[arg(long, conflicts_with = "replay")]
    pub delta: Option<f64>,
    /// Sliding-window mode: restore every frame from the K frames ending at it.
    #[arg(long, value_name = "K", conflicts_with = "replay")]
    pub window: Option<usize>,
    /// Per-iteration report (default: report.csv beside the output).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write the final flows here.
    #[arg(long)]
    pub dump_flows: Option<PathBuf>,
    /// Output sample depth.
    #[arg(long, value_enum, conflicts_with = "replay")]
    pub depth: Option<Depth>,
    /// Where to write the run manifest (default: manifest.txt beside the output).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Re-run exactly the restore recorded in a manifest. --output, --report,
    /// --dump-flows and --manifest may redirect the files it writes.
    #[arg(long, value_name = "MANIFEST")]
    pub replay: Option<PathBuf>,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["truth", "chart"]))]
pub struct SimulateArgs {
    /// Ground-truth PGM image.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Use the built-in resolution chart of this width and height.
    #[arg(long, value_name = "SIZE")]
    pub chart: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    /// Displacement amplitude in pixels.
    #[arg(long, default_value_t = 2.0)]
    pub amplitude: f64,
    /// Wave period, or correlation length in random mode, in pixels.
    #[arg(long, default_value_t = 16.0)]
    pub wavelength: f64,
    /// Standard deviation of additive Gaussian noise.
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Wave)]
    pub mode: Mode,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = Depth::Sixteen)]
    pub depth: Depth,
    /// Also write the truth image here (useful with --chart).
    #[arg(long)]
    pub save_truth: Option<PathBuf>,
    /// Where to write the run manifest (default: manifest.txt in the output).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub restored: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Directory of input frames for per-frame distances.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Directory of estimated flows.
    #[arg(long, requires = "true_flows")]
    pub flows: Option<PathBuf>,
    /// Directory of ground-truth flows.
    #[arg(long, requires = "flows")]
    pub true_flows: Option<PathBuf>,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write a run manifest (default: only with --output, beside it).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Mode {
    Wave,
    Random,
}

impl From<Mode> for SimMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Wave => SimMode::Wave,
            Mode::Random => SimMode::SmoothRandom,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Depth {
    #[value(name = "8")]
    Eight,
    #[value(name = "16")]
    Sixteen,
}

impl From<Depth> for BitDepth {
    fn from(d: Depth) -> Self {
        match d {
            Depth::Eight => BitDepth::Eight,
            Depth::Sixteen => BitDepth::Sixteen,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.into())
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}")))?;
    }
    match cli.command {
        Command::Restore(a) => restore::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Evaluate(a) => evaluate::run(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("turbrestore: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
