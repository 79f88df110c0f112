use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod geometry;
mod manifest;

use diffcomet::shapes::Family;

#[derive(Parser, Debug)]
#[command(name = "diffcomet", version, about = "Moment-based COMET estimation of distributed sources for SAR tomography")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw snapshots for a scenario and write them as CSNP plus a JSON sidecar.
    Simulate(SimulateArgs),
    /// Estimate source parameters from snapshots or a covariance matrix.
    Estimate(EstimateArgs),
    /// Run a Monte-Carlo sweep and write RMSE tables.
    Sweep(SweepArgs),
    /// Print the largest admissible moment order for a geometry.
    Dmax(DmaxArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct GeometryArgs {
    /// Unit-spaced uniform array with this many sensors.
    #[arg(long = "uniform-M", value_name = "M", conflicts_with = "positions")]
    pub uniform_m: Option<usize>,
    /// Sensor positions in wavelengths, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub positions: Option<Vec<f64>>,
    /// Height of ambiguity in meters; enables z-unit inputs and outputs.
    #[arg(long)]
    pub z_amb: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeArg {
    Point,
    Gaussian,
    Uniform,
    Exponential,
}

impl From<ShapeArg> for Family {
    fn from(s: ShapeArg) -> Self {
        match s {
            ShapeArg::Point => Family::Point,
            ShapeArg::Gaussian => Family::Gaussian,
            ShapeArg::Uniform => Family::Uniform,
            ShapeArg::Exponential => Family::Exponential,
        }
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario JSON; replaces the scenario flags.
    #[arg(long, conflicts_with_all = ["shape", "manifest"])]
    pub config: Option<PathBuf>,
    /// Replay a previous run from its sidecar.
    #[arg(long, conflicts_with = "shape")]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[arg(long, value_enum, required_unless_present_any = ["config", "manifest"])]
    pub shape: Option<ShapeArg>,
    /// Spread in meters (needs --z-amb).
    #[arg(long, conflicts_with = "sigma_omega")]
    pub sigma_z: Option<f64>,
    /// Spread in normalized frequency.
    #[arg(long)]
    pub sigma_omega: Option<f64>,
    /// Exponential tail towards lower heights.
    #[arg(long)]
    pub negative_tail: bool,
    /// Mean height in meters; defaults to 30 m when --z-amb is set.
    #[arg(long, conflicts_with = "omega0")]
    pub z0: Option<f64>,
    /// Mean normalized frequency; defaults to 0.3 without --z-amb.
    #[arg(long, allow_hyphen_values = true)]
    pub omega0: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub power: f64,
    #[arg(long, conflicts_with = "noise_var")]
    pub snr_db: Option<f64>,
    #[arg(long)]
    pub noise_var: Option<f64>,
    /// Number of snapshots.
    #[arg(long = "n", short = 'n', value_name = "N")]
    pub snapshots: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub stream: u64,
    /// Output CSNP file; the sidecar is written next to it with a .json extension.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodArg {
    Moment,
    Ml,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParityArg {
    All,
    Even,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightArg {
    Inverse,
    Identity,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitArg {
    Grid,
    Moment,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// CSNP or CSV snapshots, or a covariance CSV with --covariance.
    pub input: PathBuf,
    /// Treat the input as an M x M covariance CSV.
    #[arg(long)]
    pub covariance: bool,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Moment)]
    pub method: MethodArg,
    /// Moment order; defaults to D_max.
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long, value_enum, default_value_t = ParityArg::All)]
    pub parity: ParityArg,
    #[arg(long, value_enum, default_value_t = WeightArg::Inverse)]
    pub weight: WeightArg,
    #[arg(long, default_value_t = 0.0)]
    pub ridge: f64,
    /// Grid points for the ω search; defaults to 20 M.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Assumed shape for --method ml.
    #[arg(long, value_enum)]
    pub assume: Option<ShapeArg>,
    #[arg(long, value_enum, default_value_t = InitArg::Grid)]
    pub init: InitArg,
    /// Include the grid trace in the output.
    #[arg(long)]
    pub trace: bool,
    /// Also write the JSON result here.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetArg {
    Fig2,
    Fig3,
    Fig4,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, value_enum, required_unless_present_any = ["config", "manifest"], conflicts_with_all = ["config", "manifest"])]
    pub preset: Option<PresetArg>,
    /// Sweep JSON: one sweep object or a list of them.
    #[arg(long, conflicts_with = "manifest")]
    pub config: Option<PathBuf>,
    /// Re-run the sweeps recorded in a manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Trials per cell; overrides the preset or config.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Reduced trial count for quick checks.
    #[arg(long, conflicts_with = "trials")]
    pub smoke: bool,
    /// Master seed; overrides the preset or config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(short, long, env = "DIFFCOMET_OUT_DIR", default_value = "out")]
    pub output: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct DmaxArgs {
    #[command(flatten)]
    pub geometry: GeometryArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Estimate(args) => commands::estimate(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Dmax(args) => commands::dmax(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
