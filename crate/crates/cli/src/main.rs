//! `cfx`: counterfactual explanations for ReLU classifiers from the command line.

mod commands;
mod inputs;
mod report;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use cfx_core::features::Norm;
use clap::{Args, Parser, Subcommand, ValueEnum};

use inputs::ConfigError;

/// Exit status for a configuration error (bad flags, unreadable or invalid inputs).
const EXIT_CONFIG: u8 = 2;
/// Exit status for an unexpected failure while running.
const EXIT_INTERNAL: u8 = 3;
/// Exit status of `oracle-check` when an instance fails the comparison.
const EXIT_CHECK_FAILED: u8 = 1;

#[derive(Parser, Debug)]
#[command(
    name = "cfx",
    version,
    about = "Nearest counterfactual explanations for ReLU binary classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Find one counterfactual per dataset row.
    Generate(GenerateArgs),
    /// Find up to k mutually distant counterfactuals per dataset row.
    Diverse(DiverseArgs),
    /// Print interval and LP-tightened bounds of every neuron.
    Bounds(BoundsArgs),
    /// Write the distance-minimizing model of one row as an LP file.
    ExportLp(ExportArgs),
    /// Compare a search method against brute-force enumeration.
    OracleCheck(OracleArgs),
    /// Write a seeded synthetic dataset that conforms to a schema.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Network file (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Feature schema file (JSON).
    #[arg(long)]
    pub schema: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SearchArgs {
    /// Distance: l0, l1, linf (l2 only for export-lp).
    #[arg(long, default_value = "l1", value_parser = parse_norm)]
    pub norm: Norm,
    /// Shell width and optimality gap, in normalized distance.
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    /// A negative counterfactual needs an output of at most -margin.
    #[arg(long, default_value_t = 1e-6)]
    pub margin: f64,
    /// Per-instance time budget in seconds; 0 disables it.
    #[arg(long = "timeout-s", default_value_t = 60.0)]
    pub timeout_s: f64,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Dataset (CSV with a header of feature names).
    #[arg(long)]
    pub data: PathBuf,
    /// Only explain rows the model puts on this side.
    #[arg(long, value_enum, default_value_t = Side::Any)]
    pub side: Side,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Recorded in the report.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite an existing output file.
    #[arg(long)]
    pub force: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Any,
    Negative,
    Positive,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MipObj,
    MipExp,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Search method.
    #[arg(long, value_enum, default_value_t = Method::MipObj)]
    pub method: Method,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct DiverseArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Counterfactuals per row.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Minimum distance between counterfactuals of one row.
    #[arg(long = "delta-div", default_value_t = 0.01)]
    pub delta_div: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct BoundsArgs {
    /// Network file (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Take the input box from this schema.
    #[arg(long, conflicts_with = "point")]
    pub schema: Option<PathBuf>,
    /// Degenerate box at this encoded input (comma separated).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub point: Option<Vec<f64>>,
    /// Monte-Carlo samples checked against both tables.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    /// Seed of the Monte-Carlo samples.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Dataset (CSV with a header of feature names).
    #[arg(long)]
    pub data: PathBuf,
    /// 0-based dataset row to use as the factual.
    #[arg(long, default_value_t = 0)]
    pub row: usize,
    #[command(flatten)]
    pub search: SearchArgs,
    /// LP file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite an existing output file.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Search method whose distances are checked.
    #[arg(long, value_enum, default_value_t = Method::MipObj)]
    pub method: Method,
    /// Grid samples per real feature, endpoints included.
    #[arg(long, default_value_t = 201)]
    pub samples: usize,
    /// Largest grid enumerated; bigger instances are skipped.
    #[arg(long = "grid-cap", default_value_t = cfx_core::oracle::DEFAULT_GRID_CAP)]
    pub grid_cap: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Feature schema file (JSON).
    #[arg(long)]
    pub schema: PathBuf,
    /// Number of rows to write.
    #[arg(long, default_value_t = 100)]
    pub rows: usize,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// With --side, keep only rows this model puts on that side.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Side filter; needs --model.
    #[arg(long, value_enum, default_value_t = Side::Any)]
    pub side: Side,
    /// CSV file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite an existing output file.
    #[arg(long)]
    pub force: bool,
}

fn parse_norm(s: &str) -> Result<Norm, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Diverse(a) => commands::diverse(&a),
        Command::Bounds(a) => commands::bounds(&a),
        Command::ExportLp(a) => commands::export_lp(&a),
        Command::OracleCheck(a) => commands::oracle_check(&a),
        Command::Synth(a) => synth::run(&a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) if e.is::<ConfigError>() => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}
