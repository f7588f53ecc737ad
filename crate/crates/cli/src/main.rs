mod commands;
mod files;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use homedetect::ErrorKind;

/// Home detection from call detail records.
///
/// Options can also come from a `key=value` file given with `--config`;
/// keys are the long option names with `_` for `-`. Flags win over the file.
#[derive(Parser, Debug)]
#[command(name = "homedetect", version, about)]
struct Cli {
    /// Flat key=value settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Where to write the run manifest (default: next to the output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Aggregate CDRs into per-user, per-period tower activity.
    Ingest(IngestArgs),
    /// Apply decision rules to aggregates; one home table per rule and period.
    Detect(DetectArgs),
    /// Pairwise L1 agreement between rules.
    Compare(CompareArgs),
    /// Angle between detected home counts and a census, per table.
    Validate(ValidateArgs),
    /// Gi* hot and cold spots of per-tower values.
    Hotspots(HotspotsArgs),
    /// Voronoi cells of the tower network as GeoJSON.
    Voronoi(VoronoiArgs),
    /// Synthetic worlds with known homes.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Args, Debug)]
struct NetworkArgs {
    /// Tower CSV: tower_id,lon,lat
    #[arg(long)]
    towers: PathBuf,
    /// Study-area ring CSV: lon,lat (default: tower hull plus 10 km)
    #[arg(long)]
    boundary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// CDR CSV, optionally .gz
    #[arg(long)]
    cdr: PathBuf,
    #[command(flatten)]
    net: NetworkArgs,
    /// Calendar months, e.g. 2007-05..2007-10 or 2007-06,2007-08
    #[arg(long)]
    periods: Option<String>,
    /// Local time offset from UTC in hours
    #[arg(long, allow_hyphen_values = true)]
    tz_offset: Option<f64>,
    /// Night window HH:MM-HH:MM
    #[arg(long)]
    window: Option<String>,
    /// Fail on the first malformed row instead of counting it
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    workers: Option<usize>,
    /// Aggregates CSV to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long)]
    aggregates: PathBuf,
    #[command(flatten)]
    net: NetworkArgs,
    /// `all` or a list of rule ids 1-5
    #[arg(long)]
    rules: Option<String>,
    /// Neighbourhood radius in meters for rules 4 and 5
    #[arg(long)]
    radius: Option<f64>,
    /// Must match the window the aggregates were built with
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Home table CSVs
    #[arg(long, num_args = 1.., required = true)]
    tables: Vec<PathBuf>,
    /// Count users detected by only one rule as disagreements
    #[arg(long)]
    missing_as_mismatch: bool,
    #[arg(long)]
    out: PathBuf,
    /// Also write every ordered pair in long format
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long, num_args = 1.., required = true)]
    tables: Vec<PathBuf>,
    #[command(flatten)]
    net: NetworkArgs,
    /// Census CSV: tower_id,population
    #[arg(long)]
    census: PathBuf,
    /// Compare only towers where both counts are nonzero
    #[arg(long)]
    joint_nonzero: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct HotspotsArgs {
    #[command(flatten)]
    net: NetworkArgs,
    /// Per-tower values: tower_id,population
    #[arg(long, conflicts_with = "table")]
    values: Option<PathBuf>,
    /// Use detected home counts from a home table file instead
    #[arg(long)]
    table: Option<PathBuf>,
    /// Rule name to pick when the table file holds several
    #[arg(long)]
    rule: Option<String>,
    /// Period label to pick when the table file holds several
    #[arg(long)]
    period: Option<String>,
    /// Per-tower reference for the log ratio, e.g. the census
    #[arg(long)]
    reference: Option<PathBuf>,
    /// voronoi_adjacency or distance_band:<meters>
    #[arg(long)]
    weights: Option<String>,
    /// 90, 95 or 99
    #[arg(long)]
    confidence: Option<u8>,
    /// GeoJSON to write
    #[arg(long)]
    out: PathBuf,
    /// Also write a CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VoronoiArgs {
    #[command(flatten)]
    net: NetworkArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum SynthCommand {
    /// Write towers, ground truth, true-home census and the resolved world config.
    Generate(SynthGenerateArgs),
    /// Write the CDRs of a world for some periods.
    Simulate(SynthSimulateArgs),
    /// Score home tables against the ground truth.
    Evaluate(SynthEvaluateArgs),
}

#[derive(Args, Debug)]
struct WorldArgs {
    #[arg(long)]
    seed: u64,
    /// Override a world setting, e.g. --set n_users=5000
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct SynthGenerateArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct SynthSimulateArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long)]
    periods: String,
    /// CDR CSV to write, gzip-compressed for .gz
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthEvaluateArgs {
    #[arg(long, num_args = 1.., required = true)]
    tables: Vec<PathBuf>,
    #[arg(long)]
    truth: PathBuf,
    #[command(flatten)]
    net: NetworkArgs,
    /// Aggregates, for the low-activity breakdown
    #[arg(long)]
    aggregates: Option<PathBuf>,
    /// Distance that still counts as a near hit
    #[arg(long)]
    within_m: Option<f64>,
    /// Users with at most this many records are low-activity
    #[arg(long)]
    low_activity_max: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

/// Invalid invocation that clap cannot catch (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<homedetect::Error>() {
            return match e.kind() {
                ErrorKind::Usage => 2,
                ErrorKind::Data => 3,
                ErrorKind::Degenerate => 4,
            };
        }
        if cause.is::<UsageError>() {
            return 2;
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
