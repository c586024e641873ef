//! `lea`: train cost models, advise encodings, and compare plans against
//! brute-force oracles.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure. Results go to
//! stdout as JSON; diagnostics go to stderr.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lea_core::advisor::{Granularity, Objective};
use lea_core::features::FeatureVariant;

/// Scratch directory for storage-scan and calibration files.
pub const SCRATCH_ENV: &str = "LEA_SCRATCH_DIR";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "lea", version, about = "Learned encoding advisor for columnar data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus and fit a model bundle.
    Train(TrainArgs),
    /// Predict per-slice costs with a bundle and write an encoding plan.
    Advise(AdviseArgs),
    /// Build a table file from CSV or the TPC-H-like generator, or re-encode one per a plan.
    Encode(EncodeArgs),
    /// Scan columns of a table file and report the aggregate and timing.
    Scan(ScanArgs),
    /// Brute-force the optimal plan and optionally compare another plan to it.
    Oracle(OracleArgs),
    /// Compare all-Plain, Single Optimal, Optimal and the advisor on one table.
    Bench(BenchArgs),
    /// Fit the storage device model from cold reads.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Phase {
    Size,
    Speed,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DtypeArg {
    Int,
    String,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Full,
    SampleOnly,
    StatisticsOnly,
}

impl From<VariantArg> for FeatureVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => FeatureVariant::Full,
            VariantArg::SampleOnly => FeatureVariant::SampleOnly,
            VariantArg::StatisticsOnly => FeatureVariant::StatisticsOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MeasureArg {
    /// Encoded sizes only.
    Size,
    /// Timed in-memory scans plus the device model.
    Modeled,
    /// Timed in-memory scans plus cold reads.
    Measured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScanModeArg {
    Memory,
    Storage,
    Modeled,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "all")]
    phase: Phase,
    #[arg(long, value_enum, default_value = "int")]
    dtype: DtypeArg,
    /// Size-phase slices per dtype.
    #[arg(long, default_value_t = 1500)]
    slices: usize,
    #[arg(long, default_value_t = lea_core::synthgen::FULL_ROWS_PER_SLICE)]
    rows: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// In-memory scan slices per dtype (speed phase).
    #[arg(long, default_value_t = 250)]
    mem_slices: usize,
    /// Cold storage scan slices per dtype (speed phase).
    #[arg(long, default_value_t = 5)]
    storage_slices: usize,
    #[arg(long, value_enum, default_value = "full")]
    variant: VariantArg,
    /// Device profile or calibration file; defaults to the built-in profile.
    #[arg(long)]
    device: Option<PathBuf>,
    /// Label storage scans from the device model instead of cold reads.
    #[arg(long)]
    modeled_storage: bool,
    /// Size-phase bundle the speed phase extends.
    #[arg(long)]
    from: Option<PathBuf>,
    /// Training-set file. Size and all phases write it (default
    /// `<out>.train.jsonl`); the speed phase reads it (default
    /// `<from>.train.jsonl`) and writes `<out>.train.jsonl`.
    #[arg(long)]
    training_set: Option<PathBuf>,
    /// Held-out slices per dtype for a SMAPE report on stdout.
    #[arg(long, default_value_t = 0)]
    heldout: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AdviseArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "size")]
    objective: Objective,
    #[arg(long, default_value = "slice")]
    granularity: Granularity,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Plan file; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    /// Source table file (re-encode with --plan).
    #[arg(long, conflicts_with_all = ["csv", "tpch_rows"], requires = "plan")]
    table: Option<PathBuf>,
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Source CSV (requires --schema).
    #[arg(long, conflicts_with = "tpch_rows", requires = "schema")]
    csv: Option<PathBuf>,
    /// Schema as `name:int,name:string`.
    #[arg(long)]
    schema: Option<String>,
    /// Generate a TPC-H-like table of this many rows.
    #[arg(long)]
    tpch_rows: Option<usize>,
    #[arg(long, default_value_t = lea_core::synthgen::FULL_ROWS_PER_SLICE)]
    slice_rows: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScanArgs {
    #[arg(long)]
    table: PathBuf,
    /// Column name; all columns when absent.
    #[arg(long)]
    column: Option<String>,
    #[arg(long, value_enum, default_value = "memory")]
    mode: ScanModeArg,
    #[arg(long)]
    device: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long, default_value = "size")]
    objective: Objective,
    #[arg(long, default_value = "slice")]
    granularity: Granularity,
    /// How costs are obtained; `size` for the size objective, `modeled` otherwise.
    #[arg(long, value_enum)]
    measure: Option<MeasureArg>,
    #[arg(long)]
    device: Option<PathBuf>,
    /// Plan to compare against the oracle.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Where to write the oracle plan.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "size")]
    objective: Objective,
    #[arg(long, value_enum)]
    measure: Option<MeasureArg>,
    #[arg(long)]
    device: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// File sizes in bytes.
    #[arg(long, value_delimiter = ',', default_values_t = [65_536u64, 1 << 20, 4 << 20, 16 << 20, 64 << 20])]
    sizes: Vec<u64>,
    /// Scratch directory; defaults to $LEA_SCRATCH_DIR or the system temp dir.
    #[arg(long)]
    dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Advise(a) => commands::advise(a),
        Command::Encode(a) => commands::encode(a),
        Command::Scan(a) => commands::scan(a),
        Command::Oracle(a) => commands::oracle(a),
        Command::Bench(a) => commands::bench(a),
        Command::Calibrate(a) => commands::calibrate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(commands::Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
