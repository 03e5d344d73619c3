//! The `sdegan` command-line tool.
//!
//! Every verb writes into a fresh output directory: files are staged in a
//! quarantine directory next to the target and moved into place only when the
//! command succeeds, together with a `manifest.json` describing the run.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod output;
pub mod selftest;

pub use config::RunConfig;
pub use output::{RunManifest, Staging, MANIFEST_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] sdegan_core::Error),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Checks ran but some failed.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use sdegan_core::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
            CliError::Failed(_) => EXIT_NUMERICAL,
            CliError::Core(e) => match e {
                E::InvalidArgument(_) | E::Parse { .. } => EXIT_USAGE,
                E::Io { .. } | E::Serde(_) => EXIT_IO,
                E::DimensionMismatch { .. } | E::Domain(_) | E::NonFinite { .. } | E::NumericalAbort(_) | E::TapeMismatch(_) => {
                    EXIT_NUMERICAL
                }
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "sdegan", version, about = "Neural SDE generator with a Hermite-function critic")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a benchmark dataset (train/test CSVs plus sidecar).
    GenData(GenDataArgs),
    /// Train the generator against the Hermite critic.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset's test split.
    Evaluate(EvaluateArgs),
    /// Run the built-in numerical checks.
    Selftest(SelftestArgs),
    /// Turn a CSV of raw series into a windowed dataset.
    Ingest(IngestArgs),
    /// Train one model per Hermite order and compare held-out metrics.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory; must not exist unless --force is given.
    #[arg(long)]
    pub out: PathBuf,
    /// Replace an existing output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// gbm, ou, cir or poly.
    pub process: String,
    #[command(flatten)]
    pub out: OutArgs,
    /// Simulation seed [default: config's data_seed, else 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training paths [default: config's n_train, else 20000].
    #[arg(long = "train")]
    pub n_train: Option<usize>,
    /// Test paths [default: config's n_test, else 6000].
    #[arg(long = "test")]
    pub n_test: Option<usize>,
    /// Optional key=value file overriding process parameters, grid or solver.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// key=value file with training fields and a data source.
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
    /// Dataset directory; overrides the config's data source.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Overrides the config's training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train one run per order, e.g. `1..6` or `1,2,3,4,6`.
    #[arg(long)]
    pub hermite_order: Option<String>,
    /// Concurrent runs when several orders are given.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory whose test split is the reference.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
    /// Sampling seed; defaults to the checkpoint's training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model label for the table row.
    #[arg(long, default_value = "hgan")]
    pub model: String,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Fault injection for testing the harness itself.
    #[arg(long, hide = true)]
    pub inject_fault: Option<selftest::Fault>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// CSV file to read.
    pub file: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
    /// long (`series_id,time,value`) or wide (one series per row).
    #[arg(long, default_value = "wide")]
    pub schema: String,
    /// forward_fill or drop_series.
    #[arg(long, default_value = "forward_fill")]
    pub missing: String,
    #[arg(long, default_value_t = 150)]
    pub window: usize,
    #[arg(long, default_value_t = 50)]
    pub stride: usize,
    /// Fraction of windows held out for testing, taken from the end.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Subtract the training mean and divide by its standard deviation.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long, default_value_t = 1.0)]
    pub dt: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "1,2,3,4,6")]
    pub hermite_order: String,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

/// Parse `args` (including the program name), run the command and return the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::GenData(a) => commands::gen_data(&a).map(|_| ()),
        Command::Train(a) => commands::train(&a).map(|_| ()),
        Command::Evaluate(a) => commands::evaluate(&a).map(|_| ()),
        Command::Selftest(a) => {
            let report = selftest::run(a.inject_fault);
            print!("{}", report.render());
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::Failed(format!("{} self-test check(s) failed", report.failures())))
            }
        }
        Command::Ingest(a) => commands::ingest(&a).map(|_| ()),
        Command::Sweep(a) => commands::sweep(&a).map(|_| ()),
    }
}
