use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod manifest;

use commands::CliError;

#[derive(Parser)]
#[command(name = "fabsim", version, about = "Interconnect congestion simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct RunArgs {
    /// Experiment config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Skip the congested runs.
    #[arg(long)]
    pub baseline: bool,
    /// Also write the baseline throughput of victim rank 0, binned at this
    /// interval (e.g. 20us), to trace.csv.
    #[arg(long, value_name = "DURATION")]
    pub trace: Option<String>,
}

#[derive(Args, Clone)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long)]
    pub baseline: bool,
    /// Continue an interrupted sweep in the output directory.
    #[arg(long, conflicts_with = "fresh")]
    pub resume: bool,
    /// Discard any previous sweep in the output directory.
    #[arg(long)]
    pub fresh: bool,
    /// Stop after this many cells (the sweep can be resumed later).
    #[arg(long, hide = true)]
    pub max_cells: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Baseline and congested runs for each configured vector size.
    Run(RunArgs),
    /// Same as `run --baseline`.
    Baseline(RunArgs),
    /// Every cell of the config's sweep grid, resumable.
    Sweep(SweepArgs),
    /// Figures from CSV files.
    Report {
        #[command(subcommand)]
        kind: ReportKind,
    },
    /// Fabric presets.
    Presets {
        #[command(subcommand)]
        kind: PresetsKind,
    },
}

#[derive(Subcommand)]
pub enum ReportKind {
    /// Ratio heatmap over two sweep axes.
    Heatmap {
        /// Result table CSV.
        #[arg(long)]
        input: PathBuf,
        /// nodes, vector, burst or idle_gap.
        #[arg(long, default_value = "nodes")]
        x: String,
        #[arg(long, default_value = "vector")]
        y: String,
        #[arg(long)]
        title: Option<String>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Throughput time series with statistics.
    Timeseries {
        /// Trace CSV.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
pub enum PresetsKind {
    List,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(a) => commands::run(a),
        Command::Baseline(mut a) => {
            a.baseline = true;
            commands::run(a)
        }
        Command::Sweep(a) => commands::sweep(a),
        Command::Report { kind } => commands::report(kind),
        Command::Presets { kind: PresetsKind::List } => commands::presets_list(),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Grid(_) => 4,
            CliError::Failed(_) => 1,
        }
    }
}
