//! The `bte` binary: barrier-to-exit analytics over rating logs, plus a
//! closed-loop simulator for validating the detector.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bte::barrier::ThresholdMode;
use bte::cli::{
    cmd_compute, cmd_report, cmd_simulate, AnalysisParams, ComputeConfig, OutputOptions,
    RenderConfig, RunSummary, SimulateConfig,
};
use bte::ingest::{BinningPolicy, RatingScale, RatingsFormat, Strictness};
use bte::preference::StdFlavor;

#[derive(Parser)]
#[command(
    name = "bte",
    version,
    about = "Barrier-to-exit analytics for recommender rating logs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute per-user barrier-to-exit reports from a rating log
    Compute(ComputeArgs),
    /// Run the closed-loop simulator, then analyze its trace
    Simulate(SimulateArgs),
    /// Re-emit CSV and plots from a saved JSON report
    Report(ReportArgs),
}

#[derive(Args)]
struct AnalysisArgs {
    /// Rolling threshold window: step t uses steps t-nu ..= t
    #[arg(long, default_value_t = 4)]
    nu: usize,

    /// Threshold half-width in standard deviations
    #[arg(long, default_value_t = 2.0)]
    k: f64,

    /// Threshold comparison: per-category or averaged
    #[arg(long, default_value = "per-category")]
    mode: ThresholdMode,

    /// Standard deviation flavor: population or sample
    #[arg(long, default_value = "population")]
    std: StdFlavor,
}

impl AnalysisArgs {
    fn params(&self) -> AnalysisParams {
        AnalysisParams {
            nu: self.nu,
            k: self.k,
            mode: self.mode,
            std_flavor: self.std,
        }
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Output directory
    #[arg(long, env = "BTE_OUT_DIR")]
    out: PathBuf,

    /// Also emit each report as CSV
    #[arg(long)]
    csv: bool,

    /// Export each user's series and thresholds as CSV
    #[arg(long)]
    export_series: bool,

    /// Render SVG plots (ranked bars, series with threshold bands)
    #[arg(long)]
    plots: bool,
}

impl OutputArgs {
    fn options(&self) -> OutputOptions {
        OutputOptions {
            csv: self.csv,
            series: self.export_series,
            plots: self.plots,
        }
    }
}

#[derive(Args)]
struct ComputeArgs {
    /// Ratings file (user::item::rating::timestamp or CSV with header)
    #[arg(long)]
    ratings: PathBuf,

    /// Tag relevance CSV: item,label,relevance
    #[arg(long)]
    relevance: PathBuf,

    /// Ratings layout: double-colon or csv
    #[arg(long, default_value = "double-colon")]
    format: RatingsFormat,

    /// Accepted rating range: half-star (0.5-5) or ml1m (1-5)
    #[arg(long, default_value = "half-star")]
    scale: RatingScale,

    /// Time binning: weekly, duration:SECONDS, count:N, or gap:SECONDS
    #[arg(long, default_value = "weekly")]
    bin: BinningPolicy,

    /// Only analyze these user ids (comma separated)
    #[arg(long, value_delimiter = ',')]
    users: Option<Vec<u64>>,

    /// Restrict analysis to these category labels (comma separated)
    #[arg(long, value_delimiter = ',')]
    categories: Option<Vec<String>>,

    /// Fail on the first malformed record instead of skipping it
    #[arg(long)]
    strict: bool,

    #[command(flatten)]
    analysis: AnalysisArgs,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation config file (key=value lines)
    #[arg(long)]
    sim_config: PathBuf,

    /// Override the seed from the config file
    #[arg(long)]
    seed: Option<u64>,

    /// Write only the trace and dataset exports, skip the analysis
    #[arg(long)]
    trace_only: bool,

    #[command(flatten)]
    analysis: AnalysisArgs,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// A user<id>_report.json produced by compute or simulate
    #[arg(long)]
    report: PathBuf,

    /// Output directory
    #[arg(long, env = "BTE_OUT_DIR")]
    out: PathBuf,

    /// Emit the CSV form (default: both artifacts)
    #[arg(long)]
    csv: bool,

    /// Render the ranked bar chart (default: both artifacts)
    #[arg(long)]
    plots: bool,
}

fn run(command: Command) -> bte::Result<RunSummary> {
    match command {
        Command::Compute(args) => cmd_compute(&ComputeConfig {
            ratings: args.ratings,
            relevance: args.relevance,
            format: args.format,
            scale: args.scale,
            strictness: if args.strict {
                Strictness::Strict
            } else {
                Strictness::Lenient
            },
            binning: args.bin,
            analysis: args.analysis.params(),
            users: args.users,
            categories: args.categories,
            out_dir: args.output.out.clone(),
            outputs: args.output.options(),
        }),
        Command::Simulate(args) => cmd_simulate(&SimulateConfig {
            sim_config: args.sim_config,
            seed_override: args.seed,
            trace_only: args.trace_only,
            analysis: args.analysis.params(),
            out_dir: args.output.out.clone(),
            outputs: args.output.options(),
        }),
        Command::Report(args) => cmd_report(&RenderConfig {
            report: args.report,
            out_dir: args.out,
            csv: args.csv,
            plots: args.plots,
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(summary) => {
            for warning in &summary.warnings {
                eprintln!("warning: {warning}");
            }
            for (key, value) in &summary.counts {
                println!("{key}: {value}");
            }
            println!("wrote {} files", summary.outputs.len());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
