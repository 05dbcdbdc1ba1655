//! The `condmon` command line. Every subcommand is non-interactive, writes
//! only to paths given on the command line and exits 0 on success, 1 on a
//! domain error and 2 on a usage error.

use std::path::PathBuf;
use std::sync::atomic::AtomicBool;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use condmon_core::model::Timestamp;

mod analysis;
mod live;
pub mod plot;

pub use plot::{PlotError, PlotFormat, PlotSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// A point in time on the command line: canonical `secs.nanos` text, or
/// `+S` seconds after the first message of the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeArg {
    Absolute(Timestamp),
    Offset(u64),
}

impl TimeArg {
    pub fn resolve(&self, origin: Timestamp) -> Timestamp {
        match *self {
            TimeArg::Absolute(t) => t,
            TimeArg::Offset(ns) => origin.offset_nanos(ns as i64),
        }
    }
}

impl std::str::FromStr for TimeArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(rest) = s.strip_prefix('+') {
            let secs: f64 = rest.parse().map_err(|_| format!("bad offset {s:?}"))?;
            if !(secs.is_finite() && secs >= 0.0) {
                return Err(format!("bad offset {s:?}"));
            }
            return Ok(TimeArg::Offset((secs * 1e9).round() as u64));
        }
        s.parse().map(TimeArg::Absolute).map_err(|e| format!("{e}"))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "condmon",
    version,
    about = "Condition monitoring for human multi-robot teams"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the message broker until interrupted.
    Broker(BrokerArgs),
    /// Record matching streams from the broker into a bag.
    Record(RecordArgs),
    /// Republish a bag with its original timing.
    Play(PlayArgs),
    /// Summarise a bag.
    Info(InfoArgs),
    /// Run the robot fleet scenario.
    SimFleet(SimArgs),
    /// Run the physiological stream generator.
    SimPhysio(SimArgs),
    /// Align streams and write the matched tuples.
    Sync(SyncArgs),
    /// Windowed statistics and robot condition features.
    Features(FeaturesArgs),
    /// Baseline-delta table per task segment.
    Report(ReportArgs),
    /// Write streams as a resampled CSV or a stacked SVG chart.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct BrokerArgs {
    #[arg(long, default_value = condmon_core::bus::DEFAULT_BROKER_ADDR)]
    pub listen: String,
    /// Disconnect clients silent for this many seconds.
    #[arg(long, default_value_t = 10.0)]
    pub idle_timeout: f64,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    /// Topic pattern to record.
    #[arg(long, default_value = "**")]
    pub topics: String,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Broker address (default: $CONDMON_BROKER or 127.0.0.1:7447).
    #[arg(long)]
    pub broker: Option<String>,
    /// Stop after this many seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub max_messages: Option<u64>,
    /// Stop once nothing has arrived for this many seconds.
    #[arg(long)]
    pub idle: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PlayArgs {
    pub bag: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    #[arg(long)]
    pub broker: Option<String>,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    pub bag: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Scenario file (JSON); defaults apply to anything left out.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulated seconds, overriding the config.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Write straight into this bag instead of publishing to the broker.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub broker: Option<String>,
    /// Simulated seconds per wall second; as fast as possible when absent.
    #[arg(long)]
    pub speed: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Exact,
    Approx,
}

#[derive(Debug, Args)]
pub struct SyncArgs {
    /// Read from this bag; without it the broker is used.
    #[arg(long)]
    pub bag: Option<PathBuf>,
    #[arg(long)]
    pub broker: Option<String>,
    /// Streams to align (patterns allowed for bag input), at least two.
    #[arg(long = "topic", required = true)]
    pub topics: Vec<String>,
    #[arg(long, value_enum, default_value_t = PolicyArg::Approx)]
    pub policy: PolicyArg,
    /// Matching tolerance; defaults to half the slowest nominal period.
    #[arg(long)]
    pub slop_ms: Option<f64>,
    /// CSV output; standard output when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Also republish tuples on `synced/<NAME>` (live input only).
    #[arg(long)]
    pub publish: Option<String>,
    /// Live input: stop after this many seconds.
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    pub bag: PathBuf,
    #[arg(long, default_value = "**")]
    pub topics: String,
    /// Window length in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub window: f64,
    /// Time at which sensor status and deployment time are evaluated;
    /// defaults to the end of the bag.
    #[arg(long)]
    pub at: Option<TimeArg>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub bag: PathBuf,
    #[arg(long, default_value = "baseline")]
    pub baseline: String,
    #[arg(long, default_value = "markers/segment")]
    pub marker_topic: String,
    /// Feature column as LABEL=TOPIC; repeatable. Defaults to IBI, PPG, GSR, ECG.
    #[arg(long = "feature")]
    pub features: Vec<String>,
    /// CSV output path.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Read from this bag; without it the broker is sampled for --live seconds.
    #[arg(long)]
    pub bag: Option<PathBuf>,
    #[arg(long)]
    pub broker: Option<String>,
    /// Seconds of live traffic to capture.
    #[arg(long)]
    pub live: Option<f64>,
    /// Stream pattern; repeatable.
    #[arg(long = "stream", required = true)]
    pub streams: Vec<String>,
    /// `secs.nanos`, or `+S` seconds after the first message.
    #[arg(long)]
    pub start: Option<TimeArg>,
    /// Exclusive; same forms as --start.
    #[arg(long)]
    pub end: Option<TimeArg>,
    /// CSV grid period in milliseconds.
    #[arg(long, default_value_t = 1000.0)]
    pub period_ms: f64,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Defaults to the output file extension.
    #[arg(long, value_enum)]
    pub format: Option<PlotFormat>,
    /// Overlay markers from streams matching this pattern.
    #[arg(long, num_args = 0..=1, default_missing_value = "markers/**")]
    pub markers: Option<String>,
}

/// Runs one command. Long-running commands return once `stop` is raised.
pub fn run(cli: Cli, stop: &AtomicBool) -> Result<(), CliError> {
    match cli.command {
        Command::Broker(a) => live::broker(&a, stop),
        Command::Record(a) => live::record(&a, stop),
        Command::Play(a) => live::play(&a, stop),
        Command::Info(a) => analysis::info(&a),
        Command::SimFleet(a) => live::sim(&a, live::Sim::Fleet, stop),
        Command::SimPhysio(a) => live::sim(&a, live::Sim::Physio, stop),
        Command::Sync(a) => analysis::sync(&a, stop),
        Command::Features(a) => analysis::features(&a),
        Command::Report(a) => analysis::report(&a),
        Command::Plot(a) => plot::run(&a, stop),
    }
}

/// Parses `args` (without the program name) and runs the command.
pub fn run_args<I, S>(args: I, stop: &AtomicBool) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let argv = std::iter::once(std::ffi::OsString::from("condmon")).chain(args.into_iter().map(Into::into));
    let cli = Cli::try_parse_from(argv).map_err(usage)?;
    run(cli, stop)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_args() {
        let origin = Timestamp::new(100, 0).unwrap();
        assert_eq!(
            "+1.5".parse::<TimeArg>().unwrap().resolve(origin),
            Timestamp::new(101, 500_000_000).unwrap()
        );
        assert_eq!(
            "7.000000001".parse::<TimeArg>().unwrap(),
            TimeArg::Absolute(Timestamp::new(7, 1).unwrap())
        );
        assert!("+x".parse::<TimeArg>().is_err());
        assert!("+-1".parse::<TimeArg>().is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        let stop = AtomicBool::new(false);
        let e = run_args(["sync", "--topic", "a/b"], &stop).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = run_args(["frobnicate"], &stop).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
