//! `amss` — command-line front end.
//!
//! Exit status: 0 on success, 1 on a domain error (message on stderr),
//! 2 on a usage error.

mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use amss_core::aml::Task;
use amss_core::metrics::Metric;
use amss_core::model::GradOp;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "amss", version, about = "Text-queried audio manipulation on specific sources")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// JSON tool configuration.
    #[arg(long, global = true, env = "AMSS_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed; all randomness derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for triple generation, benchmarking and training.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Print full error chains and backtraces.
    #[arg(long, global = true)]
    pub debug: bool,
    /// Accept WAV files whose sample rate differs from the configured one.
    #[arg(long, global = true)]
    pub allow_any_rate: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Query language tools.
    #[command(subcommand)]
    Aml(AmlCmd),
    /// Ground-truth editing and test signals.
    #[command(subcommand)]
    Dsp(DspCmd),
    /// Training triple synthesis.
    #[command(subcommand)]
    Triples(TriplesCmd),
    /// Network checkpoints, inference, gradient checks and training.
    #[command(subcommand)]
    Model(ModelCmd),
    /// Benchmark runs.
    #[command(subcommand)]
    Bench(BenchCmd),
}

#[derive(Debug, Subcommand)]
pub enum AmlCmd {
    /// Parse a query and print its description as JSON.
    Parse {
        query: String,
        /// Also print the DSP plan it denotes.
        #[arg(long)]
        plan: bool,
    },
    /// Print the canonical spelling of a query.
    Render { query: String },
    /// Print random queries.
    Gen {
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Restrict to one task.
        #[arg(long)]
        task: Option<Task>,
    },
    /// Print every query of the language, one per line.
    Enum {
        #[arg(long)]
        task: Option<Task>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Sines at 110/440/1760 Hz with noise bursts (bass/vocals/drums).
    Three,
    /// Low-passed and high-passed noise with tones (bass/vocals).
    Two,
}

#[derive(Debug, Subcommand)]
pub enum DspCmd {
    /// Render the ground-truth edit of a stem directory.
    Apply {
        /// Directory of `<source>.wav` stems.
        #[arg(long)]
        stems: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic stem directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SynthKind::Three)]
        kind: SynthKind,
        #[arg(long, default_value_t = 2.0)]
        seconds: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum TriplesCmd {
    /// Synthesise a triple dataset from stem directories.
    Gen {
        /// Stem directory; repeat for several multitracks.
        #[arg(long, required = true)]
        stems: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        /// Comma-separated tasks; all nine by default.
        #[arg(long, value_delimiter = ',')]
        tasks: Vec<Task>,
        /// Random segments, gains and channel swaps across multitracks.
        #[arg(long)]
        augment: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum ModelCmd {
    /// Write a randomly initialised checkpoint.
    Init {
        #[arg(long)]
        out: PathBuf,
        /// Use the small test configuration instead of the configured one.
        #[arg(long)]
        micro: bool,
    },
    /// Apply a query to a WAV file.
    Forward {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long)]
        out: PathBuf,
        /// Apply the query this many times in succession.
        #[arg(long, default_value_t = 1)]
        times: usize,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// One operation; all of them by default.
        #[arg(long)]
        op: Option<GradOp>,
        /// Write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on a triple dataset with Adam.
    TrainMicro {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Start from this checkpoint instead of a fresh micro model.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        batch: Option<usize>,
        /// Halve the learning rate and restart on a non-finite loss.
        #[arg(long)]
        halve_restart: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum BenchCmd {
    /// Score a system on a triple dataset.
    Run(BenchRun),
}

#[derive(Debug, Args)]
pub struct BenchRun {
    #[arg(long)]
    pub data: PathBuf,
    /// identity, silence, oracle, or model:<checkpoint>.
    #[arg(long, default_value = "identity")]
    pub system: String,
    /// Only evaluate tasks scored with this metric.
    #[arg(long)]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Comma-separated seeds, one per run.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print an aligned table.
    #[arg(long)]
    pub table: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if cli.global.debug && std::env::var_os("RUST_BACKTRACE").is_none() {
        std::env::set_var("RUST_BACKTRACE", "1");
    }
    let debug = cli.global.debug;
    match run::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if debug {
                eprintln!("error: {e:?}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(1)
        }
    }
}
