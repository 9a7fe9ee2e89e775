//! `forge`: corpus selection, batch processing, validation, fixtures and
//! the annotation service from one binary.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 unusable data,
//! 4 internal failure.

mod commands;
mod fail;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "forge", version, about = "Build and curate TTS recording datasets")]
pub struct Cli {
    /// Settings file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice; 42 unless the settings say otherwise.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Extra `key=value` setting, applied after the settings file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter a corpus and select a phonetically balanced script.
    Select(SelectArgs),
    /// Segment a batch recording, match segments to the script and trim them.
    ProcessBatch(ProcessBatchArgs),
    /// Check every WAV in a directory against the recording criteria.
    Validate(ValidateArgs),
    /// Render a script as a synthetic batch recording with a truth table.
    GenSynthetic(GenSyntheticArgs),
    /// Write a synthetic text corpus with skewed letter usage.
    GenCorpus(GenCorpusArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
    /// Export a dataset's approved samples.
    Export(ExportArgs),
    /// Print a dataset's review statistics.
    Stats(StatsArgs),
    /// Print the effective settings.
    Config,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub lang: String,
    #[arg(long)]
    pub target_words: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProcessBatchArgs {
    #[arg(long)]
    pub script: PathBuf,
    /// Batch recording named `START_ID-END_ID.wav`.
    #[arg(long)]
    pub audio: PathBuf,
    /// `mock`, `command:<template>` or `http`; the settings decide if absent.
    #[arg(long)]
    pub asr: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Truth table for the mock recognizer; defaults to the batch's sidecar.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Character corruption rate for the mock recognizer.
    #[arg(long)]
    pub corruption: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub dir: PathBuf,
    /// Criteria file of `key = value` lines, e.g. `min_snr_db = 30`.
    #[arg(long)]
    pub criteria: Option<PathBuf>,
    /// JSON report destination.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    #[arg(long)]
    pub script: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub gap_s: Option<f64>,
    /// Truth table destination; defaults to the sidecar next to `--out`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub sample_rate: Option<u32>,
    /// Only the sentences from this id on.
    #[arg(long)]
    pub from: Option<String>,
    /// At most this many sentences.
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub sentences: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub addr: Option<String>,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub allowlist: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Dataset id or name.
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Dataset id or name.
    #[arg(long)]
    pub dataset: String,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose {
        tracing::Level::INFO
    } else {
        tracing::Level::WARN
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("forge: {}", e.message);
            e.exit_code()
        }
    }
}
