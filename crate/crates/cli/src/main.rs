//! `gramprompt`: ingest corpora, generate grammar explanations, run judging
//! conditions and report accuracies.

mod backend;
mod commands;
mod config;
mod error;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::HygieneMode;

#[derive(Parser)]
#[command(name = "gramprompt", version, about = "Explain-then-process grammar prompting harness")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Explanation cache directory (overrides `cache_dir`).
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// More logging; repeat for debug output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read a benchmark into canonical minimal pairs.
    Ingest(IngestArgs),
    /// Generate grammar explanations into the cache.
    Explain(ExplainArgs),
    /// Run judging conditions against target models.
    Run(RunArgs),
    /// Score finished runs and write CSV and Markdown tables.
    Report(ReportArgs),
    /// Paired comparison of two conditions over category accuracies.
    Compare(CompareArgs),
    /// Write every cached explanation to an archive.
    ExportCache(ExportArgs),
    /// Load an archive into the cache.
    ImportCache(ImportArgs),
}

#[derive(Args)]
pub struct IngestArgs {
    /// File or directory to read.
    pub path: PathBuf,
    /// blimp-jsonl, sling-tsv, rublimp-jsonl or canonical-jsonl.
    #[arg(long)]
    pub format: String,
    /// Also write the pairs as canonical JSON Lines.
    #[arg(long)]
    pub emit_canonical: Option<PathBuf>,
    /// Print the manifest as JSON instead of a summary.
    #[arg(long)]
    pub json: bool,
    /// Fail when any record is rejected.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args)]
pub struct ExplainArgs {
    /// Generator label; repeat for several (overrides `generators`).
    #[arg(long = "generator")]
    pub generators: Vec<String>,
    /// beginner or expert; repeat for both (overrides `audiences`).
    #[arg(long = "audience")]
    pub audiences: Vec<String>,
    #[arg(long, value_enum)]
    pub check_hygiene: Option<HygieneMode>,
    /// Backend spec used for every generator.
    #[arg(long)]
    pub backend: Option<String>,
}

#[derive(Args)]
pub struct RunArgs {
    /// Comma-separated conditions (overrides `conditions`).
    #[arg(long, value_delimiter = ',')]
    pub conditions: Vec<String>,
    /// Comma-separated target models (restricts `targets`).
    #[arg(long, value_delimiter = ',')]
    pub targets: Vec<String>,
    /// Backend spec used for every target.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub per_paradigm_n: Option<usize>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Directory of run directories (default `<out>/runs`).
    #[arg(long)]
    pub runs: Option<PathBuf>,
    /// Include the SLM/LLM gap section.
    #[arg(long)]
    pub gap: bool,
    /// Model group tag, e.g. `gpt-4o=LLM`; repeatable.
    #[arg(long = "group")]
    pub groups: Vec<String>,
    /// Two condition selectors to compare; repeatable.
    #[arg(long, num_args = 2, value_names = ["A", "B"], action = clap::ArgAction::Append)]
    pub compare: Vec<String>,
    /// Combine runs over different corpus digests.
    #[arg(long)]
    pub force_mix: bool,
}

#[derive(Args)]
pub struct CompareArgs {
    pub a: String,
    pub b: String,
    #[arg(long)]
    pub runs: Option<PathBuf>,
    #[arg(long)]
    pub force_mix: bool,
}

#[derive(Args)]
pub struct ExportArgs {
    /// Archive path; `-` writes to stdout.
    pub archive: PathBuf,
}

#[derive(Args)]
pub struct ImportArgs {
    pub archive: PathBuf,
}

fn main() -> ExitCode {
    // Argument errors are user errors (exit 1), not clap's default 2, which
    // is reserved for backend failures.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { error::EXIT_USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = commands::Globals::new(cli.config.as_deref(), cli.out, cli.cache).and_then(|g| match cli.command {
        Command::Ingest(a) => commands::ingest(&g, &a),
        Command::Explain(a) => commands::explain(g, &a),
        Command::Run(a) => commands::run(g, &a),
        Command::Report(a) => commands::report(&g, &a),
        Command::Compare(a) => commands::compare(&g, &a),
        Command::ExportCache(a) => commands::export_cache(&g, &a),
        Command::ImportCache(a) => commands::import_cache(&g, &a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
