//! `semcache`: run the cache server, talk to it, and evaluate embedding
//! models for it.
//!
//! Exit codes: 0 success, 2 bad input (files, flags, data), 3 upstream
//! failure (embedding provider, LLM or cache server).

mod commands;

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, ColorChoice, CommandFactory, FromArgMatches, Parser, Subcommand};
use thiserror::Error;

#[derive(Parser)]
#[command(name = "semcache", version, about = "Semantic cache server and embedding evaluation tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where embeddings come from. Without `--provider`, a mock provider built
/// from the `--mock-*` flags is used.
#[derive(Args, Clone)]
pub struct ProviderArgs {
    /// Provider config file (TOML)
    #[arg(long, value_name = "FILE")]
    pub provider: Option<PathBuf>,
    /// Mock provider model name
    #[arg(long, default_value = "mock", conflicts_with = "provider")]
    pub mock_model: String,
    /// Mock provider embedding dimension
    #[arg(long, default_value_t = 256, conflicts_with = "provider")]
    pub mock_dim: usize,
    /// Mock provider seed
    #[arg(long, default_value_t = 0, conflicts_with = "provider")]
    pub mock_seed: u64,
    /// Delay added to every mock provider call, in milliseconds
    #[arg(long, default_value_t = 0, conflicts_with = "provider")]
    pub mock_delay_ms: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Run the cache HTTP server until Ctrl-C or SIGTERM
    Serve {
        /// Server config file (TOML); LANGCACHE_BIND, LANGCACHE_THRESHOLD and
        /// LANGCACHE_PERSIST_PATH override it
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Override the mock provider seed from the config [default: config value, else 0]
        #[arg(long)]
        mock_seed: Option<u64>,
    },
    /// Store a query/response pair on a running server
    Put {
        /// Server base URL
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        server: String,
        #[arg(long)]
        query: String,
        #[arg(long)]
        response: String,
    },
    /// Look a query up on a running server and print the JSON answer
    Lookup {
        /// Server base URL
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        server: String,
        #[arg(long)]
        query: String,
        /// Per-request threshold override in [-1, 1]
        #[arg(long, allow_negative_numbers = true)]
        threshold: Option<f64>,
    },
    /// Evaluate a provider on labeled pairs and write the report as JSON
    Eval {
        /// CSV with question1, question2, is_duplicate columns
        #[arg(long, value_name = "CSV")]
        pairs: PathBuf,
        #[command(flatten)]
        provider: ProviderArgs,
        /// Report JSON to write
        #[arg(long, value_name = "JSON")]
        out: PathBuf,
        /// Provider batches in flight at once
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
    },
    /// Print the F1- and accuracy-optimal thresholds for labeled pairs
    Calibrate {
        /// CSV with question1, question2, is_duplicate columns
        #[arg(long, value_name = "CSV")]
        pairs: PathBuf,
        #[command(flatten)]
        provider: ProviderArgs,
        /// Provider batches in flight at once
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
    },
    /// Generate labeled pairs from seed queries with an LLM
    Synthgen {
        /// Seed file: .jsonl of {id, text, domain_tag?} or one query per line
        #[arg(long, value_name = "FILE")]
        seeds: PathBuf,
        /// Generation config file (TOML)
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Output JSON Lines file
        #[arg(long, value_name = "JSONL")]
        out: PathBuf,
        /// Also write question1,question2,is_duplicate CSV here
        #[arg(long, value_name = "CSV")]
        export_csv: Option<PathBuf>,
        /// Override the configured concurrency
        #[arg(long)]
        concurrency: Option<usize>,
    },
    /// Measure single-text embedding latency
    Bench {
        /// Query file, one query per line
        #[arg(long, value_name = "FILE")]
        queries: PathBuf,
        #[command(flatten)]
        provider: ProviderArgs,
        /// Unmeasured calls before timing starts
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        /// Passes over the query file
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// Write the latency stats JSON here
        #[arg(long, value_name = "JSON")]
        out: Option<PathBuf>,
        /// Write a latency/precision scatter row here (needs --ap or --report)
        #[arg(long, value_name = "CSV")]
        scatter: Option<PathBuf>,
        /// Average precision for the scatter row
        #[arg(long, conflicts_with = "report")]
        ap: Option<f64>,
        /// Eval report JSON to take the average precision from
        #[arg(long, value_name = "JSON")]
        report: Option<PathBuf>,
    },
    /// Write comparison tables and plot data from earlier results
    #[command(subcommand)]
    Export(ExportCommand),
}

#[derive(Subcommand)]
pub enum ExportCommand {
    /// Metrics table CSV (Model, Source, Precision, Recall, F1, Accuracy, Avg. Precision)
    Table {
        /// MODEL,SOURCE,REPORT_JSON (repeatable)
        #[arg(long = "row", required = true, action = ArgAction::Append)]
        rows: Vec<String>,
        /// CSV file to write
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
    },
    /// Latency/precision scatter CSV (x,y,Model)
    Scatter {
        /// MODEL,MEAN_SECONDS,AVERAGE_PRECISION (repeatable)
        #[arg(long = "point", required = true, action = ArgAction::Append)]
        points: Vec<String>,
        /// CSV file to write
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Upstream(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Upstream(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    let no_color = std::env::var_os("NO_COLOR").is_some_and(|v| !v.is_empty());
    let color = if no_color { ColorChoice::Never } else { ColorChoice::Auto };
    let matches = Cli::command().color(color).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };

    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(!no_color && std::io::stderr().is_terminal())
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(commands::run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
