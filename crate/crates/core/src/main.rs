//! Command-line front end. Exit status: 0 on success, 1 on bad input,
//! 2 on a bad configuration.

use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tracing_subscriber::EnvFilter;

use scambait::gateway::{self, load_data_dir, ServeError, ServiceConfig};
use scambait::metrics::{report_from_snapshot, timeline_csv};
use scambait::sim::{run_simulation, SimError};
use scambait::triage::load_word_list;
use scambait::{classify, export_timeline, ingest_mailbox, parse_rfc822, MailMessage, MailboxFormat, ReasonCode};

#[derive(Parser)]
#[command(name = "scambait", version, about = "Keep mail scammers busy and measure how long they stay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a mailbox and print one triage verdict per message (JSON lines).
    Ingest {
        path: PathBuf,
        #[arg(long, value_enum)]
        format: MailboxFormat,
        /// Newline-separated brand names that make a message ineligible.
        #[arg(long)]
        denylist: Option<PathBuf>,
    },
    /// Triage a single RFC 822 message and print the verdict as JSON.
    Triage {
        file: PathBuf,
        #[arg(long)]
        denylist: Option<PathBuf>,
    },
    /// Run the persona simulation from a config file and write logs and CSVs.
    Simulate {
        config: PathBuf,
        /// Output directory; defaults to the configured data directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-thread volume report for a data directory.
    Report {
        data_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
    },
    /// Message timeline CSV for a data directory.
    Timeline { data_dir: PathBuf },
    /// Run the mailbox poller, scheduler and control API.
    Serve { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Table,
    Csv,
}

/// Marks an error as a configuration problem (exit status 2).
#[derive(Debug, thiserror::Error)]
#[error(transparent)]
struct ConfigProblem(anyhow::Error);

fn config_problem(e: impl Into<anyhow::Error>) -> anyhow::Error {
    ConfigProblem(e.into()).into()
}

#[derive(Serialize)]
struct VerdictLine<'a> {
    id: &'a str,
    thread_key: &'a str,
    from: &'a str,
    subject: &'a str,
    eligible: bool,
    reasons: &'a [ReasonCode],
}

fn verdict_line(msg: &MailMessage, denylist: &[String]) -> String {
    let verdict = classify(msg, denylist);
    serde_json::to_string(&VerdictLine {
        id: &msg.id,
        thread_key: &msg.thread_key,
        from: &msg.from_addr,
        subject: &msg.subject,
        eligible: verdict.eligible,
        reasons: &verdict.reasons,
    })
    .expect("verdict serializes")
}

fn denylist(path: Option<&Path>) -> Result<Vec<String>> {
    match path {
        Some(p) => load_word_list(p).with_context(|| format!("reading denylist {}", p.display())),
        None => Ok(Vec::new()),
    }
}

fn load_config(path: &Path) -> Result<ServiceConfig> {
    ServiceConfig::load(path).map_err(config_problem)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest { path, format, denylist: deny } => {
            let deny = denylist(deny.as_deref())?;
            let ingested = ingest_mailbox(&path, format).with_context(|| format!("reading {}", path.display()))?;
            for d in &ingested.diagnostics {
                tracing::warn!(source = %d.source, error = %d.error, "skipped unparseable message");
            }
            for msg in &ingested.messages {
                println!("{}", verdict_line(msg, &deny));
            }
        }
        Command::Triage { file, denylist: deny } => {
            let deny = denylist(deny.as_deref())?;
            let raw = std::fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            let msg = parse_rfc822(&raw).with_context(|| format!("parsing {}", file.display()))?;
            println!("{}", serde_json::to_string_pretty(&classify(&msg, &deny))?);
        }
        Command::Simulate { config, out } => {
            let config = load_config(&config)?;
            let sim = config.sim_config().map_err(config_problem)?;
            let result = run_simulation(&sim).map_err(|e| match e {
                SimError::Config(_) | SimError::Persona(_) | SimError::Shape(_) => config_problem(e),
                other => other.into(),
            })?;
            let dir = out.unwrap_or(config.paths.data_dir);
            result.write_to(&dir).with_context(|| format!("writing results to {}", dir.display()))?;
            print!("{}", result.report.to_table());
            tracing::info!(dir = %dir.display(), threads = result.threads.len(), "simulation written");
        }
        Command::Report { data_dir, format } => {
            let report = report_from_snapshot(&load_data_dir(&data_dir)?);
            match format {
                ReportFormat::Table => print!("{}", report.to_table()),
                ReportFormat::Csv => print!("{}", report.to_csv()),
            }
        }
        Command::Timeline { data_dir } => {
            print!("{}", timeline_csv(&export_timeline(&load_data_dir(&data_dir)?)));
        }
        Command::Serve { config } => {
            let config = load_config(&config)?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime
                .block_on(gateway::serve(config, async {
                    let _ = tokio::signal::ctrl_c().await;
                }))
                .map_err(|e| match e {
                    ServeError::Config(_) => config_problem(e),
                    other => other.into(),
                })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigProblem>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
