use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use ozwoz_core::analysis::{extract_turns, report, write_turns_csv, TurnRecord};
use ozwoz_core::pipeline::{classify, derive_wizard_tasks, PipelineConfig};
use ozwoz_core::SessionId;
use ozwoz_server::hub::HubConfig;
use ozwoz_server::store::Store;
use ozwoz_server::ServerOptions;

#[derive(Parser)]
#[command(name = "ozwoz", version, about = "Wizard-of-Oz prototyping server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP and WebSocket server.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        /// Adapter registry (defaults to <data-dir>/adapters.json if present).
        #[arg(long)]
        adapters: Option<PathBuf>,
        #[arg(long, default_value_t = 20_000)]
        heartbeat_ms: u64,
        #[arg(long, default_value_t = 3)]
        max_missed_pongs: u32,
        /// How long a participant may be disconnected before the session ends.
        #[arg(long, default_value_t = 60_000)]
        grace_ms: u64,
        /// Sync every log line to disk, not just to the OS.
        #[arg(long)]
        fsync: bool,
    },
    /// Pipeline configuration tools.
    Pipeline {
        #[command(subcommand)]
        command: PipelineCommand,
    },
    /// Print a session log or its turn table.
    Export {
        session_id: String,
        #[arg(long, value_enum, default_value_t = Format::Ndjson)]
        format: Format,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
    },
    /// Print latency, spread and consistency per session and overall.
    Analyze {
        #[arg(required = true)]
        session_ids: Vec<String>,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        /// Also write the turn table of all sessions to this file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PipelineCommand {
    /// Validate a pipeline JSON file and show its wizard tasks.
    Check { file: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Ndjson,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { port, host, data_dir, adapters, heartbeat_ms, max_missed_pongs, grace_ms, fsync } => {
            let opts = ServerOptions {
                data_dir,
                adapters,
                hub: HubConfig {
                    heartbeat: Duration::from_millis(heartbeat_ms),
                    max_missed_pongs,
                    participant_grace: Duration::from_millis(grace_ms),
                },
                fsync,
            };
            serve(opts, SocketAddr::new(host, port))
        }
        Command::Pipeline { command: PipelineCommand::Check { file } } => check_pipeline(&file),
        Command::Export { session_id, format, data_dir } => export(&data_dir, &session_id, format),
        Command::Analyze { session_ids, data_dir, csv } => analyze(&data_dir, &session_ids, csv.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type CliResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn serve(opts: ServerOptions, addr: SocketAddr) -> CliResult {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let server = ozwoz_server::spawn(&opts, addr).await?;
        let r = &server.recovery;
        if r.sessions > 0 {
            tracing::info!(
                "recovered {} sessions ({} torn lines cut, {} component calls resumed)",
                r.sessions,
                r.torn_lines,
                r.resumed_invocations
            );
        }
        for (id, reason) in &r.failed {
            tracing::warn!(session = %id, "left on disk: {reason}");
        }
        println!("listening on {}", server.addr);
        std::io::stdout().flush()?;
        tokio::signal::ctrl_c().await?;
        server.abort();
        Ok(ExitCode::SUCCESS)
    })
}

fn check_pipeline(file: &std::path::Path) -> CliResult {
    let text = std::fs::read_to_string(file)?;
    let config: PipelineConfig = serde_json::from_str(&text)?;
    match derive_wizard_tasks(&config) {
        Ok(tasks) => {
            let case = classify(&config).map_or("none".to_string(), |c| c.to_string());
            println!("ok: design-space case {case}");
            for t in &tasks {
                println!("  {t}");
            }
            if tasks.is_empty() {
                println!("  (fully automatic)");
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(violations) => {
            for v in &violations {
                println!("{v}");
            }
            Ok(ExitCode::from(1))
        }
    }
}

fn load_events(data_dir: &std::path::Path, id: &str) -> Result<Vec<ozwoz_core::session::SessionEvent>, Box<dyn std::error::Error>> {
    let store = Store::open(data_dir, false)?;
    Ok(store.peek_log(&SessionId::new(id))?.events)
}

fn export(data_dir: &std::path::Path, id: &str, format: Format) -> CliResult {
    let events = load_events(data_dir, id)?;
    let mut out = std::io::stdout().lock();
    match format {
        Format::Ndjson => {
            for ev in &events {
                writeln!(out, "{}", ev.to_json_line())?;
            }
        }
        Format::Csv => write_turns_csv(&extract_turns(&events)?, &mut out)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn analyze(data_dir: &std::path::Path, ids: &[String], csv: Option<&std::path::Path>) -> CliResult {
    let mut reports = Vec::new();
    let mut all: Vec<TurnRecord> = Vec::new();
    for id in ids {
        let turns = extract_turns(&load_events(data_dir, id)?)?;
        reports.push(report(id, &turns));
        all.extend(turns);
    }
    let doc = json!({ "sessions": reports, "aggregate": report("aggregate", &all) });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    if let Some(path) = csv {
        write_turns_csv(&all, std::fs::File::create(path)?)?;
    }
    Ok(ExitCode::SUCCESS)
}
