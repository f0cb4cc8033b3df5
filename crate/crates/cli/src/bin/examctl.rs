use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mage_cli::client::AdminClient;
use mage_cli::server::{CreateSession, InstallRequest};
use mage_core::server::RosterEntry;
use mage_core::{EndpointAddress, SessionMode};
use serde::Serialize;

/// Admin client for a running mage-server.
#[derive(Debug, Parser)]
#[command(name = "examctl", version)]
struct Args {
    /// Base URL of the admin API.
    #[arg(long, env = "MAGE_ADMIN_URL", default_value = "http://127.0.0.1:8400")]
    server: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Push,
    Pull,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List the tests the server can hand out.
    Tests,
    CreateSession {
        #[arg(long)]
        test: String,
        #[arg(long, value_enum, default_value_t = Mode::Push)]
        mode: Mode,
        /// `student_id=host:port`. Repeatable.
        #[arg(long = "student", value_parser = roster_entry)]
        roster: Vec<RosterEntry>,
        /// Absolute deadline, ms since the Unix epoch.
        #[arg(long, conflicts_with = "duration_ms", required_unless_present = "duration_ms")]
        deadline: Option<u64>,
        #[arg(long)]
        duration_ms: Option<u64>,
    },
    Status { session: String },
    Dispatch { session: String },
    Results {
        session: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Publish {
        session: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll a configuration change across hosts and wait for the report.
    Install {
        /// host:port in visiting order. Repeatable.
        #[arg(long = "host", required = true)]
        hosts: Vec<EndpointAddress>,
        /// `key=value`. Repeatable.
        #[arg(long = "set", value_parser = key_value)]
        values: Vec<(String, String)>,
    },
}

fn roster_entry(s: &str) -> Result<RosterEntry, String> {
    let (id, endpoint) = s
        .split_once('=')
        .ok_or_else(|| format!("expected student_id=host:port, got {s:?}"))?;
    Ok(RosterEntry::new(id, endpoint.parse()?))
}

fn key_value(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    Ok((k.to_owned(), v.to_owned()))
}

fn pretty<T: Serialize>(v: &T) -> Result<(), Box<dyn std::error::Error>> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn emit(bytes: Vec<u8>, out: Option<PathBuf>) -> Result<(), Box<dyn std::error::Error>> {
    match out {
        Some(path) => std::fs::write(path, bytes)?,
        None => println!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(())
}

fn run(args: Args) -> Result<(), Box<dyn std::error::Error>> {
    let client = AdminClient::new(&args.server)?;
    match args.command {
        Command::Tests => pretty(&client.tests()?),
        Command::CreateSession { test, mode, roster, deadline, duration_ms } => {
            let req = CreateSession {
                test_id: test,
                mode: match mode {
                    Mode::Push => SessionMode::Push,
                    Mode::Pull => SessionMode::Pull,
                },
                roster,
                deadline,
                duration_ms,
            };
            pretty(&client.create_session(&req)?)
        }
        Command::Status { session } => pretty(&client.session(&session)?),
        Command::Dispatch { session } => pretty(&client.dispatch(&session)?),
        Command::Results { session, out } => emit(client.results(&session)?, out),
        Command::Publish { session, out } => emit(client.publish(&session)?, out),
        Command::Install { hosts, values } => {
            let req = InstallRequest {
                payload: values.into_iter().collect::<BTreeMap<_, _>>(),
                hosts,
            };
            pretty(&client.install(&req)?)
        }
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("examctl: {e}");
            ExitCode::FAILURE
        }
    }
}
