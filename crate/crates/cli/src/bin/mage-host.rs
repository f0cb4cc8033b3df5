use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mage_cli::host::{pull, start_host, HostOptions};
use mage_core::EndpointAddress;

/// Student-side agent platform. Runs exams locally and serves the exam API.
#[derive(Debug, Parser)]
#[command(name = "mage-host", version, args_conflicts_with_subcommands = true)]
struct Args {
    #[command(subcommand)]
    command: Option<Command>,
    /// Frame port agents are dispatched to.
    #[arg(long, env = "MAGE_HOST_PORT", default_value_t = mage_core::wire::DEFAULT_HOST_PORT)]
    port: u16,
    #[arg(long, default_value = "0.0.0.0")]
    bind: IpAddr,
    /// Port of the local exam API.
    #[arg(long, env = "MAGE_HOST_API_PORT", default_value_t = 8401)]
    api_port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    api_bind: IpAddr,
    /// host:port this platform is known by. Install itineraries use it.
    #[arg(long)]
    advertise: Option<EndpointAddress>,
    #[arg(long, env = "MAGE_HOST_DATA_DIR", default_value = "mage-host-data")]
    data_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Start a self-assessment: ask the server for an agent and hand it to
    /// the running host platform.
    Pull {
        #[arg(long)]
        server: EndpointAddress,
        #[arg(long)]
        test: String,
        #[arg(long)]
        student: String,
        /// The local platform's frame address.
        #[arg(long, default_value = "127.0.0.1:7401")]
        local: EndpointAddress,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    if let Some(Command::Pull { server, test, student, local }) = args.command {
        return match pull(&server, &local, &student, &test) {
            Ok(s) => {
                println!("agent {} delivered to {local}, deadline {}", s.agent_id, s.deadline);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("mage-host pull: {e}");
                ExitCode::FAILURE
            }
        };
    }
    let mut opts = HostOptions::new(args.data_dir);
    opts.frame_addr = SocketAddr::new(args.bind, args.port);
    opts.api_addr = SocketAddr::new(args.api_bind, args.api_port);
    opts.advertise = args.advertise;
    match start_host(opts) {
        Ok(running) => {
            println!(
                "host {} frames {} exam api http://{}",
                running.endpoint, running.frame_addr, running.api_addr
            );
            loop {
                std::thread::park();
            }
        }
        Err(e) => {
            eprintln!("mage-host: {e}");
            ExitCode::FAILURE
        }
    }
}
