use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mage_cli::server::{start_server, ServerOptions};
use mage_core::EndpointAddress;

/// Teacher-side platform: sends evaluation agents out, takes them back,
/// compiles and publishes the results.
#[derive(Debug, Parser)]
#[command(name = "mage-server", version)]
struct Args {
    /// Frame port for agent traffic.
    #[arg(long, env = "MAGE_SERVER_PORT", default_value_t = mage_core::wire::DEFAULT_SERVER_PORT)]
    port: u16,
    #[arg(long, default_value = "0.0.0.0")]
    bind: IpAddr,
    /// Port of the admin HTTP API.
    #[arg(long, env = "MAGE_SERVER_HTTP_PORT", default_value_t = 8400)]
    http_port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    http_bind: IpAddr,
    /// host:port that hosts use to send agents home.
    #[arg(long)]
    advertise: Option<EndpointAddress>,
    #[arg(long, env = "MAGE_TESTS_DIR")]
    tests_dir: Option<PathBuf>,
    /// Also serve a generated test (`adaptive`, `linear-<n>`). Repeatable.
    #[arg(long = "builtin-test")]
    builtin_tests: Vec<String>,
    #[arg(long, env = "MAGE_DATA_DIR", default_value = "mage-server-data")]
    data_dir: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let mut opts = ServerOptions::new(args.data_dir);
    opts.frame_addr = SocketAddr::new(args.bind, args.port);
    opts.http_addr = SocketAddr::new(args.http_bind, args.http_port);
    opts.advertise = args.advertise;
    opts.tests_dir = args.tests_dir;
    opts.builtin_tests = args.builtin_tests;
    match start_server(opts) {
        Ok(running) => {
            println!("frames {} admin http://{}", running.frame_addr, running.http_addr);
            loop {
                std::thread::park();
            }
        }
        Err(e) => {
            eprintln!("mage-server: {e}");
            ExitCode::FAILURE
        }
    }
}
