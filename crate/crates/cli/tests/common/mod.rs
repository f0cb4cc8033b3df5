#![allow(dead_code)]

use std::net::SocketAddr;
use std::time::{Duration, Instant};

use mage_cli::client::{AdminClient, ExamClient};
use mage_cli::host::{start_host, HostOptions, RunningHost};
use mage_cli::server::{start_server, RunningServer, ServerOptions};
use mage_core::RetryPolicy;
use tempfile::TempDir;

/// Short backoff so unreachable peers are given up on within seconds.
pub fn fast_policy() -> RetryPolicy {
    RetryPolicy {
        base_delay_ms: 50,
        factor: 2,
        cap_ms: 400,
        jitter_permille: 100,
        grace_ms: 5_000,
        install_hop_budget_ms: 1_500,
    }
}

pub fn loopback() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 0))
}

pub struct Server {
    pub running: RunningServer,
    pub dir: TempDir,
}

impl Server {
    pub fn start(builtins: &[&str]) -> Server {
        let dir = tempfile::tempdir().unwrap();
        Server {
            running: Self::open(dir.path(), builtins),
            dir,
        }
    }

    pub fn open(data: &std::path::Path, builtins: &[&str]) -> RunningServer {
        let mut opts = ServerOptions::new(data.to_path_buf());
        opts.frame_addr = loopback();
        opts.http_addr = loopback();
        opts.builtin_tests = builtins.iter().map(|s| s.to_string()).collect();
        opts.policy = fast_policy();
        opts.sweep_every = Duration::from_millis(100);
        start_server(opts).unwrap()
    }

    pub fn admin(&self) -> AdminClient {
        AdminClient::new(&format!("http://{}", self.running.http_addr)).unwrap()
    }
}

pub struct Host {
    pub running: RunningHost,
    pub dir: TempDir,
}

impl Host {
    pub fn start() -> Host {
        let dir = tempfile::tempdir().unwrap();
        let mut opts = HostOptions::new(dir.path().to_path_buf());
        opts.frame_addr = loopback();
        opts.api_addr = loopback();
        opts.policy = fast_policy();
        opts.tick = Duration::from_millis(50);
        Host {
            running: start_host(opts).unwrap(),
            dir,
        }
    }

    pub fn exam(&self) -> ExamClient {
        ExamClient::new(&format!("http://{}", self.running.api_addr)).unwrap()
    }
}

/// Polls `f` until it yields a value or `limit` passes.
pub fn wait_for<T>(limit: Duration, mut f: impl FnMut() -> Option<T>) -> T {
    let start = Instant::now();
    loop {
        if let Some(v) = f() {
            return v;
        }
        assert!(start.elapsed() < limit, "condition not met within {limit:?}");
        std::thread::sleep(Duration::from_millis(20));
    }
}
