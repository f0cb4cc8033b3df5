use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args as ClapArgs, Parser, Subcommand};
use mage_core::canonical;
use mage_core::samples::builtin;
use mage_core::server::load_test_repository;
use mage_core::sim::{
    compare, run_campaign, run_install, AnswerPolicy, CampaignConfig, CampaignMetrics,
    InstallCampaign, NetworkModel, Partition, SimMode,
};
use mage_core::{RetryPolicy, TestGraph};

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

/// Deterministic campaign simulator: real nodes and frames on a simulated
/// network and clock.
#[derive(Debug, Parser)]
#[command(name = "examsim", version)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, ClapArgs)]
struct Network {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// One-way latency of every link, ms.
    #[arg(long, default_value_t = 20)]
    latency: u64,
    /// Probability that any one frame is lost.
    #[arg(long, default_value_t = 0.0)]
    drop: f64,
    /// `link:t0:t1`, link down over [t0, t1). Repeatable.
    #[arg(long = "partition", value_parser = partition)]
    partitions: Vec<Partition>,
}

impl Network {
    fn model(&self) -> NetworkModel {
        let mut m = NetworkModel::clean(self.latency, self.seed);
        m.drop_probability = self.drop;
        m.partitions = self.partitions.clone();
        m
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one exam campaign and write its metrics.
    Run {
        /// Test id: a generated test (`adaptive`, `linear-<n>`) or one in
        /// --tests-dir.
        #[arg(long)]
        test: String,
        #[arg(long)]
        tests_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        students: usize,
        /// always-correct, always-wrong, random[:seed], scripted:a|b|c
        #[arg(long, default_value = "always-correct")]
        policy: String,
        #[arg(long, default_value = "agent", value_parser = mode)]
        mode: SimMode,
        /// Exam deadline on the simulated clock, ms.
        #[arg(long, default_value_t = 3_600_000)]
        deadline: u64,
        /// Simulated time per answer, ms.
        #[arg(long, default_value_t = 5_000)]
        think: u64,
        #[command(flatten)]
        network: Network,
        /// Metrics file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the compiled results.
        #[arg(long)]
        results: Option<PathBuf>,
        /// Also write the frame trace.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Compare two metrics files field by field.
    Compare { a: PathBuf, b: PathBuf },
    /// Run an install agent over hosts h1..hN and print its report.
    Install {
        #[arg(long, default_value_t = 3)]
        hosts: usize,
        /// `key=value`. Repeatable.
        #[arg(long = "set", value_parser = key_value)]
        values: Vec<(String, String)>,
        #[command(flatten)]
        network: Network,
    },
}

fn partition(s: &str) -> std::result::Result<Partition, String> {
    Partition::parse(s).ok_or_else(|| format!("expected link:t0:t1, got {s:?}"))
}

fn mode(s: &str) -> std::result::Result<SimMode, String> {
    SimMode::parse(s).ok_or_else(|| format!("expected agent, baseline or baseline-static, got {s:?}"))
}

fn key_value(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    Ok((k.to_owned(), v.to_owned()))
}

fn find_test(id: &str, dir: Option<&Path>) -> Result<TestGraph> {
    if let Some(dir) = dir {
        if let Some(g) = load_test_repository(dir)?.tests.remove(id) {
            return Ok(g);
        }
    }
    builtin(id).ok_or_else(|| format!("unknown test {id:?}").into())
}

fn write_or_print(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes)?,
        None => println!("{}", String::from_utf8_lossy(bytes)),
    }
    Ok(())
}

fn read_metrics(path: &Path) -> Result<CampaignMetrics> {
    Ok(canonical::from_bytes(&std::fs::read(path)?)?)
}

fn run(args: Args) -> Result<()> {
    match args.command {
        Command::Run {
            test,
            tests_dir,
            students,
            policy,
            mode,
            deadline,
            think,
            network,
            out,
            results,
            trace,
        } => {
            let graph = find_test(&test, tests_dir.as_deref())?;
            let mut cfg = CampaignConfig::new(students, mode);
            cfg.policy = AnswerPolicy::parse(&policy, network.seed)
                .ok_or_else(|| format!("unknown policy {policy:?}"))?;
            cfg.network = network.model();
            cfg.deadline_ms = deadline;
            cfg.think_ms = think;
            let outcome = run_campaign(&cfg, &graph)?;
            let m = &outcome.metrics;
            eprintln!(
                "{} {}x{}: {} frames, {} bytes, {} server grading ops, {} returns",
                mode.as_str(),
                m.test_id,
                m.n_students,
                m.frames_total,
                m.bytes_total,
                m.server_grading_ops,
                m.returns_delivered
            );
            if let Some(p) = results {
                std::fs::write(p, &outcome.report)?;
            }
            if let Some(p) = trace {
                std::fs::write(p, outcome.trace_bytes())?;
            }
            write_or_print(out.as_deref(), &m.to_canonical())
        }
        Command::Compare { a, b } => {
            print!("{}", compare(&read_metrics(&a)?, &read_metrics(&b)?)?.render());
            Ok(())
        }
        Command::Install { hosts, values, network } => {
            let outcome = run_install(&InstallCampaign {
                hosts,
                payload: values.into_iter().collect::<BTreeMap<_, _>>(),
                network: network.model(),
                retry: RetryPolicy::default(),
            })?;
            let report = outcome.report.ok_or("install agent never came home")?;
            println!("{}", String::from_utf8_lossy(&canonical::to_bytes(&report)));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("examsim: {e}");
            ExitCode::FAILURE
        }
    }
}
