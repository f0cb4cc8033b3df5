//! One line per primary acceptance criterion. Exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use mage_core::agent::{create_evaluation_agent, decode_snapshot, encode_snapshot, step_agent, EvaluationSpec};
use mage_core::canonical;
use mage_core::clock::ManualClock;
use mage_core::engine::{apply_answer, enumerate_paths, Answer, EvalState};
use mage_core::host::{ExamView, HostPlatform};
use mage_core::samples::{linear_test, random_graph, LINEAR_ANSWER};
use mage_core::sim::{
    run_campaign, run_install, AnswerPolicy, CampaignConfig, InstallCampaign, NetworkModel,
    Partition, SimMode, TraceEvent,
};
use mage_core::wire::{Message, RetryPolicy};
use mage_core::{AgentEvent, AgentId, AnswerPayload, EndpointAddress, FinalResult, InstallOutcome, SessionMode};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(detail.into())
    }
}

fn engine_oracle() -> Outcome {
    let start = Instant::now();
    let mut graphs = 0;
    let mut paths = 0;
    for seed in 0..500u64 {
        let graph = random_graph(&mut common::rng(seed), 6);
        graphs += 1;
        for outcome in enumerate_paths(&graph).map_err(|e| e.to_string())? {
            paths += 1;
            let mut state = EvalState::start(&graph);
            for payload in &outcome.answers {
                let q = state.current.as_question().ok_or("ran past END")?.clone();
                let answer = Answer { question_id: q, payload: payload.clone(), answered_at: 0 };
                state = apply_answer(&graph, &state, answer).map_err(|e| e.to_string())?;
            }
            check(state.is_terminal(), format!("seed {seed}: not at END"))?;
            check(state.presented == outcome.path, format!("seed {seed}: path differs"))?;
            check(state.raw_score == outcome.raw_score, format!("seed {seed}: score differs"))?;
        }
    }
    let took = start.elapsed();
    check(took < Duration::from_secs(30), format!("took {took:?}"))?;
    Ok(format!("{graphs} graphs, {paths} paths, 0 mismatches, {took:.2?}"))
}

fn codec_exactness() -> Outcome {
    let start = Instant::now();
    for seed in 0..1000u64 {
        let s = common::random_snapshot(seed);
        let bytes = encode_snapshot(&s);
        let back = decode_snapshot(&bytes).map_err(|e| format!("seed {seed}: {e}"))?;
        check(back == s && encode_snapshot(&back) == bytes, format!("seed {seed}: not identical"))?;
    }
    // An ERROR frame padded to exactly 200 bytes.
    let mut detail = String::new();
    let frame = loop {
        let f = Message::error("PAD", detail.clone()).encode().map_err(|e| e.to_string())?;
        if f.len() >= 200 {
            break f;
        }
        detail.push('x');
    };
    check(frame.len() == 200, format!("frame is {} bytes", frame.len()))?;
    check(Message::decode(&frame).is_ok(), "pristine frame rejected")?;
    let mut mutations = 0;
    for i in 0..frame.len() {
        for v in 0..=255u8 {
            if v == frame[i] {
                continue;
            }
            let mut bad = frame.clone();
            bad[i] = v;
            mutations += 1;
            check(Message::decode(&bad).is_err(), format!("byte {i} = {v:#04x} accepted"))?;
        }
    }
    let took = start.elapsed();
    check(took < Duration::from_secs(60), format!("took {took:?}"))?;
    Ok(format!("1000 snapshots identical, {mutations}/{mutations} mutations rejected, {took:.2?}"))
}

fn campaign(mode: SimMode, n: usize, q: usize) -> Result<mage_core::sim::CampaignOutcome, String> {
    let graph = linear_test(&format!("linear-{q}"), q);
    run_campaign(&CampaignConfig::new(n, mode), &graph).map_err(|e| e.to_string())
}

fn scalability() -> Outcome {
    let mut seen = Vec::new();
    for (n, q) in [(1usize, 1usize), (10, 5), (50, 10)] {
        let a = campaign(SimMode::Agent, n, q)?.metrics.frames_sent_by_server;
        let b = campaign(SimMode::Baseline, n, q)?.metrics.frames_sent_by_server;
        let (n64, q64) = (n as u64, q as u64);
        check(a == 2 * n64, format!("N={n} Q={q}: agent sent {a}, want {}", 2 * n64))?;
        check(b == n64 * (q64 + 1), format!("N={n} Q={q}: baseline sent {b}, want {}", n64 * (q64 + 1)))?;
        seen.push(format!("({n},{q}) agent {a} baseline {b}"));
    }
    Ok(seen.join("; "))
}

fn grading_offload() -> Outcome {
    let mut campaigns = 0;
    for (n, q) in [(1usize, 1usize), (10, 5), (50, 10)] {
        let a = campaign(SimMode::Agent, n, q)?.metrics;
        check(a.server_grading_ops == 0, format!("agent N={n} Q={q}: {} ops", a.server_grading_ops))?;
        let b = campaign(SimMode::Baseline, n, q)?.metrics;
        // every student answers every question of a linear test
        let answers = (n * q) as u64;
        check(
            b.server_grading_ops == answers && b.answers_recorded == answers,
            format!("baseline N={n} Q={q}: {} ops for {answers} answers", b.server_grading_ops),
        )?;
        campaigns += 2;
    }
    for seed in 0..5 {
        let graph = mage_core::samples::adaptive_test();
        let mut c = CampaignConfig::new(8, SimMode::Agent);
        c.policy = AnswerPolicy::Random { seed };
        c.network.drop_probability = 0.1;
        c.network.seed = seed;
        let a = run_campaign(&c, &graph).map_err(|e| e.to_string())?.metrics;
        check(a.server_grading_ops == 0, format!("adaptive seed {seed}: {} ops", a.server_grading_ops))?;
        c.mode = SimMode::Baseline;
        let b = run_campaign(&c, &graph).map_err(|e| e.to_string())?.metrics;
        check(b.server_grading_ops == b.answers_recorded, format!("adaptive baseline seed {seed}"))?;
        campaigns += 2;
    }
    Ok(format!("{campaigns} campaigns: agent 0 ops, baseline ops == answers"))
}

fn offline_operation() -> Outcome {
    let graph = linear_test("linear-5", 5);
    let mut clean = CampaignConfig::new(10, SimMode::Agent);
    clean.deadline_ms = 120_000;
    clean.policy = AnswerPolicy::Random { seed: 5 };
    let mut cut = clean.clone();
    // After s004's DISPATCH_ACK is back (40 ms) until a minute past the deadline.
    cut.network.partitions.push(Partition {
        link: "s004".into(),
        start_ms: 1_000,
        end_ms: 180_000,
    });
    let a = run_campaign(&clean, &graph).map_err(|e| e.to_string())?;
    let b = run_campaign(&cut, &graph).map_err(|e| e.to_string())?;
    let lost = b.trace.iter().filter(|e| matches!(e, TraceEvent::Frame { arrives_at: None, .. })).count();
    check(lost > 0, "partition lost no frames")?;
    check(b.metrics.returns_delivered == 10, format!("{} returns delivered", b.metrics.returns_delivered))?;
    let (ra, rb) = (canonical::to_bytes(&a.results), canonical::to_bytes(&b.results));
    check(ra == rb, "compiled results differ")?;
    let done = b.metrics.completion_ms["s004"].unwrap_or(0);
    Ok(format!("{} bytes identical; {lost} frames lost; s004 delivered at {done} ms", ra.len()))
}

fn idempotence() -> Outcome {
    let graph = mage_core::samples::adaptive_test();
    let mut once = CampaignConfig::new(6, SimMode::Agent);
    once.policy = AnswerPolicy::Random { seed: 2 };
    let mut twice = once.clone();
    twice.force_duplicate_return = true;
    let a = run_campaign(&once, &graph).map_err(|e| e.to_string())?;
    let b = run_campaign(&twice, &graph).map_err(|e| e.to_string())?;
    let delivered = |o: &mage_core::sim::CampaignOutcome| {
        o.trace
            .iter()
            .filter(|e| matches!(e, TraceEvent::Frame { msg, arrives_at: Some(_), .. } if msg == "RETURN"))
            .count()
    };
    check(delivered(&a) == 6, format!("{} RETURNs delivered in the single run", delivered(&a)))?;
    check(delivered(&b) == 12, format!("{} RETURNs delivered in the forced run", delivered(&b)))?;
    check(a.grade_book == b.grade_book, "grade book differs")?;
    check(a.report == b.report, "published report differs")?;
    Ok(format!("12 RETURNs for 6 agents; grade book {} B and report {} B identical", a.grade_book.len(), a.report.len()))
}

fn deadline() -> Outcome {
    // Answers at 5020, 10020, ...; the deadline at 12000 falls while q3 is open.
    let graph = linear_test("linear-5", 5);
    let mut c = CampaignConfig::new(1, SimMode::Agent);
    c.deadline_ms = 12_000;
    let out = run_campaign(&c, &graph).map_err(|e| e.to_string())?;
    let row = out.results.rows.first().ok_or("no result row")?;
    check(row.partial, "not partial")?;
    let q3 = row.records.get(2).ok_or("q3 not presented")?;
    check(row.records.len() == 3, format!("{} questions presented", row.records.len()))?;
    check(q3.points_earned == 0 && q3.normalized_answer.is_none(), "open question scored")?;
    check(row.raw == 2 && row.max_on_path == 3, format!("{}/{}", row.raw, row.max_on_path))?;
    // 2 of 3 presented points: 66.66.. rounds to 66.7
    check(row.percent.tenths() == 667, format!("percent {}", row.percent))?;
    Ok(format!("partial, {}/{} over presented, {}%", row.raw, row.max_on_path, row.percent))
}

fn install_agent() -> Outcome {
    let mut network = NetworkModel::clean(20, 3);
    network.partitions.push(Partition { link: "h2".into(), start_ms: 0, end_ms: u64::MAX });
    let o = run_install(&InstallCampaign {
        hosts: 3,
        payload: [("max_agents".to_string(), "4".to_string())].into(),
        network,
        retry: RetryPolicy::default(),
    })
    .map_err(|e| e.to_string())?;
    let report = o.report.ok_or("install agent never returned")?;
    let outcomes: Vec<InstallOutcome> = report.iter().map(|e| e.outcome).collect();
    check(
        outcomes == [InstallOutcome::Applied, InstallOutcome::Skipped, InstallOutcome::Applied],
        format!("{outcomes:?}"),
    )?;
    let hosts: Vec<String> = report.iter().map(|e| e.host.host.clone()).collect();
    check(hosts == ["h1.sim", "h2.sim", "h3.sim"], format!("order {hosts:?}"))?;
    check(report[0].version == Some(1) && report[2].version == Some(1), "versions not bumped")?;
    check(o.configs["h1"].version == 1 && o.configs["h3"].version == 1 && o.configs["h2"].version == 0, "host configs")?;
    Ok("[applied, skipped, applied]; h1 and h3 at version 1".into())
}

/// Runs a 5-question exam on a durable host, crashing after the persist of
/// answer `crash_at` (if any) and restarting from disk.
fn exam_with_crash(crash_at: Option<usize>) -> Result<FinalResult, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let clock = ManualClock::new(0);
    let here = EndpointAddress::new("127.0.0.1", 7401);
    let open = || HostPlatform::open(here.clone(), dir.path(), Arc::new(clock.clone())).map_err(|e| e.to_string());
    let spec = EvaluationSpec {
        session_id: "session-1".into(),
        student_id: "ana".into(),
        mode: SessionMode::Push,
        home: EndpointAddress::new("127.0.0.1", 7400),
        target: here.clone(),
        deadline: 1_000_000,
    };
    let agent = create_evaluation_agent(AgentId::from_u128(5), spec, linear_test("linear-5", 5)).map_err(|e| e.to_string())?;
    let agent = step_agent(&agent, AgentEvent::Dispatched).map_err(|e| e.to_string())?;
    let id = agent.agent_id;
    let mut host = open()?;
    host.accept_dispatch(agent).map_err(|e| e.to_string())?;
    for k in 0..5 {
        clock.set(1_000 * (k as u64 + 1));
        let ExamView::Question { question } = host.current_question(&id).map_err(|e| e.to_string())? else {
            return Err(format!("no question at index {k}"));
        };
        // alternate right and wrong so the result depends on every answer
        let payload = AnswerPayload::text(if k % 2 == 0 { LINEAR_ANSWER } else { "41" });
        if crash_at == Some(k) {
            host.inject_crash_after_persist();
        }
        match host.submit_answer(&id, Some(&question.question_id), payload) {
            Ok(_) => {}
            Err(e) if e.code() == "INJECTED_CRASH" => {
                drop(host);
                host = open()?;
            }
            Err(e) => return Err(e.to_string()),
        }
    }
    let s = host.agent(&id).ok_or("agent lost")?;
    s.results.clone().ok_or_else(|| format!("agent is {}", s.status))
}

fn crash_safety() -> Outcome {
    let reference = canonical::to_bytes(&exam_with_crash(None)?);
    for k in 0..5 {
        let got = canonical::to_bytes(&exam_with_crash(Some(k))?);
        check(got == reference, format!("crash after answer {k}: results differ"))?;
    }
    Ok(format!("5 crash points, results identical ({} B)", reference.len()))
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "engine oracle equivalence", engine_oracle),
        (2, "codec exactness", codec_exactness),
        (3, "scalability frame counts", scalability),
        (4, "server grading offload", grading_offload),
        (5, "off-line operation", offline_operation),
        (6, "duplicate return idempotence", idempotence),
        (7, "deadline partial scoring", deadline),
        (8, "install agent itinerary", install_agent),
        (9, "crash safety", crash_safety),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {n} {name}: PASS ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({detail})");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
