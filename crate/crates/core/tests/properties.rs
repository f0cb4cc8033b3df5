mod common;

use std::collections::BTreeMap;

use mage_core::agent::{decode_snapshot, encode_snapshot, step_agent};
use mage_core::canonical;
use mage_core::engine::{
    apply_answer, enumerate_paths, finalize, normalize_text, validate_graph, Answer, EvalState,
};
use mage_core::samples::{builtin, random_graph};
use mage_core::server::{aggregate, ResultRow, RosterEntry, NewSession, ServerConfig, ServerNode};
use mage_core::sim::{run_campaign, AnswerPolicy, CampaignConfig, SimMode};
use mage_core::wire::{Message, RetryPolicy, RetrySchedule};
use mage_core::{AgentEvent, AgentStatus, EndpointAddress, Percent, SessionMode};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Stepwise execution follows exactly the path and score the
    /// enumeration oracle predicts for each answer class.
    #[test]
    fn stepwise_matches_oracle(seed in any::<u64>()) {
        let graph = random_graph(&mut common::rng(seed), 6);
        prop_assert!(validate_graph(&graph).is_ok());
        for outcome in enumerate_paths(&graph).unwrap() {
            let mut state = EvalState::start(&graph);
            for payload in &outcome.answers {
                let q = state.current.as_question().unwrap().clone();
                state = apply_answer(&graph, &state, Answer { question_id: q, payload: payload.clone(), answered_at: 0 }).unwrap();
            }
            prop_assert!(state.is_terminal());
            prop_assert_eq!(&state.presented, &outcome.path);
            prop_assert_eq!(state.raw_score, outcome.raw_score);
            let result = finalize(&graph, &state, false).unwrap();
            prop_assert_eq!(result.raw, outcome.raw_score);
        }
    }

    #[test]
    fn snapshot_round_trip(seed in any::<u64>()) {
        let s = common::random_snapshot(seed);
        let bytes = encode_snapshot(&s);
        let back = decode_snapshot(&bytes).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(encode_snapshot(&back), bytes);
    }

    /// Every accepted event bumps seq by one; a refused event changes nothing.
    #[test]
    fn seq_counts_accepted_events(seed in any::<u64>(), picks in proptest::collection::vec(0usize..7, 0..20)) {
        let mut s = common::random_snapshot(seed);
        for p in picks {
            let event = match p {
                0 => AgentEvent::Dispatched,
                1 => AgentEvent::Arrived,
                2 => AgentEvent::DeadlineReached,
                3 => AgentEvent::EvalDone,
                4 => AgentEvent::ReturnAcked,
                5 => match s.current_hop() {
                    Some(h) => AgentEvent::HopDone(mage_core::InstallReportEntry::skipped(h.clone())),
                    None => AgentEvent::EvalDone,
                },
                _ => AgentEvent::Arrived,
            };
            match step_agent(&s, event) {
                Ok(next) => {
                    prop_assert_eq!(next.seq, s.seq + 1);
                    s = next;
                }
                Err(e) => prop_assert!(matches!(e.code(), "ILLEGAL_TRANSITION" | "NOT_TERMINAL"), "{e}"),
            }
        }
    }

    #[test]
    fn frame_round_trip(seed in any::<u64>()) {
        let s = common::random_snapshot(seed);
        let msg = match s.status {
            AgentStatus::InTransit => Message::Dispatch(s),
            AgentStatus::Returning => Message::Return(s),
            _ => Message::error("SOME_REASON", format!("agent {}", s.agent_id)),
        };
        let frame = msg.encode().unwrap();
        prop_assert_eq!(Message::decode(&frame).unwrap(), msg);
    }

    #[test]
    fn normalization_is_idempotent(s in "\\PC{0,24}") {
        let once = normalize_text(&s);
        prop_assert_eq!(normalize_text(&once), once.clone());
        prop_assert!(!once.starts_with(' ') && !once.ends_with(' ') && !once.contains("  "));
    }

    /// Half-up rounding to tenths, checked against a quotient/remainder form.
    #[test]
    fn percent_rounds_half_up(num in 0u64..100_000, den in 1u64..100_000) {
        let num = num.min(den);
        let (q, r) = (1000 * num / den, 1000 * num % den);
        let want = q + u64::from(2 * r >= den);
        prop_assert_eq!(u64::from(Percent::ratio(num, den).tenths()), want);
    }

    #[test]
    fn mean_and_median_round_half_up(tenths in proptest::collection::vec(0u32..=1000, 1..40)) {
        let rows: Vec<ResultRow> = tenths.iter().enumerate().map(|(i, t)| row(i, *t)).collect();
        let agg = aggregate(&rows).unwrap();
        let n = tenths.len() as u64;
        let sum: u64 = tenths.iter().map(|t| u64::from(*t)).sum();
        let mean = sum / n + u64::from(2 * (sum % n) >= n);
        prop_assert_eq!(u64::from(agg.mean_percent.tenths()), mean);
        let mut sorted = tenths.clone();
        sorted.sort_unstable();
        let m = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[m]
        } else {
            let s = sorted[m - 1] + sorted[m];
            s / 2 + s % 2
        };
        prop_assert_eq!(agg.median_percent.tenths(), median);
    }

    /// Attempt times grow by the nominal delay within the jitter band, never
    /// exceed the give-up time, and replay exactly from the seed.
    #[test]
    fn retry_schedule_shape(seed in any::<u64>(), start in 0u64..1_000_000) {
        let p = RetryPolicy::default();
        let give_up = start + 400_000;
        let times = RetrySchedule::new(p, seed, start, give_up).all_attempts();
        prop_assert_eq!(&times, &RetrySchedule::new(p, seed, start, give_up).all_attempts());
        prop_assert_eq!(times[0], start);
        for (k, w) in times.windows(2).enumerate() {
            let nominal = p.nominal_delay(k as u32);
            let gap = w[1] - w[0];
            prop_assert!(gap * 10 >= nominal * 9 && gap * 10 <= nominal * 11, "gap {gap} nominal {nominal}");
            prop_assert!(gap <= p.cap_ms);
            prop_assert!(w[1] <= give_up);
        }
    }
}

fn row(i: usize, tenths: u32) -> ResultRow {
    ResultRow {
        student_id: format!("s{i:03}"),
        raw: 0,
        max_on_path: 1,
        percent: Percent::from_tenths(tenths),
        partial: false,
        self_assessment: false,
        path: vec![],
        records: vec![],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Replaying the journal (with snapshots along the way) rebuilds the
    /// exact in-memory state.
    #[test]
    fn journal_replay_rebuilds_state(ops in proptest::collection::vec((0usize..4, 0usize..3), 1..30), every in 1u64..6) {
        let dir = tempfile::tempdir().unwrap();
        let home = EndpointAddress::new("server", 7400);
        let mut cfg = ServerConfig::new(home);
        cfg.snapshot_every = every;
        let tests = BTreeMap::from([("adaptive".to_string(), builtin("adaptive").unwrap())]);
        let ids = || Box::new(mage_core::agent::SeededIds::new(11));
        let mut node = ServerNode::open(cfg.clone(), tests.clone(), dir.path(), ids()).unwrap();
        let mut sessions: Vec<String> = Vec::new();
        let mut out: Vec<(String, String, mage_core::AgentSnapshot)> = Vec::new();
        for (op, k) in ops {
            match op {
                0 => {
                    let roster = (0..=k).map(|j| RosterEntry::new(format!("st{j}"), EndpointAddress::new(format!("h{j}"), 7401))).collect();
                    let s = node.create_session(NewSession { test_id: "adaptive".into(), mode: SessionMode::Push, roster, deadline: 1_000 }).unwrap();
                    sessions.push(s.session_id);
                }
                1 => if let Some(sid) = sessions.get(k) {
                    if let Ok(ds) = node.prepare_dispatch(sid) {
                        for d in ds { out.push((d.session_id, d.student_id, d.snapshot)); }
                    }
                },
                2 => if let Some((sid, st, snap)) = out.get(k) {
                    node.record_dispatch(sid, st, Ok(snap.seq + 1)).unwrap();
                },
                _ => if let Some((_, _, snap)) = out.get(k) {
                    let a = step_agent(snap, AgentEvent::Arrived).unwrap();
                    let r = step_agent(&a, AgentEvent::DeadlineReached).unwrap();
                    let _ = node.ingest_return(&r);
                },
            }
        }
        let live = canonical::to_bytes(node.state());
        drop(node);
        let reopened = ServerNode::open(cfg, tests, dir.path(), ids()).unwrap();
        prop_assert_eq!(canonical::to_bytes(reopened.state()), live);
    }

    /// Scores do not depend on where grading happens.
    #[test]
    fn agent_and_baseline_scores_agree(seed in any::<u64>(), n in 1usize..6) {
        let graph = random_graph(&mut common::rng(seed), 6);
        let mut a = CampaignConfig::new(n, SimMode::Agent);
        a.policy = AnswerPolicy::Random { seed };
        let mut b = a.clone();
        b.mode = SimMode::Baseline;
        let ra = run_campaign(&a, &graph).unwrap();
        let rb = run_campaign(&b, &graph).unwrap();
        let key = |r: &ResultRow| (r.student_id.clone(), r.raw, r.max_on_path, r.percent, r.partial, r.path.clone());
        prop_assert_eq!(ra.results.rows.iter().map(key).collect::<Vec<_>>(), rb.results.rows.iter().map(key).collect::<Vec<_>>());
        prop_assert_eq!(ra.metrics.server_grading_ops, 0);
        prop_assert_eq!(rb.metrics.server_grading_ops, rb.metrics.answers_recorded);
        prop_assert_eq!(ra.metrics.frames_sent_by_server, 2 * n as u64);
    }

    /// Metrics are a pure function of the trace, and the trace of the seed.
    #[test]
    fn campaigns_replay_from_seed(seed in any::<u64>(), drop in 0.0f64..0.4) {
        let graph = builtin("adaptive").unwrap();
        let mut c = CampaignConfig::new(4, SimMode::Agent);
        c.network.seed = seed;
        c.network.drop_probability = drop;
        c.policy = AnswerPolicy::Random { seed };
        let x = run_campaign(&c, &graph).unwrap();
        let y = run_campaign(&c, &graph).unwrap();
        prop_assert_eq!(x.trace_bytes(), y.trace_bytes());
        prop_assert_eq!(x.metrics.to_canonical(), y.metrics.to_canonical());
        let students = c.student_ids();
        let again = mage_core::sim::CampaignMetrics::from_trace(SimMode::Agent, "adaptive", &students, &x.trace);
        prop_assert_eq!(again, x.metrics);
    }
}
