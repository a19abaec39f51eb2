//! Scheduler, crash and exploration behaviour observed through traces.

use std::collections::BTreeSet;
use std::io::Cursor;

use anonfd::consensus::{Alg1, Alg2};
use anonfd::detectors::{AnyHistory, DetectorValue};
use anonfd::harness::{self, Scenario};
use anonfd::model::{FailurePattern, History, Permutation, ProcessId, SystemConfig};
use anonfd::simulator::{
    self, derive_seeds, Action, Automaton, Bin, Event, EventKind, ExploreConfig, Monitor,
    OracleSource, Protocol, RunConfig, SchedulerPolicy, Trace, TraceHeader, World,
};
use anonfd::transforms::NToTheta;
use anonfd::verify::{self, Suite};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn p(i: u32) -> ProcessId {
    ProcessId::new(i)
}

fn header(cfg: SystemConfig, inputs: &[Bin]) -> TraceHeader {
    TraceHeader {
        algorithm: "alg1".into(),
        n: cfg.n,
        f: cfg.f,
        inputs: inputs.to_vec(),
        crash: Default::default(),
        oracle: "crash-count".into(),
        policy: "scripted".into(),
        seed: 0,
        horizon: 0,
        identified: false,
    }
}

fn sends_by(trace: &Trace, q: ProcessId) -> BTreeSet<u64> {
    trace
        .events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::Send { p, msg, .. } if p == q => Some(msg),
            _ => None,
        })
        .collect()
}

#[test]
fn single_process_run_has_one_decision() {
    let sc =
        Scenario::from_json(r#"{"algorithm": "alg1", "n": 1, "f": 0, "inputs": [1]}"#).unwrap();
    let out = harness::run_scenario(&sc, 7).unwrap();
    let decisions: Vec<_> = out.trace.decisions().map(|d| (d.1, d.2)).collect();
    assert_eq!(decisions, vec![(p(1), 1)]);
    assert!(out.report.passed);
}

#[test]
fn process_crashed_before_sending_is_never_heard() {
    let cfg = SystemConfig::new(3, 1).unwrap();
    let pattern = FailurePattern::from_pairs(3, &[(2, 0)]).unwrap();
    for seed in 0..20 {
        let rc = RunConfig::new(5_000, SchedulerPolicy::Random, seed);
        let t = simulator::run(
            &Alg1::new(cfg),
            cfg,
            &[0, 1, 1],
            &pattern,
            OracleSource::CrashCount,
            &rc,
            header(cfg, &[0, 1, 1]),
        )
        .unwrap();
        assert!(sends_by(&t, p(2)).is_empty());
        let delivered = t
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Deliver { .. }))
            .count();
        let sends = t
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Send { .. }))
            .count();
        // Every remaining broadcast reaches both live processes, and nothing else is delivered.
        assert_eq!(delivered, 2 * sends);
        assert_eq!(t.end.decisions.len(), 2);
    }
}

#[test]
fn broadcast_sent_before_crash_is_still_delivered() {
    let cfg = SystemConfig::new(2, 1).unwrap();
    let inputs = [0, 1];
    let mut w = World::new(
        &Alg1::new(cfg),
        cfg,
        &inputs,
        0,
        OracleSource::CrashCount,
        false,
    )
    .unwrap();
    let mut events = Vec::new();
    w.apply(Action::Step(p(1)), &mut events).unwrap();
    w.apply(Action::Step(p(2)), &mut events).unwrap();
    w.apply(Action::Crash(p(2)), &mut events).unwrap();
    // p2's round-1 proposal is still in flight to p1.
    let late = w
        .pending()
        .iter()
        .position(|e| e.origin == p(2) && e.to == p(1))
        .expect("in flight");
    w.apply(Action::Deliver(late), &mut events).unwrap();
    let mut guard = 0;
    while w.node(p(1)).decision().is_none() {
        let next = *w.enabled().first().expect("p1 can progress");
        w.apply(next, &mut events).unwrap();
        guard += 1;
        assert!(guard < 50);
    }
    assert_eq!(
        w.node(p(1)).decision(),
        Some(1),
        "the crashed process's 1 was counted"
    );
    let crash_at = events
        .iter()
        .position(|e| matches!(e.kind, EventKind::Crash { .. }))
        .unwrap();
    let delivered_at = events
        .iter()
        .position(|e| matches!(e.kind, EventKind::Deliver { p: q, payload: simulator::Payload::Propose { v: 1, .. }, .. } if q == p(1)))
        .unwrap();
    assert!(delivered_at > crash_at);
}

#[test]
fn wait_unblocks_only_when_the_count_catches_up() {
    let cfg = SystemConfig::new(3, 1).unwrap();
    let pattern = FailurePattern::from_pairs(3, &[(3, 0)]).unwrap();
    let settle = 400;
    let table =
        History::from_fn(3, settle + 1, |_, t| u32::from(t >= settle)).with_convergence(settle);
    let oracle = AnyHistory::N(table);
    assert!(oracle.check(&pattern).unwrap().is_valid());
    for seed in 0..10 {
        let rc = RunConfig::new(5_000, SchedulerPolicy::Random, seed);
        let t = simulator::run(
            &Alg1::new(cfg),
            cfg,
            &[1, 0, 1],
            &pattern,
            OracleSource::Table(oracle.clone()),
            &rc,
            header(cfg, &[1, 0, 1]),
        )
        .unwrap();
        let second: Vec<&Event> = t
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Round { round: 2, .. }))
            .collect();
        assert_eq!(second.len(), 2);
        assert!(
            second.iter().all(|e| e.step >= settle),
            "round 2 entered before the oracle moved"
        );
        assert_eq!(t.end.decisions.len(), 2);
        assert!(!t.truncated());
    }
}

/// Every process that finishes decides 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct AllDecideOne {
    decided: usize,
}

impl Monitor for AllDecideOne {
    fn observe(&mut self, _index: usize, ev: &Event) -> Option<String> {
        match ev.kind {
            EventKind::Decide { p, value, .. } if value != 1 => {
                Some(format!("{p} decided {value}"))
            }
            EventKind::Decide { .. } => {
                self.decided += 1;
                None
            }
            _ => None,
        }
    }

    fn finish(&self, truncated: bool, crashed: &BTreeSet<ProcessId>) -> Option<String> {
        (!truncated && crashed.is_empty() && self.decided != 2)
            .then(|| format!("{} decisions", self.decided))
    }
}

#[test]
fn exploration_without_crashes_always_decides_the_max() {
    let cfg = SystemConfig::new(2, 0).unwrap();
    let config = ExploreConfig::new(cfg, vec![0, 1]);
    let report = simulator::explore(
        &Alg1::new(cfg),
        &config,
        AllDecideOne { decided: 0 },
        header(cfg, &[0, 1]),
    )
    .unwrap();
    assert!(
        report.passed(),
        "{:?}",
        report.violations.first().map(|v| &v.message)
    );
    assert!(report.complete);
    assert!(report.traces > 1);
}

#[test]
fn exploration_of_one_process_is_a_single_schedule() {
    let cfg = SystemConfig::new(1, 0).unwrap();
    let config = ExploreConfig::new(cfg, vec![1]);
    let report = simulator::explore(
        &Alg1::new(cfg),
        &config,
        verify::consensus_suite(1, &[1]),
        header(cfg, &[1]),
    )
    .unwrap();
    assert!(report.passed() && report.complete);
    assert_eq!(report.traces, 1);
}

#[test]
fn exploration_places_every_crash_of_one_process() {
    let cfg = SystemConfig::new(2, 1).unwrap();
    for inputs in [[0, 0], [0, 1], [1, 0], [1, 1]] {
        let config = ExploreConfig::new(cfg, inputs.to_vec());
        let suite = verify::consensus_suite(2, &inputs);
        let report =
            simulator::explore(&Alg1::new(cfg), &config, suite, header(cfg, &inputs)).unwrap();
        assert!(report.passed() && report.complete);
    }
}

#[test]
fn explored_violation_replays_to_the_same_failure() {
    let cfg = SystemConfig::new(2, 0).unwrap();
    let mutant = Alg1::mutated(cfg, anonfd::consensus::Alg1Mutant::MinInsteadOfMax);
    let config = ExploreConfig::new(cfg, vec![0, 1]);
    let suite = Suite::new(verify::invariant_checks("alg1", 2, 0));
    let report = simulator::explore(&mutant, &config, suite.clone(), header(cfg, &[0, 1])).unwrap();
    let v = report.violations.first().expect("mutant caught");
    let replayed =
        simulator::replay(&mutant, &config, &v.schedule, header(cfg, &[0, 1]), false).unwrap();
    assert!(suite
        .run(&replayed)
        .iter()
        .any(|r| r.property == "stubbornness" && r.failed()));
}

fn relabel(kind: &EventKind, pi: &Permutation) -> EventKind {
    let mut k = kind.clone();
    match &mut k {
        EventKind::Send { p, .. }
        | EventKind::Deliver { p, .. }
        | EventKind::Crash { p }
        | EventKind::Oracle { p, .. }
        | EventKind::Round { p, .. }
        | EventKind::Decide { p, .. }
        | EventKind::Output { p, .. }
        | EventKind::Halt { p } => *p = pi.apply(*p),
    }
    k
}

/// Runs a random schedule in one world and its image under `pi` in a world
/// whose processes were relabelled by `pi`, then compares the traces.
fn mirror<P: Protocol>(
    protocol: &P,
    cfg: SystemConfig,
    inputs: &[Bin],
    pi: &Permutation,
    seed: u64,
) {
    let seeds = derive_seeds(seed, cfg.n);
    let mut inputs_b = vec![0; cfg.n];
    let mut seeds_b = vec![0; cfg.n];
    for q in cfg.processes() {
        inputs_b[pi.apply(q).idx()] = inputs[q.idx()];
        seeds_b[pi.apply(q).idx()] = seeds[q.idx()];
    }
    let mut a = World::with_seeds(
        protocol,
        cfg,
        inputs,
        &seeds,
        OracleSource::CrashCount,
        false,
    )
    .unwrap();
    let mut b = World::with_seeds(
        protocol,
        cfg,
        &inputs_b,
        &seeds_b,
        OracleSource::CrashCount,
        false,
    )
    .unwrap();
    let (mut ea, mut eb) = (Vec::new(), Vec::new());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..3_000 {
        let enabled = a.enabled();
        let crash = (a.crashed_count() < cfg.f && rng.gen_ratio(1, 40))
            .then(|| {
                cfg.processes()
                    .filter(|&q| !a.is_crashed(q))
                    .collect::<Vec<_>>()
                    .choose(&mut rng)
                    .copied()
            })
            .flatten();
        let action = match (crash, enabled.choose(&mut rng)) {
            (Some(q), _) => Action::Crash(q),
            (None, Some(&x)) => x,
            (None, None) => break,
        };
        let image = match action {
            Action::Step(q) => Action::Step(pi.apply(q)),
            Action::Crash(q) => Action::Crash(pi.apply(q)),
            Action::Deliver(i) => {
                let e = &a.pending()[i];
                let j = b
                    .pending()
                    .iter()
                    .position(|x| x.id == e.id && x.to == pi.apply(e.to))
                    .expect("mirrored copy");
                Action::Deliver(j)
            }
        };
        if let Action::Step(q) = image {
            assert!(
                b.enabled().contains(&Action::Step(q)),
                "relabelled step not enabled"
            );
        }
        a.apply(action, &mut ea).unwrap();
        b.apply(image, &mut eb).unwrap();
    }
    assert_eq!(ea.len(), eb.len());
    for (x, y) in ea.iter().zip(&eb) {
        assert_eq!(relabel(&x.kind, pi), y.kind);
    }
    // Received payload multisets agree process by process.
    for q in cfg.processes() {
        let got = |events: &[Event], r: ProcessId| {
            let mut v: Vec<String> = events
                .iter()
                .filter_map(|e| match &e.kind {
                    EventKind::Deliver { p, payload, .. } if *p == r => {
                        Some(payload.to_json().to_string())
                    }
                    _ => None,
                })
                .collect();
            v.sort();
            v
        };
        assert_eq!(got(&ea, q), got(&eb, pi.apply(q)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn anonymous_runs_do_not_depend_on_labels(
        (n, pi, inputs, seed, which) in (2usize..=4)
            .prop_flat_map(|n| (
                Just(n),
                Just((1..=n as u32).collect::<Vec<_>>()).prop_shuffle(),
                proptest::collection::vec(0u8..=1, n),
                any::<u64>(),
                0usize..3,
            ))
            .prop_map(|(n, v, inputs, seed, which)| (n, Permutation::from_indices(&v).unwrap(), inputs, seed, which))
    ) {
        let cfg = SystemConfig::new(n, (n - 1) / 2).unwrap();
        match which {
            0 => mirror(&Alg1::new(cfg), cfg, &inputs, &pi, seed),
            1 => mirror(&Alg2::new(cfg).unwrap(), cfg, &inputs, &pi, seed),
            _ => {
                let proto = NToTheta::new(cfg, simulator::Delivery::Anonymous).unwrap().with_max_rounds(Some(4));
                mirror(&proto, cfg, &[0; 4][..n], &pi, seed)
            }
        }
    }

    #[test]
    fn runs_are_pure_and_survive_serialization(seed in any::<u64>(), which in 0usize..6) {
        let json = [
            r#"{"algorithm": "alg1", "n": 4, "f": 3, "crash": "random", "policy": "crash-adjacent"}"#,
            r#"{"algorithm": "alg2", "n": 5, "f": 2, "crash": "random", "oracle": {"kind": "DiamondN", "profile": "adversarial-random"}}"#,
            r#"{"algorithm": "alg3", "n": 3, "f": 1, "crash": "random", "policy": "fifo"}"#,
            r#"{"algorithm": "alg4", "n": 3, "f": 1, "crash": "random", "max_rounds": 5}"#,
            r#"{"algorithm": "n-to-theta", "n": 4, "f": 1, "crash": "random", "max_rounds": 5}"#,
            r#"{"algorithm": "theta-to-omega", "n": 3, "f": 1, "crash": "random", "max_rounds": 5}"#,
        ][which];
        let sc = Scenario::from_json(json).unwrap();
        let a = harness::run_scenario(&sc, seed).unwrap();
        let b = harness::run_scenario(&sc, seed).unwrap();
        let text = a.trace.to_jsonl();
        prop_assert_eq!(&text, &b.trace.to_jsonl());
        let back = Trace::read_jsonl(Cursor::new(text.as_bytes())).unwrap();
        prop_assert_eq!(&back, &a.trace);
        prop_assert_eq!(harness::check_trace(&back).unwrap(), a.report.checks.clone());
        for r in &a.report.checks {
            if ["crash-schedule", "no-ghost-steps", "reliability"].contains(&r.property.as_str()) {
                prop_assert!(!r.failed(), "{:?}", r);
            }
        }
    }
}

#[test]
fn oracle_events_show_the_reading_used() {
    let sc =
        Scenario::from_json(r#"{"algorithm": "alg1", "n": 3, "f": 1, "crash": {"2": 5}}"#).unwrap();
    let out = harness::run_scenario(&sc, 3).unwrap();
    for e in &out.trace.events {
        if let EventKind::Oracle {
            value: DetectorValue::Count(c),
            ..
        } = e.kind
        {
            assert!(c <= u32::from(e.step >= 5), "count {c} at {}", e.step);
        }
    }
}
