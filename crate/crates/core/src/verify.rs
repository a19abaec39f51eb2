//! Trace and history checkers: the consensus properties, protocol
//! invariants, emulated-detector properties, trace integrity, symmetry
//! classification and permutation closure.
//!
//! Every trace property is an incremental [`Check`], so the same code judges
//! saved traces and the states of an exhaustive exploration.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::detectors::{AnyHistory, DetectorSpec, DetectorValue, Verdict as HistoryVerdict};
use crate::model::{
    is_anonymous, AnonymityVerdict, FailurePattern, History, HistoryValue, ModelError,
    PermutationSource, ProcessId, Time,
};
use crate::simulator::{Bin, EndReason, Event, EventKind, Monitor, Payload, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// Nothing to check (e.g. no decision was taken).
    Vacuous,
    /// A liveness property on a run cut at its horizon.
    Truncated,
}

/// Evidence attached to a failing report.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Witness {
    /// Index of an event in the trace.
    Event(usize),
    /// A detector history cell.
    Cell {
        p: ProcessId,
        t: Time,
    },
    Process {
        p: ProcessId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    pub property: String,
    pub verdict: Verdict,
    pub witness: Vec<Witness>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckReport {
    pub fn pass(property: &str) -> Self {
        CheckReport {
            property: property.into(),
            verdict: Verdict::Pass,
            witness: Vec::new(),
            detail: None,
        }
    }

    pub fn fail(property: &str, witness: Vec<Witness>, detail: String) -> Self {
        CheckReport {
            property: property.into(),
            verdict: Verdict::Fail,
            witness,
            detail: Some(detail),
        }
    }

    fn with(property: &str, verdict: Verdict) -> Self {
        CheckReport {
            property: property.into(),
            verdict,
            witness: Vec::new(),
            detail: None,
        }
    }

    pub fn failed(&self) -> bool {
        self.verdict == Verdict::Fail
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Failure {
    witness: Vec<Witness>,
    detail: String,
}

fn failure(witness: Vec<Witness>, detail: String) -> Option<Failure> {
    Some(Failure { witness, detail })
}

/// Which runs a property constrains.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Rule {
    Termination {
        n: usize,
        decided: BTreeSet<ProcessId>,
    },
    Integrity {
        first: BTreeMap<ProcessId, usize>,
    },
    Agreement {
        decisions: BTreeMap<ProcessId, (Bin, usize)>,
    },
    Validity {
        inputs: BTreeSet<Bin>,
    },
    /// Once an estimate is 1 it stays 1.
    Stubbornness {
        one_since: BTreeMap<ProcessId, usize>,
    },
    /// At most one non-`?` lock value per round.
    LockExclusivity {
        locked: BTreeMap<u32, (Bin, usize)>,
    },
    /// Decisions share one value and span at most two consecutive rounds.
    DecisionSpread {
        decisions: Vec<(u32, Bin, usize)>,
    },
    UniqueDecide {
        first: Option<(Bin, usize)>,
    },
    /// Rounds of non-crashed processes differ by at most `bound`.
    RoundSkew {
        bound: u32,
        rounds: Vec<u32>,
        crashed: Vec<bool>,
    },
    /// Emitted suspicion sets only name crashed processes.
    StrongAccuracy {
        crashed: BTreeSet<ProcessId>,
    },
    /// Final suspicion sets of correct processes contain every crashed one.
    FinalCompleteness {
        n: usize,
        last: BTreeMap<ProcessId, (BTreeSet<ProcessId>, usize)>,
    },
    /// Final suspicion sets of correct processes contain no correct one.
    FinalAccuracy {
        n: usize,
        last: BTreeMap<ProcessId, (BTreeSet<ProcessId>, usize)>,
    },
    /// Final self-trust outputs: exactly one correct process trusts itself.
    FinalSelfTrust {
        n: usize,
        last: BTreeMap<ProcessId, bool>,
    },
}

/// An incremental checker for one property.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Check {
    property: &'static str,
    rule: Rule,
    failed: Option<Failure>,
}

impl Check {
    fn new(property: &'static str, rule: Rule) -> Self {
        Check {
            property,
            rule,
            failed: None,
        }
    }

    pub fn termination(n: usize) -> Self {
        Check::new(
            "termination",
            Rule::Termination {
                n,
                decided: BTreeSet::new(),
            },
        )
    }

    pub fn integrity() -> Self {
        Check::new(
            "integrity",
            Rule::Integrity {
                first: BTreeMap::new(),
            },
        )
    }

    pub fn agreement() -> Self {
        Check::new(
            "agreement",
            Rule::Agreement {
                decisions: BTreeMap::new(),
            },
        )
    }

    pub fn validity(inputs: &[Bin]) -> Self {
        Check::new(
            "validity",
            Rule::Validity {
                inputs: inputs.iter().copied().collect(),
            },
        )
    }

    pub fn stubbornness() -> Self {
        Check::new(
            "stubbornness",
            Rule::Stubbornness {
                one_since: BTreeMap::new(),
            },
        )
    }

    pub fn lock_exclusivity() -> Self {
        Check::new(
            "lock-exclusivity",
            Rule::LockExclusivity {
                locked: BTreeMap::new(),
            },
        )
    }

    pub fn decision_spread() -> Self {
        Check::new(
            "decision-spread",
            Rule::DecisionSpread {
                decisions: Vec::new(),
            },
        )
    }

    pub fn unique_decide() -> Self {
        Check::new("unique-decide", Rule::UniqueDecide { first: None })
    }

    pub fn round_skew(n: usize, f: usize) -> Self {
        Check::new(
            "round-skew",
            Rule::RoundSkew {
                bound: f as u32 + 1,
                rounds: vec![0; n],
                crashed: vec![false; n],
            },
        )
    }

    pub fn strong_accuracy() -> Self {
        Check::new(
            "strong-accuracy",
            Rule::StrongAccuracy {
                crashed: BTreeSet::new(),
            },
        )
    }

    pub fn final_completeness(n: usize) -> Self {
        Check::new(
            "strong-completeness",
            Rule::FinalCompleteness {
                n,
                last: BTreeMap::new(),
            },
        )
    }

    pub fn final_accuracy(n: usize) -> Self {
        Check::new(
            "eventual-strong-accuracy",
            Rule::FinalAccuracy {
                n,
                last: BTreeMap::new(),
            },
        )
    }

    pub fn final_self_trust(n: usize) -> Self {
        Check::new(
            "eventual-self-trust",
            Rule::FinalSelfTrust {
                n,
                last: BTreeMap::new(),
            },
        )
    }

    pub fn property(&self) -> &'static str {
        self.property
    }

    fn step(&mut self, i: usize, ev: &Event) -> Option<Failure> {
        match (&mut self.rule, &ev.kind) {
            (Rule::Termination { decided, .. }, EventKind::Decide { p, .. }) => {
                decided.insert(*p);
                None
            }
            (Rule::Integrity { first }, EventKind::Decide { p, .. }) => match first.get(p) {
                Some(&j) => failure(
                    vec![Witness::Event(j), Witness::Event(i)],
                    format!("{p} decided twice"),
                ),
                None => {
                    first.insert(*p, i);
                    None
                }
            },
            (Rule::Agreement { decisions }, EventKind::Decide { p, value, .. }) => {
                decisions.entry(*p).or_insert((*value, i));
                None
            }
            (Rule::Validity { inputs }, EventKind::Decide { p, value, .. })
                if !inputs.contains(value) =>
            {
                failure(
                    vec![Witness::Event(i)],
                    format!("{p} decided {value}, which nobody proposed"),
                )
            }
            (
                Rule::Stubbornness { one_since },
                EventKind::Round { p, v: Some(v), .. } | EventKind::Decide { p, value: v, .. },
            ) => match (*v, one_since.get(p)) {
                (1, None) => {
                    one_since.insert(*p, i);
                    None
                }
                (0, Some(&j)) => failure(
                    vec![Witness::Event(j), Witness::Event(i)],
                    format!("{p} held estimate 1 and later 0"),
                ),
                _ => None,
            },
            (
                Rule::LockExclusivity { locked },
                EventKind::Send {
                    payload:
                        Payload::Lock {
                            r, lock: Some(x), ..
                        },
                    ..
                },
            ) => match locked.get(r) {
                Some(&(y, j)) if y != *x => failure(
                    vec![Witness::Event(j), Witness::Event(i)],
                    format!("round {r} carries locks for both {y} and {x}"),
                ),
                Some(_) => None,
                None => {
                    locked.insert(*r, (*x, i));
                    None
                }
            },
            (Rule::DecisionSpread { decisions }, EventKind::Decide { value, round, .. }) => {
                decisions.push((*round, *value, i));
                let first = *decisions.iter().min().expect("nonempty");
                decisions
                    .iter()
                    .find(|&&(r, v, _)| v != first.1 || r > first.0 + 1)
                    .map(|&(r, v, j)| Failure {
                        witness: vec![Witness::Event(first.2), Witness::Event(j)],
                        detail: format!(
                            "first decision {} in round {}, but {v} decided in round {r}",
                            first.1, first.0
                        ),
                    })
            }
            (
                Rule::UniqueDecide { first },
                EventKind::Send {
                    payload: Payload::Decide { v },
                    ..
                },
            ) => match *first {
                Some((w, j)) if w != *v => failure(
                    vec![Witness::Event(j), Witness::Event(i)],
                    format!("Decide sent for both {w} and {v}"),
                ),
                Some(_) => None,
                None => {
                    *first = Some((*v, i));
                    None
                }
            },
            (
                Rule::RoundSkew {
                    bound,
                    rounds,
                    crashed,
                },
                kind,
            ) => {
                match *kind {
                    EventKind::Round { p, round, .. } => rounds[p.idx()] = round,
                    EventKind::Crash { p } => crashed[p.idx()] = true,
                    _ => return None,
                }
                let live = rounds
                    .iter()
                    .zip(crashed.iter())
                    .filter(|(_, &c)| !c)
                    .map(|(&r, _)| r);
                let (lo, hi) = live.fold((u32::MAX, 0), |(lo, hi), r| (lo.min(r), hi.max(r)));
                (hi > lo && hi - lo > *bound).then(|| Failure {
                    witness: vec![Witness::Event(i)],
                    detail: format!("live rounds span {lo}..={hi}"),
                })
            }
            (Rule::StrongAccuracy { crashed }, kind) => match kind {
                EventKind::Crash { p } => {
                    crashed.insert(*p);
                    None
                }
                EventKind::Output {
                    p,
                    value: DetectorValue::Set(s),
                } => s.iter().find(|q| !crashed.contains(q)).map(|q| Failure {
                    witness: vec![Witness::Event(i)],
                    detail: format!("{p} suspects {q} before it crashed"),
                }),
                _ => None,
            },
            (
                Rule::FinalCompleteness { last, .. } | Rule::FinalAccuracy { last, .. },
                EventKind::Output { p, value },
            ) => {
                if let DetectorValue::Set(s) = value {
                    last.insert(*p, (s.clone(), i));
                }
                None
            }
            (
                Rule::FinalSelfTrust { last, .. },
                EventKind::Output {
                    p,
                    value: DetectorValue::Bool(b),
                },
            ) => {
                last.insert(*p, *b);
                None
            }
            _ => None,
        }
    }

    fn end(&self, truncated: bool, crashed: &BTreeSet<ProcessId>) -> (Verdict, Option<Failure>) {
        if let Some(f) = &self.failed {
            return (Verdict::Fail, Some(f.clone()));
        }
        let correct = |n: usize| ProcessId::all(n).filter(move |p| !crashed.contains(p));
        match &self.rule {
            Rule::Termination { n, decided } => {
                if truncated {
                    return (Verdict::Truncated, None);
                }
                let missing: Vec<_> = correct(*n).filter(|p| !decided.contains(p)).collect();
                if missing.is_empty() {
                    (Verdict::Pass, None)
                } else {
                    let detail = format!("correct processes {missing:?} never decided");
                    (
                        Verdict::Fail,
                        failure(
                            missing
                                .into_iter()
                                .map(|p| Witness::Process { p })
                                .collect(),
                            detail,
                        ),
                    )
                }
            }
            Rule::Agreement { decisions } => {
                let mut correct_decisions = decisions.iter().filter(|(p, _)| !crashed.contains(p));
                let Some((p0, &(v0, i0))) = correct_decisions.next() else {
                    return (Verdict::Vacuous, None);
                };
                match correct_decisions.find(|(_, &(v, _))| v != v0) {
                    Some((p1, &(v1, i1))) => (
                        Verdict::Fail,
                        failure(
                            vec![Witness::Event(i0), Witness::Event(i1)],
                            format!("correct {p0} decided {v0} and correct {p1} decided {v1}"),
                        ),
                    ),
                    None => (Verdict::Pass, None),
                }
            }
            Rule::DecisionSpread { decisions } if decisions.is_empty() => (Verdict::Vacuous, None),
            Rule::FinalCompleteness { n, last } => {
                for p in correct(*n) {
                    let (s, i) = last.get(&p).cloned().unwrap_or_default();
                    if let Some(q) = crashed.iter().find(|q| !s.contains(q)) {
                        let w = if last.contains_key(&p) {
                            Witness::Event(i)
                        } else {
                            Witness::Process { p }
                        };
                        return (
                            Verdict::Fail,
                            failure(
                                vec![w],
                                format!("{p} does not end up suspecting crashed {q}"),
                            ),
                        );
                    }
                }
                (Verdict::Pass, None)
            }
            Rule::FinalAccuracy { n, last } => {
                for p in correct(*n) {
                    if let Some((s, i)) = last.get(&p) {
                        if let Some(q) = s.iter().find(|q| !crashed.contains(q)) {
                            return (
                                Verdict::Fail,
                                failure(
                                    vec![Witness::Event(*i)],
                                    format!("{p} ends up suspecting correct {q}"),
                                ),
                            );
                        }
                    }
                }
                (Verdict::Pass, None)
            }
            Rule::FinalSelfTrust { n, last } => {
                let trusting: Vec<_> = correct(*n)
                    .filter(|p| last.get(p).copied().unwrap_or(false))
                    .collect();
                if trusting.len() == 1 {
                    (Verdict::Pass, None)
                } else {
                    let detail = format!("correct self-trusters at the end: {trusting:?}");
                    (
                        Verdict::Fail,
                        failure(
                            trusting
                                .into_iter()
                                .map(|p| Witness::Process { p })
                                .collect(),
                            detail,
                        ),
                    )
                }
            }
            _ => (Verdict::Pass, None),
        }
    }

    fn report(&self, truncated: bool, crashed: &BTreeSet<ProcessId>) -> CheckReport {
        let (verdict, f) = self.end(truncated, crashed);
        match f {
            Some(f) => CheckReport {
                property: self.property.into(),
                verdict,
                witness: f.witness,
                detail: Some(f.detail),
            },
            None => CheckReport::with(self.property, verdict),
        }
    }
}

/// A set of checks evaluated together; the exploration monitor.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Suite {
    checks: Vec<Check>,
}

impl Suite {
    pub fn new(checks: Vec<Check>) -> Self {
        Suite { checks }
    }

    pub fn checks(&self) -> &[Check] {
        &self.checks
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    /// Folds the whole trace through every check.
    pub fn run(mut self, trace: &Trace) -> Vec<CheckReport> {
        for (i, ev) in trace.events.iter().enumerate() {
            for c in self.checks.iter_mut().filter(|c| c.failed.is_none()) {
                c.failed = c.step(i, ev);
            }
        }
        self.checks
            .iter()
            .map(|c| c.report(trace.end.truncated, &trace.end.crashed))
            .collect()
    }
}

impl Monitor for Suite {
    fn observe(&mut self, index: usize, ev: &Event) -> Option<String> {
        for c in self.checks.iter_mut().filter(|c| c.failed.is_none()) {
            if let Some(f) = c.step(index, ev) {
                let msg = format!("{}: {}", c.property, f.detail);
                c.failed = Some(f);
                return Some(msg);
            }
        }
        None
    }

    fn finish(&self, truncated: bool, crashed: &BTreeSet<ProcessId>) -> Option<String> {
        self.checks
            .iter()
            .find_map(|c| match c.end(truncated, crashed) {
                (Verdict::Fail, Some(f)) => Some(format!("{}: {}", c.property, f.detail)),
                _ => None,
            })
    }
}

/// Termination, integrity, agreement and validity of a consensus trace.
pub fn check_consensus(trace: &Trace, inputs: &[Bin]) -> Vec<CheckReport> {
    consensus_suite(trace.header.n, inputs).run(trace)
}

pub fn consensus_suite(n: usize, inputs: &[Bin]) -> Suite {
    Suite::new(vec![
        Check::termination(n),
        Check::integrity(),
        Check::agreement(),
        Check::validity(inputs),
    ])
}

/// Protocol-specific invariants, by protocol name.
pub fn invariant_checks(algorithm: &str, n: usize, f: usize) -> Vec<Check> {
    match algorithm {
        "alg1" => vec![Check::stubbornness()],
        "alg2" => vec![Check::lock_exclusivity(), Check::decision_spread()],
        "alg3" => vec![Check::unique_decide()],
        "alg4" => vec![Check::final_completeness(n), Check::final_accuracy(n)],
        "alg5" => vec![
            Check::round_skew(n, f),
            Check::strong_accuracy(),
            Check::final_completeness(n),
        ],
        "n-to-theta" => vec![Check::final_self_trust(n)],
        _ => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no invariant checks are defined for `{0}`")]
pub struct UnknownAlgorithm(pub String);

pub fn check_lemma_invariants(
    trace: &Trace,
    algorithm: &str,
) -> Result<Vec<CheckReport>, UnknownAlgorithm> {
    let checks = invariant_checks(algorithm, trace.header.n, trace.header.f);
    if checks.is_empty() {
        return Err(UnknownAlgorithm(algorithm.to_string()));
    }
    Ok(Suite::new(checks).run(trace))
}

/// Structural soundness of a recorded run against its failure pattern:
/// crashes happen exactly when scheduled, crashed processes stay silent, and
/// every broadcast reaches every process that is alive when the run ends.
pub fn check_trace_integrity(trace: &Trace, pattern: &FailurePattern) -> Vec<CheckReport> {
    let mut reports = Vec::new();

    let mut crash_at: BTreeMap<ProcessId, (Time, usize)> = BTreeMap::new();
    let mut bad = None;
    for (i, e) in trace.events.iter().enumerate() {
        if let EventKind::Crash { p } = e.kind {
            if pattern.crash_time(p) != Some(e.step) || crash_at.insert(p, (e.step, i)).is_some() {
                bad.get_or_insert(i);
            }
        }
    }
    for (&p, &t) in pattern.crash_times() {
        if t <= trace.end.step && !crash_at.contains_key(&p) && bad.is_none() {
            reports.push(CheckReport::fail(
                "crash-schedule",
                vec![Witness::Process { p }],
                format!("{p} never crashed"),
            ));
        }
    }
    if let Some(i) = bad {
        reports.push(CheckReport::fail(
            "crash-schedule",
            vec![Witness::Event(i)],
            "crash off schedule".into(),
        ));
    } else if !reports.iter().any(|r| r.property == "crash-schedule") {
        reports.push(CheckReport::pass("crash-schedule"));
    }

    let mut down = BTreeSet::new();
    let ghost = trace.events.iter().enumerate().find(|(_, e)| match e.kind {
        EventKind::Crash { p } => !down.insert(p),
        ref k => down.contains(&k.process()),
    });
    reports.push(match ghost {
        Some((i, e)) => CheckReport::fail(
            "no-ghost-steps",
            vec![Witness::Event(i)],
            format!("{} acts after crashing", e.kind.process()),
        ),
        None => CheckReport::pass("no-ghost-steps"),
    });

    let mut sends: BTreeMap<u64, usize> = BTreeMap::new();
    let mut got: BTreeMap<(u64, ProcessId), usize> = BTreeMap::new();
    let mut dup = None;
    for (i, e) in trace.events.iter().enumerate() {
        match e.kind {
            EventKind::Send { msg, .. } => {
                sends.insert(msg, i);
            }
            EventKind::Deliver { p, msg, .. } => {
                *got.entry((msg, p)).or_default() += 1;
                if got[&(msg, p)] > 1 || !sends.contains_key(&msg) {
                    dup.get_or_insert(i);
                }
            }
            _ => {}
        }
    }
    let live: Vec<ProcessId> = trace.correct().into_iter().collect();
    let missing = (trace.end.reason == EndReason::Quiescent)
        .then(|| {
            sends.iter().find_map(|(&m, &i)| {
                live.iter()
                    .find(|&&q| !got.contains_key(&(m, q)))
                    .map(|&q| (i, q))
            })
        })
        .flatten();
    reports.push(match (dup, missing) {
        (Some(i), _) => CheckReport::fail(
            "reliability",
            vec![Witness::Event(i)],
            "message delivered twice or never sent".into(),
        ),
        (None, Some((i, q))) => CheckReport::fail(
            "reliability",
            vec![Witness::Event(i)],
            format!("message never delivered to live {q}"),
        ),
        (None, None) => CheckReport::pass("reliability"),
    });
    reports
}

/// Whether correct processes see identical outputs: at every time, and from
/// the recorded convergence point on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub strict: Symmetry,
    pub suffix: Symmetry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symmetry {
    Symmetric,
    Unsymmetrical,
}

pub fn classify_symmetry<V: HistoryValue>(h: &History<V>, f: &FailurePattern) -> SymmetryReport {
    let correct: Vec<ProcessId> = ProcessId::all(f.n()).filter(|&p| f.is_correct(p)).collect();
    let end = h.horizon().max(f.last_crash().unwrap_or(0)) + 1;
    let agree_from = |start: Time| {
        let same =
            (start..=end).all(|t| correct.windows(2).all(|w| h.get(w[0], t) == h.get(w[1], t)));
        if same {
            Symmetry::Symmetric
        } else {
            Symmetry::Unsymmetrical
        }
    };
    SymmetryReport {
        strict: agree_from(0),
        suffix: agree_from(h.convergence().unwrap_or(end).min(end)),
    }
}

/// Permutation closure of a legal history, as a report.
pub fn check_permutation_closure<S: DetectorSpec>(
    spec: &S,
    f: &FailurePattern,
    h: &History<S::Value>,
    perms: &PermutationSource,
) -> Result<CheckReport, ModelError> {
    Ok(closure(is_anonymous(spec, f, h, perms)?))
}

/// Validation of a history against a detector, as a report.
pub fn check_history<S: DetectorSpec>(
    spec: &S,
    h: &History<S::Value>,
    f: &FailurePattern,
) -> Result<CheckReport, ModelError> {
    let property = format!("valid-{}", spec.name());
    Ok(match spec.check(h, f)? {
        HistoryVerdict::Valid => CheckReport::pass(&property),
        HistoryVerdict::Invalid(v) => CheckReport::fail(
            &property,
            v.process
                .map(|p| Witness::Cell { p, t: v.time })
                .into_iter()
                .collect(),
            v.to_string(),
        ),
    })
}

/// [`check_history`] for a history of any shipped kind.
pub fn check_history_any(h: &AnyHistory, f: &FailurePattern) -> Result<CheckReport, ModelError> {
    let property = format!("valid-{}", h.kind().name());
    Ok(match h.check(f)? {
        HistoryVerdict::Valid => CheckReport::pass(&property),
        HistoryVerdict::Invalid(v) => CheckReport::fail(
            &property,
            v.process
                .map(|p| Witness::Cell { p, t: v.time })
                .into_iter()
                .collect(),
            v.to_string(),
        ),
    })
}

/// [`check_permutation_closure`] for a history of any shipped kind. An
/// invalid history gives a vacuous report.
pub fn check_permutation_closure_any(
    h: &AnyHistory,
    f: &FailurePattern,
    perms: &PermutationSource,
) -> Result<CheckReport, ModelError> {
    if !h.check(f)?.is_valid() {
        return Ok(CheckReport::with("permutation-closure", Verdict::Vacuous));
    }
    Ok(closure(h.is_anonymous(f, perms)?))
}

fn closure(verdict: AnonymityVerdict) -> CheckReport {
    match verdict {
        AnonymityVerdict::Closed { .. } => CheckReport::pass("permutation-closure"),
        AnonymityVerdict::Violated { perm, violation } => CheckReport::fail(
            "permutation-closure",
            violation
                .process
                .map(|p| Witness::Cell {
                    p,
                    t: violation.time,
                })
                .into_iter()
                .collect(),
            format!("relabelling {perm:?} breaks {violation}"),
        ),
    }
}

/// Verdict counts per property, merged across traces.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
}

impl Summary {
    pub fn add(&mut self, reports: &[CheckReport]) {
        self.runs += 1;
        for r in reports {
            let verdict = serde_json::to_value(r.verdict).expect("verdicts serialize");
            *self
                .counts
                .entry(r.property.clone())
                .or_default()
                .entry(verdict.as_str().unwrap_or("?").to_string())
                .or_default() += 1;
        }
    }

    pub fn merge(&mut self, other: &Summary) {
        self.runs += other.runs;
        for (p, m) in &other.counts {
            for (v, c) in m {
                *self
                    .counts
                    .entry(p.clone())
                    .or_default()
                    .entry(v.clone())
                    .or_default() += c;
            }
        }
    }

    pub fn failures(&self) -> usize {
        self.counts
            .values()
            .map(|m| m.get("fail").copied().unwrap_or(0))
            .sum()
    }

    pub fn count(&self, property: &str, verdict: Verdict) -> usize {
        let v = serde_json::to_value(verdict).expect("verdicts serialize");
        self.counts
            .get(property)
            .and_then(|m| m.get(v.as_str().unwrap_or_default()))
            .copied()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::{NSpec, OmegaSpec, ThetaSpec};
    use crate::simulator::{TraceEnd, TraceHeader};

    fn p(i: u32) -> ProcessId {
        ProcessId::new(i)
    }

    fn trace(n: usize, events: Vec<EventKind>, crashed: &[u32], truncated: bool) -> Trace {
        Trace {
            header: TraceHeader {
                algorithm: "test".into(),
                n,
                f: 1,
                inputs: vec![],
                crash: Default::default(),
                oracle: String::new(),
                policy: String::new(),
                seed: 0,
                horizon: 0,
                identified: false,
            },
            events: events
                .into_iter()
                .enumerate()
                .map(|(i, kind)| Event {
                    step: i as Time,
                    kind,
                })
                .collect(),
            end: TraceEnd {
                step: 100,
                reason: if truncated {
                    EndReason::Horizon
                } else {
                    EndReason::Quiescent
                },
                truncated,
                pending: 0,
                crashed: crashed.iter().map(|&i| p(i)).collect(),
                decisions: Default::default(),
                rounds: vec![],
            },
        }
    }

    fn decide(i: u32, value: Bin, round: u32) -> EventKind {
        EventKind::Decide {
            p: p(i),
            value,
            round,
        }
    }

    fn verdicts(reports: &[CheckReport]) -> Vec<Verdict> {
        reports.iter().map(|r| r.verdict).collect()
    }

    #[test]
    fn consensus_all_pass() {
        let t = trace(2, vec![decide(1, 0, 1), decide(2, 0, 1)], &[], false);
        assert_eq!(
            verdicts(&check_consensus(&t, &[0, 0])),
            vec![Verdict::Pass; 4]
        );
    }

    #[test]
    fn disagreement_has_both_decisions_as_witness() {
        let t = trace(2, vec![decide(1, 0, 1), decide(2, 1, 1)], &[], false);
        let r = &check_consensus(&t, &[0, 1])[2];
        assert_eq!(r.property, "agreement");
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.witness, vec![Witness::Event(0), Witness::Event(1)]);
        // A crashed process may disagree.
        let t = trace(2, vec![decide(1, 0, 1), decide(2, 1, 1)], &[2], false);
        assert_eq!(check_consensus(&t, &[0, 1])[2].verdict, Verdict::Pass);
    }

    #[test]
    fn validity_and_integrity_failures() {
        let t = trace(
            2,
            vec![decide(1, 0, 1), decide(1, 0, 2), decide(2, 0, 1)],
            &[],
            false,
        );
        let r = check_consensus(&t, &[1, 1]);
        assert_eq!(
            verdicts(&r),
            vec![Verdict::Pass, Verdict::Fail, Verdict::Pass, Verdict::Fail]
        );
        assert_eq!(r[3].witness, vec![Witness::Event(0)]);
    }

    #[test]
    fn termination_is_truncated_not_failed() {
        let t = trace(2, vec![decide(1, 0, 1)], &[], true);
        assert_eq!(check_consensus(&t, &[0, 0])[0].verdict, Verdict::Truncated);
        let t = trace(2, vec![decide(1, 0, 1)], &[], false);
        let r = &check_consensus(&t, &[0, 0])[0];
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.witness, vec![Witness::Process { p: p(2) }]);
    }

    #[test]
    fn lock_exclusivity_exempts_question_mark() {
        let send = |lock| EventKind::Send {
            p: p(1),
            msg: 0,
            payload: Payload::Lock { r: 3, lock, v: 1 },
        };
        let t = trace(2, vec![send(Some(1)), send(None)], &[], false);
        assert_eq!(
            verdicts(&check_lemma_invariants(&t, "alg2").unwrap())[0],
            Verdict::Pass
        );
        let t = trace(2, vec![send(Some(1)), send(Some(0))], &[], false);
        assert_eq!(
            verdicts(&check_lemma_invariants(&t, "alg2").unwrap())[0],
            Verdict::Fail
        );
    }

    #[test]
    fn stubbornness_catches_flip() {
        let round = |r, v| EventKind::Round {
            p: p(1),
            round: r,
            v: Some(v),
        };
        let t = trace(1, vec![round(1, 0), round(2, 1), round(3, 0)], &[], false);
        let r = &check_lemma_invariants(&t, "alg1").unwrap()[0];
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.witness, vec![Witness::Event(1), Witness::Event(2)]);
    }

    #[test]
    fn decision_spread_bounds() {
        let ok = trace(
            3,
            vec![decide(2, 1, 4), decide(1, 1, 3), decide(3, 1, 4)],
            &[],
            false,
        );
        assert_eq!(
            check_lemma_invariants(&ok, "alg2").unwrap()[1].verdict,
            Verdict::Pass
        );
        let late = trace(3, vec![decide(1, 1, 3), decide(2, 1, 5)], &[], false);
        assert_eq!(
            check_lemma_invariants(&late, "alg2").unwrap()[1].verdict,
            Verdict::Fail
        );
        let none = trace(3, vec![], &[], false);
        assert_eq!(
            check_lemma_invariants(&none, "alg2").unwrap()[1].verdict,
            Verdict::Vacuous
        );
    }

    #[test]
    fn round_skew_ignores_crashed() {
        let round = |i, r| EventKind::Round {
            p: p(i),
            round: r,
            v: None,
        };
        let t = trace(
            2,
            vec![round(1, 2), EventKind::Crash { p: p(2) }, round(1, 9)],
            &[2],
            false,
        );
        assert_eq!(
            check_lemma_invariants(&t, "alg5").unwrap()[0].verdict,
            Verdict::Pass
        );
        let t = trace(2, vec![round(1, 3), round(2, 0)], &[], false);
        assert_eq!(
            check_lemma_invariants(&t, "alg5").unwrap()[0].verdict,
            Verdict::Fail
        );
    }

    #[test]
    fn unknown_algorithm_is_an_error() {
        let t = trace(1, vec![], &[], false);
        assert!(check_lemma_invariants(&t, "alg9").is_err());
    }

    #[test]
    fn symmetry_classification() {
        let f = FailurePattern::no_crashes(3);
        let h = History::constant(3, 4, 0u32);
        assert_eq!(classify_symmetry(&h, &f).strict, Symmetry::Symmetric);
        let theta = History::from_fn(3, 4, |q, _| q == p(1));
        assert!(ThetaSpec.validates(&theta, &f).unwrap());
        assert_eq!(
            classify_symmetry(&theta, &f).suffix,
            Symmetry::Unsymmetrical
        );
        let early = History::from_fn(3, 6, |q, t| if t < 3 && q == p(2) { 3 } else { 0 })
            .with_convergence(3);
        let s = classify_symmetry(&early, &f);
        assert_eq!(
            (s.strict, s.suffix),
            (Symmetry::Unsymmetrical, Symmetry::Symmetric)
        );
    }

    #[test]
    fn closure_reports() {
        let f = FailurePattern::from_pairs(3, &[(3, 1)]).unwrap();
        let h = History::from_fn(3, 3, |_, t| f.crashed_count_at(t) as u32);
        assert!(
            !check_permutation_closure(&NSpec, &f, &h, &PermutationSource::Exhaustive)
                .unwrap()
                .failed()
        );
        let omega = History::constant(3, 3, p(1));
        let r = check_permutation_closure(&OmegaSpec, &f, &omega, &PermutationSource::Exhaustive)
            .unwrap();
        assert!(r.failed());
        assert!(
            !check_permutation_closure(&OmegaSpec, &f, &omega, &PermutationSource::Identity)
                .unwrap()
                .failed()
        );
    }

    #[test]
    fn summary_counts_add_up() {
        let t = trace(2, vec![decide(1, 0, 1), decide(2, 1, 1)], &[], false);
        let mut s = Summary::default();
        s.add(&check_consensus(&t, &[0, 1]));
        s.add(&check_consensus(&t, &[0, 1]));
        assert_eq!(s.runs, 2);
        assert_eq!(s.count("agreement", Verdict::Fail), 2);
        assert_eq!(s.failures(), 2);
        let total: usize = s.counts.values().flat_map(|m| m.values()).sum();
        assert_eq!(total, 8);
    }
}
