//! Failure detector specifications: validators for the crash-count oracles
//! `N` and `◇N`, eventual self-trust `Θ`, and the classic `P`, `◇P` and `Ω`,
//! together with history samplers that realize each detector as a concrete,
//! seeded table.
//!
//! Tables are finite. Past its horizon a history repeats its last column, and
//! past the last crash the failure pattern is constant, so every clause can be
//! decided on the window `[0, end]` with `end = max(horizon, last crash) + 1`.
//! "Eventually" clauses hold from the recorded convergence point when one is
//! given (and that claim is re-checked); otherwise they are evaluated on the
//! constant suffix.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    is_anonymous, AnonymityVerdict, EmulationInfo, FailurePattern, History, HistoryDoc,
    HistoryValue, ModelError, PermutationSource, ProcessId, Time,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DetectorKind {
    N,
    DiamondN,
    Theta,
    P,
    DiamondP,
    Omega,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 6] = [
        DetectorKind::N,
        DetectorKind::DiamondN,
        DetectorKind::Theta,
        DetectorKind::P,
        DetectorKind::DiamondP,
        DetectorKind::Omega,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::N => "N",
            DetectorKind::DiamondN => "DiamondN",
            DetectorKind::Theta => "Theta",
            DetectorKind::P => "P",
            DetectorKind::DiamondP => "DiamondP",
            DetectorKind::Omega => "Omega",
        }
    }

    pub fn range(self) -> &'static str {
        match self {
            DetectorKind::N | DetectorKind::DiamondN => u32::RANGE,
            DetectorKind::Theta => bool::RANGE,
            DetectorKind::P | DetectorKind::DiamondP => BTreeSet::<ProcessId>::RANGE,
            DetectorKind::Omega => ProcessId::RANGE,
        }
    }

    /// Whether the detector's outputs avoid naming processes.
    pub fn is_anonymous_class(self) -> bool {
        matches!(
            self,
            DetectorKind::N | DetectorKind::DiamondN | DetectorKind::Theta
        )
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = DetectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DetectorKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| DetectorError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("unknown detector kind `{0}`")]
    UnknownKind(String),
    #[error("infeasible oracle profile: {0}")]
    InfeasibleProfile(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("malformed history document: {0}")]
    Json(String),
}

/// A clause of a detector definition that a history breaks, located at a cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub clause: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub process: Option<ProcessId>,
    pub time: Time,
}

impl Violation {
    pub fn at(clause: &str, process: ProcessId, time: Time) -> Self {
        Violation {
            clause: clause.to_string(),
            process: Some(process),
            time,
        }
    }

    pub fn global(clause: &str, time: Time) -> Self {
        Violation {
            clause: clause.to_string(),
            process: None,
            time,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.process {
            Some(p) => write!(f, "{} violated at ({}, t = {})", self.clause, p, self.time),
            None => write!(f, "{} violated at t = {}", self.clause, self.time),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Valid,
    Invalid(Violation),
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, Verdict::Valid)
    }

    fn from_result(r: Result<(), Violation>) -> Self {
        match r {
            Ok(()) => Verdict::Valid,
            Err(v) => Verdict::Invalid(v),
        }
    }
}

/// A failure detector: its range and the set of legal histories per pattern.
pub trait DetectorSpec {
    type Value: HistoryValue;

    /// Short name used in check reports.
    fn name(&self) -> &'static str;

    /// Decides whether `h` is a legal history for `f`, naming the first broken
    /// clause otherwise. Range and size errors are reported as `Err`.
    fn check(&self, h: &History<Self::Value>, f: &FailurePattern) -> Result<Verdict, ModelError>;

    fn validates(&self, h: &History<Self::Value>, f: &FailurePattern) -> Result<bool, ModelError> {
        Ok(self.check(h, f)?.is_valid())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NSpec;
#[derive(Debug, Clone, Copy, Default)]
pub struct DiamondNSpec;
#[derive(Debug, Clone, Copy, Default)]
pub struct ThetaSpec;
#[derive(Debug, Clone, Copy, Default)]
pub struct PSpec;
#[derive(Debug, Clone, Copy, Default)]
pub struct DiamondPSpec;
#[derive(Debug, Clone, Copy, Default)]
pub struct OmegaSpec;

/// Time window on which a finite history and its pattern must be inspected.
#[derive(Debug, Clone, Copy)]
struct Window {
    end: Time,
    convergence: Option<Time>,
}

impl Window {
    fn new<V: HistoryValue>(h: &History<V>, f: &FailurePattern) -> Result<Self, ModelError> {
        if h.n() != f.n() {
            return Err(ModelError::SizeMismatch {
                expected: f.n(),
                found: h.n(),
            });
        }
        h.check_range()?;
        let end = h.horizon().max(f.last_crash().unwrap_or(0)) + 1;
        Ok(Window {
            end,
            convergence: h.convergence(),
        })
    }

    fn always(&self) -> std::ops::RangeInclusive<Time> {
        0..=self.end
    }

    /// Times covered by a clause of the form "∃t ∀t′ ≥ t" (or "∀t′ > t" when
    /// `strict`).
    fn eventually(&self, strict: bool) -> std::ops::RangeInclusive<Time> {
        let start = match self.convergence {
            Some(c) => (c + strict as Time).min(self.end),
            None => self.end,
        };
        start..=self.end
    }
}

fn alive(f: &FailurePattern, p: ProcessId, t: Time) -> bool {
    !f.is_crashed_at(p, t)
}

fn count_completeness(h: &History<u32>, f: &FailurePattern, w: &Window) -> Result<(), Violation> {
    let crashed = f.crashed_count() as u32;
    for t in w.eventually(false) {
        for q in ProcessId::all(f.n()).filter(|&q| alive(f, q, t)) {
            if *h.get(q, t) < crashed {
                return Err(Violation::at("completeness", q, t));
            }
        }
    }
    Ok(())
}

fn count_accuracy(
    h: &History<u32>,
    f: &FailurePattern,
    times: impl Iterator<Item = Time>,
    clause: &str,
) -> Result<(), Violation> {
    let crashed = f.crashed_count() as u32;
    for t in times {
        for q in ProcessId::all(f.n()).filter(|&q| f.is_correct(q)) {
            if *h.get(q, t) > crashed {
                return Err(Violation::at(clause, q, t));
            }
        }
    }
    Ok(())
}

impl DetectorSpec for NSpec {
    type Value = u32;

    fn name(&self) -> &'static str {
        DetectorKind::N.name()
    }

    fn check(&self, h: &History<u32>, f: &FailurePattern) -> Result<Verdict, ModelError> {
        let w = Window::new(h, f)?;
        Ok(Verdict::from_result(count_completeness(h, f, &w).and_then(
            |_| count_accuracy(h, f, w.always(), "accuracy"),
        )))
    }
}

impl DetectorSpec for DiamondNSpec {
    type Value = u32;

    fn name(&self) -> &'static str {
        DetectorKind::DiamondN.name()
    }

    fn check(&self, h: &History<u32>, f: &FailurePattern) -> Result<Verdict, ModelError> {
        let w = Window::new(h, f)?;
        Ok(Verdict::from_result(count_completeness(h, f, &w).and_then(
            |_| count_accuracy(h, f, w.eventually(true), "eventual-accuracy"),
        )))
    }
}

impl DetectorSpec for ThetaSpec {
    type Value = bool;

    fn name(&self) -> &'static str {
        DetectorKind::Theta.name()
    }

    fn check(&self, h: &History<bool>, f: &FailurePattern) -> Result<Verdict, ModelError> {
        let w = Window::new(h, f)?;
        let correct = f.correct()?;
        let times = w.eventually(true);
        let first = *times.start();
        let trusting: Vec<_> = correct
            .iter()
            .copied()
            .filter(|&p| *h.get(p, first))
            .collect();
        let leader = match trusting.as_slice() {
            [p] => *p,
            [] => {
                return Ok(Verdict::Invalid(Violation::global(
                    "eventual-self-trust",
                    first,
                )))
            }
            [_, second, ..] => {
                return Ok(Verdict::Invalid(Violation::at(
                    "eventual-self-trust",
                    *second,
                    first,
                )))
            }
        };
        for t in times {
            for &q in &correct {
                if *h.get(q, t) != (q == leader) {
                    return Ok(Verdict::Invalid(Violation::at("eventual-self-trust", q, t)));
                }
            }
        }
        Ok(Verdict::Valid)
    }
}

fn strong_completeness(
    h: &History<BTreeSet<ProcessId>>,
    f: &FailurePattern,
    w: &Window,
) -> Result<(), Violation> {
    let crashed = f.crashed();
    for t in w.eventually(false) {
        for p in ProcessId::all(f.n()).filter(|&p| f.is_correct(p)) {
            if !crashed.is_subset(h.get(p, t)) {
                return Err(Violation::at("strong-completeness", p, t));
            }
        }
    }
    Ok(())
}

impl DetectorSpec for PSpec {
    type Value = BTreeSet<ProcessId>;

    fn name(&self) -> &'static str {
        DetectorKind::P.name()
    }

    fn check(
        &self,
        h: &History<BTreeSet<ProcessId>>,
        f: &FailurePattern,
    ) -> Result<Verdict, ModelError> {
        let w = Window::new(h, f)?;
        let accuracy = || {
            for t in w.always() {
                for p in ProcessId::all(f.n()).filter(|&p| alive(f, p, t)) {
                    if h.get(p, t).iter().any(|&q| !f.is_crashed_at(q, t)) {
                        return Err(Violation::at("strong-accuracy", p, t));
                    }
                }
            }
            Ok(())
        };
        Ok(Verdict::from_result(
            strong_completeness(h, f, &w).and_then(|_| accuracy()),
        ))
    }
}

impl DetectorSpec for DiamondPSpec {
    type Value = BTreeSet<ProcessId>;

    fn name(&self) -> &'static str {
        DetectorKind::DiamondP.name()
    }

    fn check(
        &self,
        h: &History<BTreeSet<ProcessId>>,
        f: &FailurePattern,
    ) -> Result<Verdict, ModelError> {
        let w = Window::new(h, f)?;
        let accuracy = || {
            for t in w.eventually(true) {
                for p in ProcessId::all(f.n()).filter(|&p| f.is_correct(p)) {
                    if h.get(p, t).iter().any(|&q| f.is_correct(q)) {
                        return Err(Violation::at("eventual-strong-accuracy", p, t));
                    }
                }
            }
            Ok(())
        };
        Ok(Verdict::from_result(
            strong_completeness(h, f, &w).and_then(|_| accuracy()),
        ))
    }
}

impl DetectorSpec for OmegaSpec {
    type Value = ProcessId;

    fn name(&self) -> &'static str {
        DetectorKind::Omega.name()
    }

    fn check(&self, h: &History<ProcessId>, f: &FailurePattern) -> Result<Verdict, ModelError> {
        let w = Window::new(h, f)?;
        let correct = f.correct()?;
        let times = w.eventually(true);
        let first = *times.start();
        let anchor = *correct.iter().next().expect("nonempty");
        let leader = *h.get(anchor, first);
        if !correct.contains(&leader) {
            return Ok(Verdict::Invalid(Violation::at(
                "eventual-leadership",
                anchor,
                first,
            )));
        }
        for t in times {
            for &q in &correct {
                if *h.get(q, t) != leader {
                    return Ok(Verdict::Invalid(Violation::at("eventual-leadership", q, t)));
                }
            }
        }
        Ok(Verdict::Valid)
    }
}

/// Not a real detector: every process outputs the lowest-index process that
/// crashes in the pattern, or itself when nothing crashes. Its range names
/// processes, so relabelling the pattern without relabelling the outputs
/// breaks it; used to show the anonymity checker can fail.
#[derive(Debug, Clone, Copy, Default)]
pub struct LowestCrashedSpec;

impl DetectorSpec for LowestCrashedSpec {
    type Value = ProcessId;

    fn name(&self) -> &'static str {
        "lowest-crashed"
    }

    fn check(&self, h: &History<ProcessId>, f: &FailurePattern) -> Result<Verdict, ModelError> {
        if h.n() != f.n() {
            return Err(ModelError::SizeMismatch {
                expected: f.n(),
                found: h.n(),
            });
        }
        h.check_range()?;
        let lowest = f.crashed().first().copied();
        for p in ProcessId::all(f.n()) {
            let want = lowest.unwrap_or(p);
            if let Some(t) = h.row(p).iter().position(|&q| q != want) {
                return Ok(Verdict::Invalid(Violation::at(
                    "lowest-crashed",
                    p,
                    t as Time,
                )));
            }
        }
        Ok(Verdict::Valid)
    }
}

/// `A(q, t) = n - H(q, t)`: the number of processes believed alive.
pub fn alive_view(h: &History<u32>, n: usize) -> History<u32> {
    h.map(|_, _, &v| (n as u32).saturating_sub(v))
}

/// How a sampled oracle behaves before its eventual clauses take hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreConvergence {
    /// Already accurate: exact crash counts, exact suspicion, settled leader.
    Optimistic,
    /// Least informative legal output: nothing crashed, nobody trusted,
    /// nobody suspected, every process its own leader.
    Pessimistic,
    /// Uniformly random legal output per cell.
    AdversarialRandom,
}

impl FromStr for PreConvergence {
    type Err = DetectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "optimistic" => Ok(PreConvergence::Optimistic),
            "pessimistic" => Ok(PreConvergence::Pessimistic),
            "adversarial-random" | "adversarial" => Ok(PreConvergence::AdversarialRandom),
            other => Err(DetectorError::InfeasibleProfile(format!(
                "unknown pre-convergence behavior `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OracleProfile {
    pub convergence_time: Time,
    pub pre: PreConvergence,
}

impl OracleProfile {
    pub fn accurate() -> Self {
        OracleProfile {
            convergence_time: 0,
            pre: PreConvergence::Optimistic,
        }
    }

    pub fn new(convergence_time: Time, pre: PreConvergence) -> Self {
        OracleProfile {
            convergence_time,
            pre,
        }
    }

    /// The time from which the sampled table is in its steady state: never
    /// before the last crash, so the eventual values are final.
    pub fn effective_convergence(&self, f: &FailurePattern) -> Time {
        self.convergence_time.max(f.last_crash().unwrap_or(0))
    }
}

/// Detectors that can be realized as seeded tables.
pub trait Sampler: DetectorSpec {
    /// Draws a legal history whose table spans at least `horizon` and the
    /// convergence point.
    fn sample_with(
        &self,
        f: &FailurePattern,
        profile: &OracleProfile,
        horizon: Time,
        rng: &mut ChaCha8Rng,
    ) -> History<Self::Value>;
}

/// Seeded sampling entry point. The result always validates against `spec`.
pub fn sample_history<S: Sampler>(
    spec: &S,
    f: &FailurePattern,
    profile: &OracleProfile,
    horizon: Time,
    seed: u64,
) -> Result<History<S::Value>, DetectorError> {
    f.correct()?;
    if profile.convergence_time > horizon {
        return Err(DetectorError::InfeasibleProfile(format!(
            "convergence time {} exceeds horizon {}",
            profile.convergence_time, horizon
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = spec.sample_with(f, profile, horizon, &mut rng);
    debug_assert!(
        spec.validates(&h, f).unwrap_or(false),
        "sampler produced an illegal history"
    );
    Ok(h)
}

fn table_horizon(f: &FailurePattern, profile: &OracleProfile, horizon: Time) -> (Time, Time) {
    let c = profile.effective_convergence(f);
    (c, horizon.max(c))
}

fn random_subset<R: Rng>(
    rng: &mut R,
    from: impl Iterator<Item = ProcessId>,
) -> BTreeSet<ProcessId> {
    from.filter(|_| rng.gen_bool(0.5)).collect()
}

fn pick_correct<R: Rng>(f: &FailurePattern, rng: &mut R) -> ProcessId {
    let correct: Vec<_> = f
        .correct()
        .expect("checked by caller")
        .into_iter()
        .collect();
    *correct.choose(rng).expect("nonempty")
}

impl Sampler for NSpec {
    fn sample_with(
        &self,
        f: &FailurePattern,
        profile: &OracleProfile,
        horizon: Time,
        rng: &mut ChaCha8Rng,
    ) -> History<u32> {
        let (c, len) = table_horizon(f, profile, horizon);
        History::from_fn(f.n(), len, |_, t| {
            let now = f.crashed_count_at(t) as u32;
            if t >= c {
                return now;
            }
            // Never above the count crashed so far: the output may lag behind
            // crashes but not anticipate them.
            match profile.pre {
                PreConvergence::Optimistic => now,
                PreConvergence::Pessimistic => 0,
                PreConvergence::AdversarialRandom => rng.gen_range(0..=now),
            }
        })
        .with_convergence(c)
    }
}

impl Sampler for DiamondNSpec {
    fn sample_with(
        &self,
        f: &FailurePattern,
        profile: &OracleProfile,
        horizon: Time,
        rng: &mut ChaCha8Rng,
    ) -> History<u32> {
        let (c, len) = table_horizon(f, profile, horizon);
        let n = f.n() as u32;
        let mut h = History::from_fn(f.n(), len, |_, t| {
            if t >= c {
                return f.crashed_count_at(t) as u32;
            }
            match profile.pre {
                PreConvergence::Optimistic => f.crashed_count_at(t) as u32,
                PreConvergence::Pessimistic => 0,
                PreConvergence::AdversarialRandom => rng.gen_range(0..=n),
            }
        });
        if profile.pre == PreConvergence::AdversarialRandom
            && c > 0
            && (f.crashed_count() as u32) < n
        {
            // Make sure the table actually exercises the eventual-only accuracy.
            let q = pick_correct(f, rng);
            let t = rng.gen_range(0..c);
            h.set(q, t, rng.gen_range(f.crashed_count() as u32 + 1..=n));
        }
        h.with_convergence(c)
    }
}

impl Sampler for ThetaSpec {
    fn sample_with(
        &self,
        f: &FailurePattern,
        profile: &OracleProfile,
        horizon: Time,
        rng: &mut ChaCha8Rng,
    ) -> History<bool> {
        let (c, len) = table_horizon(f, profile, horizon);
        let leader = pick_correct(f, rng);
        History::from_fn(f.n(), len, |p, t| {
            if t >= c && !f.is_crashed_at(p, t) {
                return p == leader;
            }
            match profile.pre {
                PreConvergence::Optimistic => p == leader,
                PreConvergence::Pessimistic => false,
                PreConvergence::AdversarialRandom => rng.gen_bool(0.5),
            }
        })
        .with_convergence(c)
    }
}

impl Sampler for PSpec {
    fn sample_with(
        &self,
        f: &FailurePattern,
        profile: &OracleProfile,
        horizon: Time,
        rng: &mut ChaCha8Rng,
    ) -> History<BTreeSet<ProcessId>> {
        let (c, len) = table_horizon(f, profile, horizon);
        History::from_fn(f.n(), len, |_, t| {
            let now = f.crashed_at(t);
            if t >= c {
                return now;
            }
            match profile.pre {
                PreConvergence::Optimistic => now,
                PreConvergence::Pessimistic => BTreeSet::new(),
                PreConvergence::AdversarialRandom => random_subset(rng, now.into_iter()),
            }
        })
        .with_convergence(c)
    }
}

impl Sampler for DiamondPSpec {
    fn sample_with(
        &self,
        f: &FailurePattern,
        profile: &OracleProfile,
        horizon: Time,
        rng: &mut ChaCha8Rng,
    ) -> History<BTreeSet<ProcessId>> {
        let (c, len) = table_horizon(f, profile, horizon);
        History::from_fn(f.n(), len, |_, t| {
            if t >= c {
                return f.crashed_at(t);
            }
            match profile.pre {
                PreConvergence::Optimistic => f.crashed_at(t),
                PreConvergence::Pessimistic => BTreeSet::new(),
                PreConvergence::AdversarialRandom => random_subset(rng, ProcessId::all(f.n())),
            }
        })
        .with_convergence(c)
    }
}

impl Sampler for OmegaSpec {
    fn sample_with(
        &self,
        f: &FailurePattern,
        profile: &OracleProfile,
        horizon: Time,
        rng: &mut ChaCha8Rng,
    ) -> History<ProcessId> {
        let (c, len) = table_horizon(f, profile, horizon);
        let leader = pick_correct(f, rng);
        let n = f.n();
        History::from_fn(n, len, |p, t| {
            if t >= c {
                return leader;
            }
            match profile.pre {
                PreConvergence::Optimistic => leader,
                PreConvergence::Pessimistic => p,
                PreConvergence::AdversarialRandom => ProcessId::from_index0(rng.gen_range(0..n)),
            }
        })
        .with_convergence(c)
    }
}

/// A single detector reading, as recorded in traces. Counts are bare
/// numbers, so a process is written as `{"process": 3}` to stay distinct.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "ValueRepr", into = "ValueRepr")]
pub enum DetectorValue {
    Count(u32),
    Bool(bool),
    Set(BTreeSet<ProcessId>),
    Process(ProcessId),
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum ValueRepr {
    Count(u32),
    Bool(bool),
    Set(BTreeSet<ProcessId>),
    Process { process: ProcessId },
}

impl From<ValueRepr> for DetectorValue {
    fn from(r: ValueRepr) -> Self {
        match r {
            ValueRepr::Count(c) => DetectorValue::Count(c),
            ValueRepr::Bool(b) => DetectorValue::Bool(b),
            ValueRepr::Set(s) => DetectorValue::Set(s),
            ValueRepr::Process { process } => DetectorValue::Process(process),
        }
    }
}

impl From<DetectorValue> for ValueRepr {
    fn from(v: DetectorValue) -> Self {
        match v {
            DetectorValue::Count(c) => ValueRepr::Count(c),
            DetectorValue::Bool(b) => ValueRepr::Bool(b),
            DetectorValue::Set(s) => ValueRepr::Set(s),
            DetectorValue::Process(process) => ValueRepr::Process { process },
        }
    }
}

impl DetectorValue {
    pub fn as_count(&self) -> Option<u32> {
        match self {
            DetectorValue::Count(c) => Some(*c),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            DetectorValue::Bool(b) => Some(*b),
            _ => None,
        }
    }
}

/// A history of any shipped detector, tagged with its kind.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyHistory {
    N(History<u32>),
    DiamondN(History<u32>),
    Theta(History<bool>),
    P(History<BTreeSet<ProcessId>>),
    DiamondP(History<BTreeSet<ProcessId>>),
    Omega(History<ProcessId>),
}

macro_rules! dispatch {
    ($self:expr, $h:ident, $spec:ident => $body:expr) => {
        match $self {
            AnyHistory::N($h) => {
                let $spec = NSpec;
                $body
            }
            AnyHistory::DiamondN($h) => {
                let $spec = DiamondNSpec;
                $body
            }
            AnyHistory::Theta($h) => {
                let $spec = ThetaSpec;
                $body
            }
            AnyHistory::P($h) => {
                let $spec = PSpec;
                $body
            }
            AnyHistory::DiamondP($h) => {
                let $spec = DiamondPSpec;
                $body
            }
            AnyHistory::Omega($h) => {
                let $spec = OmegaSpec;
                $body
            }
        }
    };
}

impl AnyHistory {
    pub fn sample(
        kind: DetectorKind,
        f: &FailurePattern,
        profile: &OracleProfile,
        horizon: Time,
        seed: u64,
    ) -> Result<Self, DetectorError> {
        Ok(match kind {
            DetectorKind::N => AnyHistory::N(sample_history(&NSpec, f, profile, horizon, seed)?),
            DetectorKind::DiamondN => {
                AnyHistory::DiamondN(sample_history(&DiamondNSpec, f, profile, horizon, seed)?)
            }
            DetectorKind::Theta => {
                AnyHistory::Theta(sample_history(&ThetaSpec, f, profile, horizon, seed)?)
            }
            DetectorKind::P => AnyHistory::P(sample_history(&PSpec, f, profile, horizon, seed)?),
            DetectorKind::DiamondP => {
                AnyHistory::DiamondP(sample_history(&DiamondPSpec, f, profile, horizon, seed)?)
            }
            DetectorKind::Omega => {
                AnyHistory::Omega(sample_history(&OmegaSpec, f, profile, horizon, seed)?)
            }
        })
    }

    pub fn kind(&self) -> DetectorKind {
        match self {
            AnyHistory::N(_) => DetectorKind::N,
            AnyHistory::DiamondN(_) => DetectorKind::DiamondN,
            AnyHistory::Theta(_) => DetectorKind::Theta,
            AnyHistory::P(_) => DetectorKind::P,
            AnyHistory::DiamondP(_) => DetectorKind::DiamondP,
            AnyHistory::Omega(_) => DetectorKind::Omega,
        }
    }

    pub fn n(&self) -> usize {
        dispatch!(self, h, _spec => h.n())
    }

    pub fn horizon(&self) -> Time {
        dispatch!(self, h, _spec => h.horizon())
    }

    pub fn convergence(&self) -> Option<Time> {
        dispatch!(self, h, _spec => h.convergence())
    }

    pub fn get(&self, p: ProcessId, t: Time) -> DetectorValue {
        match self {
            AnyHistory::N(h) | AnyHistory::DiamondN(h) => DetectorValue::Count(*h.get(p, t)),
            AnyHistory::Theta(h) => DetectorValue::Bool(*h.get(p, t)),
            AnyHistory::P(h) | AnyHistory::DiamondP(h) => DetectorValue::Set(h.get(p, t).clone()),
            AnyHistory::Omega(h) => DetectorValue::Process(*h.get(p, t)),
        }
    }

    pub fn check(&self, f: &FailurePattern) -> Result<Verdict, ModelError> {
        dispatch!(self, h, spec => spec.check(h, f))
    }

    pub fn is_anonymous(
        &self,
        f: &FailurePattern,
        perms: &PermutationSource,
    ) -> Result<AnonymityVerdict, ModelError> {
        dispatch!(self, h, spec => is_anonymous(&spec, f, h, perms))
    }

    /// Times at which some process's output differs from the previous step.
    pub fn change_points(&self) -> BTreeSet<Time> {
        let mut out = BTreeSet::new();
        dispatch!(self, h, _spec => {
            for row in h.rows() {
                for t in 1..row.len() {
                    if row[t] != row[t - 1] {
                        out.insert(t as Time);
                    }
                }
            }
        });
        out
    }

    pub fn to_json(&self, emulated_from: Option<EmulationInfo>) -> serde_json::Value {
        fn doc<V: HistoryValue>(
            h: &History<V>,
            kind: DetectorKind,
            e: Option<EmulationInfo>,
        ) -> serde_json::Value {
            let mut d = h.to_doc();
            d.kind = Some(kind.name().to_string());
            d.emulated_from = e;
            serde_json::to_value(d).expect("history documents serialize")
        }
        let kind = self.kind();
        dispatch!(self, h, _spec => doc(h, kind, emulated_from))
    }

    /// Parses a history document carrying a `"kind"` field.
    pub fn from_json(value: serde_json::Value) -> Result<Self, DetectorError> {
        let kind = value
            .get("kind")
            .and_then(|k| k.as_str())
            .ok_or_else(|| DetectorError::Json("missing string field `kind`".into()))?
            .parse::<DetectorKind>()?;
        fn parse<V: HistoryValue>(value: serde_json::Value) -> Result<History<V>, DetectorError> {
            let doc: HistoryDoc<V> =
                serde_json::from_value(value).map_err(|e| DetectorError::Json(e.to_string()))?;
            Ok(doc.into_history()?)
        }
        Ok(match kind {
            DetectorKind::N => AnyHistory::N(parse(value)?),
            DetectorKind::DiamondN => AnyHistory::DiamondN(parse(value)?),
            DetectorKind::Theta => AnyHistory::Theta(parse(value)?),
            DetectorKind::P => AnyHistory::P(parse(value)?),
            DetectorKind::DiamondP => AnyHistory::DiamondP(parse(value)?),
            DetectorKind::Omega => AnyHistory::Omega(parse(value)?),
        })
    }
}
