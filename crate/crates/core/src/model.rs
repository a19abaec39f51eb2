//! Formal objects of the anonymous message-passing model: processes, failure
//! patterns, environments, permutations, receive functions and detector
//! histories, plus the permutation-closure (anonymity) predicate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::{DetectorSpec, Verdict, Violation};

/// Discrete global time. One unit is one scheduler step of the simulator.
pub type Time = u64;

/// Largest system for which permutation checks are exhaustive by default.
pub const EXHAUSTIVE_PERMUTATION_LIMIT: usize = 4;
/// Number of sampled permutations above [`EXHAUSTIVE_PERMUTATION_LIMIT`].
pub const DEFAULT_SAMPLED_PERMUTATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid system: n = {n}, f = {f} (need n >= 1 and f < n)")]
    InvalidSystem { n: usize, f: usize },
    #[error("process index {index} out of range for n = {n}")]
    ProcessOutOfRange { index: u32, n: usize },
    #[error("{crashed} crashes exceed the bound f = {f}")]
    TooManyCrashes { crashed: usize, f: usize },
    #[error("every process crashes; at least one process must be correct")]
    NoCorrectProcess,
    #[error("size mismatch: expected n = {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("mapping is not a permutation of 1..={n}")]
    NotAPermutation { n: usize },
    #[error("malformed history: {0}")]
    MalformedHistory(String),
    #[error("value at ({process}, t = {time}) is outside the detector range")]
    RangeViolation { process: ProcessId, time: Time },
    #[error("history range `{found}` does not match expected `{expected}`")]
    RangeMismatch { expected: String, found: String },
    #[error("input history is not valid for its failure pattern: {0}")]
    InvalidInput(Violation),
}

/// A process `p_i`, `1 <= i <= n`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(into = "u32")]
pub struct ProcessId(u32);

// Accepts `3` and `"3"`: JSON object keys are strings, and buffered
// (tagged or flattened) content cannot re-parse them as integers.
impl<'de> Deserialize<'de> for ProcessId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = ProcessId;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a process index starting at 1")
            }

            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<ProcessId, E> {
                u32::try_from(v)
                    .map_err(E::custom)
                    .and_then(|v| ProcessId::try_from(v).map_err(E::custom))
            }

            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<ProcessId, E> {
                u64::try_from(v)
                    .map_err(E::custom)
                    .and_then(|v| self.visit_u64(v))
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<ProcessId, E> {
                v.parse::<u64>()
                    .map_err(|_| E::invalid_value(serde::de::Unexpected::Str(v), &self))
                    .and_then(|v| self.visit_u64(v))
            }
        }
        d.deserialize_any(V)
    }
}

impl ProcessId {
    /// Creates `p_index`. Panics on zero; use `TryFrom` for untrusted input.
    pub const fn new(index: u32) -> Self {
        assert!(index >= 1, "process indices start at 1");
        ProcessId(index)
    }

    /// Process at zero-based position `i`.
    pub fn from_index0(i: usize) -> Self {
        ProcessId(i as u32 + 1)
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// Zero-based position, for indexing per-process vectors.
    pub fn idx(self) -> usize {
        self.0 as usize - 1
    }

    /// `p_1, ..., p_n`.
    pub fn all(n: usize) -> impl Iterator<Item = ProcessId> + Clone {
        (1..=n as u32).map(ProcessId)
    }

    pub fn check(self, n: usize) -> Result<Self, ModelError> {
        if self.idx() < n {
            Ok(self)
        } else {
            Err(ModelError::ProcessOutOfRange { index: self.0, n })
        }
    }
}

impl TryFrom<u32> for ProcessId {
    type Error = String;

    fn try_from(v: u32) -> Result<Self, Self::Error> {
        if v == 0 {
            Err("process indices start at 1".to_string())
        } else {
            Ok(ProcessId(v))
        }
    }
}

impl From<ProcessId> for u32 {
    fn from(p: ProcessId) -> u32 {
        p.0
    }
}

impl fmt::Debug for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// `n` processes, at most `f` of which may crash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n: usize,
    pub f: usize,
}

impl SystemConfig {
    pub fn new(n: usize, f: usize) -> Result<Self, ModelError> {
        if n == 0 || f >= n {
            return Err(ModelError::InvalidSystem { n, f });
        }
        Ok(SystemConfig { n, f })
    }

    pub fn processes(&self) -> impl Iterator<Item = ProcessId> + Clone {
        ProcessId::all(self.n)
    }
}

/// Crash times of the faulty processes; `F(t) = { p : crash_time(p) <= t }`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FailurePattern {
    n: usize,
    crash: BTreeMap<ProcessId, Time>,
}

impl FailurePattern {
    pub fn new(n: usize, crash: BTreeMap<ProcessId, Time>) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::InvalidSystem { n, f: 0 });
        }
        for p in crash.keys() {
            p.check(n)?;
        }
        Ok(FailurePattern { n, crash })
    }

    pub fn no_crashes(n: usize) -> Self {
        FailurePattern {
            n,
            crash: BTreeMap::new(),
        }
    }

    /// Convenience constructor from `(index, time)` pairs.
    pub fn from_pairs(n: usize, pairs: &[(u32, Time)]) -> Result<Self, ModelError> {
        let mut crash = BTreeMap::new();
        for &(i, t) in pairs {
            let p = ProcessId::try_from(i)
                .map_err(|_| ModelError::ProcessOutOfRange { index: i, n })?;
            crash.insert(p, t);
        }
        Self::new(n, crash)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn crash_times(&self) -> &BTreeMap<ProcessId, Time> {
        &self.crash
    }

    pub fn crash_time(&self, p: ProcessId) -> Option<Time> {
        self.crash.get(&p).copied()
    }

    pub fn is_crashed_at(&self, p: ProcessId, t: Time) -> bool {
        self.crash_time(p).is_some_and(|c| c <= t)
    }

    /// `F(t)`.
    pub fn crashed_at(&self, t: Time) -> BTreeSet<ProcessId> {
        self.crash
            .iter()
            .filter(|(_, &c)| c <= t)
            .map(|(&p, _)| p)
            .collect()
    }

    pub fn crashed_count_at(&self, t: Time) -> usize {
        self.crash.values().filter(|&&c| c <= t).count()
    }

    /// `crashed(F)`: the union of `F(t)` over all `t`.
    pub fn crashed(&self) -> BTreeSet<ProcessId> {
        self.crash.keys().copied().collect()
    }

    pub fn crashed_count(&self) -> usize {
        self.crash.len()
    }

    pub fn is_correct(&self, p: ProcessId) -> bool {
        !self.crash.contains_key(&p)
    }

    /// `correct(F) = P - crashed(F)`. Fails if nobody is correct.
    pub fn correct(&self) -> Result<BTreeSet<ProcessId>, ModelError> {
        let correct: BTreeSet<_> = ProcessId::all(self.n)
            .filter(|p| self.is_correct(*p))
            .collect();
        if correct.is_empty() {
            Err(ModelError::NoCorrectProcess)
        } else {
            Ok(correct)
        }
    }

    pub fn last_crash(&self) -> Option<Time> {
        self.crash.values().copied().max()
    }

    /// Checks membership in the environment of `cfg`: matching size, at most
    /// `f` crashes and at least one correct process.
    pub fn validate_for(&self, cfg: &SystemConfig) -> Result<(), ModelError> {
        if self.n != cfg.n {
            return Err(ModelError::SizeMismatch {
                expected: cfg.n,
                found: self.n,
            });
        }
        if self.crash.len() > cfg.f {
            return Err(ModelError::TooManyCrashes {
                crashed: self.crash.len(),
                f: cfg.f,
            });
        }
        self.correct().map(|_| ())
    }

    /// `F^Π(t) = Π(F(t))`, i.e. `crash_time'(Π(p)) = crash_time(p)`.
    pub fn permuted(&self, pi: &Permutation) -> Result<FailurePattern, ModelError> {
        if pi.n() != self.n {
            return Err(ModelError::SizeMismatch {
                expected: self.n,
                found: pi.n(),
            });
        }
        let crash = self.crash.iter().map(|(&p, &t)| (pi.apply(p), t)).collect();
        Ok(FailurePattern { n: self.n, crash })
    }

    pub fn to_doc(&self, f: usize) -> PatternDoc {
        PatternDoc {
            n: self.n,
            f,
            crash: self.crash.clone(),
        }
    }
}

/// `crashed(F)`.
pub fn crashed_set(f: &FailurePattern) -> BTreeSet<ProcessId> {
    f.crashed()
}

/// `correct(F)` for a pattern of the given system.
pub fn correct_set(
    f: &FailurePattern,
    cfg: &SystemConfig,
) -> Result<BTreeSet<ProcessId>, ModelError> {
    if f.n() != cfg.n {
        return Err(ModelError::SizeMismatch {
            expected: cfg.n,
            found: f.n(),
        });
    }
    f.correct()
}

/// JSON form of a failure pattern: `{"n": 3, "f": 1, "crash": {"2": 5}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternDoc {
    pub n: usize,
    pub f: usize,
    #[serde(default)]
    pub crash: BTreeMap<ProcessId, Time>,
}

impl PatternDoc {
    pub fn into_parts(self) -> Result<(SystemConfig, FailurePattern), ModelError> {
        let cfg = SystemConfig::new(self.n, self.f)?;
        let pattern = FailurePattern::new(self.n, self.crash)?;
        pattern.validate_for(&cfg)?;
        Ok((cfg, pattern))
    }
}

/// The environment `E_f`: every pattern with at most `f` crashes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Environment {
    cfg: SystemConfig,
}

impl Environment {
    pub fn at_most_f(cfg: SystemConfig) -> Self {
        Environment { cfg }
    }

    pub fn config(&self) -> SystemConfig {
        self.cfg
    }

    pub fn contains(&self, f: &FailurePattern) -> bool {
        f.validate_for(&self.cfg).is_ok()
    }

    /// Every set of processes that may crash together, smallest first.
    pub fn crash_sets(&self) -> Vec<BTreeSet<ProcessId>> {
        (0..=self.cfg.f)
            .flat_map(|k| self.cfg.processes().combinations(k))
            .map(|c| c.into_iter().collect())
            .collect()
    }

    /// Draws a member with a uniform crash count and crash times in
    /// `[0, max_time]`.
    pub fn sample<R: Rng>(&self, rng: &mut R, max_time: Time) -> FailurePattern {
        let k = rng.gen_range(0..=self.cfg.f);
        let mut procs: Vec<_> = self.cfg.processes().collect();
        procs.shuffle(rng);
        let crash = procs
            .into_iter()
            .take(k)
            .map(|p| (p, rng.gen_range(0..=max_time)))
            .collect();
        FailurePattern {
            n: self.cfg.n,
            crash,
        }
    }
}

/// A bijection `Π` on `{p_1, ..., p_n}`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<ProcessId>", into = "Vec<ProcessId>")]
pub struct Permutation {
    map: Vec<ProcessId>,
}

impl Permutation {
    /// `map[i]` is the image of `p_{i+1}`.
    pub fn new(map: Vec<ProcessId>) -> Result<Self, ModelError> {
        let n = map.len();
        let mut seen = vec![false; n];
        for p in &map {
            let i = p.idx();
            if i >= n || seen[i] {
                return Err(ModelError::NotAPermutation { n });
            }
            seen[i] = true;
        }
        Ok(Permutation { map })
    }

    pub fn from_indices(indices: &[u32]) -> Result<Self, ModelError> {
        let n = indices.len();
        let map = indices
            .iter()
            .map(|&i| ProcessId::try_from(i).map_err(|_| ModelError::NotAPermutation { n }))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(map)
    }

    pub fn identity(n: usize) -> Self {
        Permutation {
            map: ProcessId::all(n).collect(),
        }
    }

    /// Transposition of `a` and `b`.
    pub fn swap(n: usize, a: ProcessId, b: ProcessId) -> Self {
        let mut map: Vec<_> = ProcessId::all(n).collect();
        map.swap(a.idx(), b.idx());
        Permutation { map }
    }

    /// The cycle `p_1 -> p_2 -> ... -> p_n -> p_1`.
    pub fn rotation(n: usize) -> Self {
        Permutation {
            map: (0..n)
                .map(|i| ProcessId::from_index0((i + 1) % n))
                .collect(),
        }
    }

    pub fn random<R: Rng>(n: usize, rng: &mut R) -> Self {
        let mut map: Vec<_> = ProcessId::all(n).collect();
        map.shuffle(rng);
        Permutation { map }
    }

    /// All `n!` permutations in lexicographic order.
    pub fn all(n: usize) -> impl Iterator<Item = Permutation> {
        ProcessId::all(n)
            .permutations(n)
            .map(|map| Permutation { map })
    }

    pub fn n(&self) -> usize {
        self.map.len()
    }

    pub fn apply(&self, p: ProcessId) -> ProcessId {
        self.map[p.idx()]
    }

    pub fn inverse(&self) -> Self {
        let mut map = self.map.clone();
        for (i, p) in self.map.iter().enumerate() {
            map[p.idx()] = ProcessId::from_index0(i);
        }
        Permutation { map }
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &Permutation) -> Permutation {
        Permutation {
            map: inner.map.iter().map(|&p| self.apply(p)).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, p)| p.idx() == i)
    }

    pub fn as_slice(&self) -> &[ProcessId] {
        &self.map
    }
}

impl TryFrom<Vec<ProcessId>> for Permutation {
    type Error = ModelError;

    fn try_from(map: Vec<ProcessId>) -> Result<Self, Self::Error> {
        Permutation::new(map)
    }
}

impl From<Permutation> for Vec<ProcessId> {
    fn from(p: Permutation) -> Self {
        p.map
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, p) in self.map.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "p{}->{}", i + 1, p)?;
        }
        write!(f, "]")
    }
}

/// Values received per `(receiver, sender, time)`: `R_i(j, t)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceiveLog<V> {
    n: usize,
    values: BTreeMap<(ProcessId, ProcessId, Time), V>,
}

impl<V> ReceiveLog<V> {
    pub fn new(n: usize) -> Self {
        ReceiveLog {
            n,
            values: BTreeMap::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn insert(&mut self, receiver: ProcessId, sender: ProcessId, t: Time, value: V) {
        self.values.insert((receiver, sender, t), value);
    }

    pub fn get(&self, receiver: ProcessId, sender: ProcessId, t: Time) -> Option<&V> {
        self.values.get(&(receiver, sender, t))
    }

    pub fn times(&self) -> BTreeSet<Time> {
        self.values.keys().map(|k| k.2).collect()
    }

    /// `R^Π_i(j, t) = R_i(Π(j), t)`. `None` when nothing was received in that slot.
    pub fn anonymous_receive(
        &self,
        pi: &Permutation,
        i: ProcessId,
        j: ProcessId,
        t: Time,
    ) -> Option<&V> {
        self.get(i, pi.apply(j), t)
    }
}

/// Anything a detector module can output.
pub trait HistoryValue: Clone + PartialEq + fmt::Debug + Serialize + DeserializeOwned {
    /// Name of the range in the JSON history format.
    const RANGE: &'static str;

    fn in_range(&self, n: usize) -> bool;
}

impl HistoryValue for u32 {
    const RANGE: &'static str = "count";

    fn in_range(&self, n: usize) -> bool {
        (*self as usize) <= n
    }
}

impl HistoryValue for bool {
    const RANGE: &'static str = "bool";

    fn in_range(&self, _n: usize) -> bool {
        true
    }
}

impl HistoryValue for BTreeSet<ProcessId> {
    const RANGE: &'static str = "set";

    fn in_range(&self, n: usize) -> bool {
        self.iter().all(|p| p.idx() < n)
    }
}

impl HistoryValue for ProcessId {
    const RANGE: &'static str = "process";

    fn in_range(&self, n: usize) -> bool {
        self.idx() < n
    }
}

/// A finite detector history `H(p, t)` for `t <= horizon`, extended by its
/// last column for every later `t`.
///
/// `convergence`, when recorded, is the time from which the eventual clauses
/// of the detector are claimed to hold; validators re-check that claim.
#[derive(Debug, Clone, PartialEq)]
pub struct History<V> {
    rows: Vec<Vec<V>>,
    convergence: Option<Time>,
}

impl<V: HistoryValue> History<V> {
    pub fn from_rows(rows: Vec<Vec<V>>) -> Result<Self, ModelError> {
        let len = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() {
            return Err(ModelError::MalformedHistory("no process rows".into()));
        }
        if len == 0 || rows.iter().any(|r| r.len() != len) {
            return Err(ModelError::MalformedHistory(
                "rows must be non-empty and of equal length".into(),
            ));
        }
        Ok(History {
            rows,
            convergence: None,
        })
    }

    pub fn from_fn(n: usize, horizon: Time, mut f: impl FnMut(ProcessId, Time) -> V) -> Self {
        let rows = ProcessId::all(n)
            .map(|p| (0..=horizon).map(|t| f(p, t)).collect())
            .collect();
        History {
            rows,
            convergence: None,
        }
    }

    pub fn constant(n: usize, horizon: Time, v: V) -> Self {
        Self::from_fn(n, horizon, |_, _| v.clone())
    }

    pub fn with_convergence(mut self, t: Time) -> Self {
        self.convergence = Some(t);
        self
    }

    pub fn set_convergence(&mut self, t: Option<Time>) {
        self.convergence = t;
    }

    pub fn convergence(&self) -> Option<Time> {
        self.convergence
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn horizon(&self) -> Time {
        self.rows[0].len() as Time - 1
    }

    /// `H(p, t)`, with constant extension past the horizon.
    pub fn get(&self, p: ProcessId, t: Time) -> &V {
        let row = &self.rows[p.idx()];
        &row[(t as usize).min(row.len() - 1)]
    }

    pub fn set(&mut self, p: ProcessId, t: Time, v: V) {
        self.rows[p.idx()][t as usize] = v;
    }

    pub fn row(&self, p: ProcessId) -> &[V] {
        &self.rows[p.idx()]
    }

    pub fn rows(&self) -> &[Vec<V>] {
        &self.rows
    }

    pub fn check_range(&self) -> Result<(), ModelError> {
        let n = self.n();
        for (i, row) in self.rows.iter().enumerate() {
            if let Some(t) = row.iter().position(|v| !v.in_range(n)) {
                return Err(ModelError::RangeViolation {
                    process: ProcessId::from_index0(i),
                    time: t as Time,
                });
            }
        }
        Ok(())
    }

    /// `H^Π(p, t) = H(Π(p), t)`.
    pub fn permuted(&self, pi: &Permutation) -> Result<Self, ModelError> {
        if pi.n() != self.n() {
            return Err(ModelError::SizeMismatch {
                expected: self.n(),
                found: pi.n(),
            });
        }
        let rows = ProcessId::all(self.n())
            .map(|p| self.rows[pi.apply(p).idx()].clone())
            .collect();
        Ok(History {
            rows,
            convergence: self.convergence,
        })
    }

    pub fn map<U: HistoryValue>(&self, mut f: impl FnMut(ProcessId, Time, &V) -> U) -> History<U> {
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(t, v)| f(ProcessId::from_index0(i), t as Time, v))
                    .collect()
            })
            .collect();
        History {
            rows,
            convergence: self.convergence,
        }
    }

    pub fn to_doc(&self) -> HistoryDoc<V> {
        HistoryDoc {
            kind: None,
            range: V::RANGE.to_string(),
            horizon: self.horizon(),
            convergence: self.convergence,
            out: self.rows.clone(),
            emulated_from: None,
        }
    }
}

/// JSON form of a history:
/// `{"kind": "N", "range": "count", "horizon": 9, "out": [[row per process]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryDoc<V> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    pub range: String,
    pub horizon: Time,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<Time>,
    pub out: Vec<Vec<V>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emulated_from: Option<EmulationInfo>,
}

/// Provenance of an emulated (transformation output) history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmulationInfo {
    pub source: String,
    pub transformation: String,
    pub seed: u64,
}

impl<V: HistoryValue> HistoryDoc<V> {
    pub fn into_history(self) -> Result<History<V>, ModelError> {
        if self.range != V::RANGE {
            return Err(ModelError::RangeMismatch {
                expected: V::RANGE.into(),
                found: self.range,
            });
        }
        if self.out.iter().any(|r| r.len() as Time != self.horizon + 1) {
            return Err(ModelError::MalformedHistory(format!(
                "every row must hold horizon + 1 = {} values",
                self.horizon + 1
            )));
        }
        let mut h = History::from_rows(self.out)?;
        h.convergence = self.convergence;
        h.check_range()?;
        Ok(h)
    }
}

/// Which permutations an anonymity check quantifies over.
#[derive(Debug, Clone)]
pub enum PermutationSource {
    Identity,
    Exhaustive,
    Sampled {
        count: usize,
        seed: u64,
    },
    Explicit(Vec<Permutation>),
    /// Exhaustive up to [`EXHAUSTIVE_PERMUTATION_LIMIT`] processes, sampled above.
    Auto {
        seed: u64,
    },
}

impl PermutationSource {
    pub fn permutations(&self, n: usize) -> Vec<Permutation> {
        match self {
            PermutationSource::Identity => vec![Permutation::identity(n)],
            PermutationSource::Exhaustive => Permutation::all(n).collect(),
            PermutationSource::Sampled { count, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..*count)
                    .map(|_| Permutation::random(n, &mut rng))
                    .collect()
            }
            PermutationSource::Explicit(perms) => perms.clone(),
            PermutationSource::Auto { seed } => {
                if n <= EXHAUSTIVE_PERMUTATION_LIMIT {
                    Permutation::all(n).collect()
                } else {
                    PermutationSource::Sampled {
                        count: DEFAULT_SAMPLED_PERMUTATIONS,
                        seed: *seed,
                    }
                    .permutations(n)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnonymityVerdict {
    Closed {
        checked: usize,
    },
    Violated {
        perm: Permutation,
        violation: Violation,
    },
}

impl AnonymityVerdict {
    pub fn is_closed(&self) -> bool {
        matches!(self, AnonymityVerdict::Closed { .. })
    }
}

/// Checks that `(H, F)` stays legal for `spec` when processes are relabelled.
///
/// For each `Π`, the relabelled pattern `F^Π = Π(F)` is paired with the
/// history whose row at `Π(p)` is the row of `p`, i.e. `H^{Π⁻¹}`. Ranging over
/// all `Π` this is the same family of checks as pairing `H^Π` with
/// `F^{Π⁻¹}`; the reported permutation is the one applied to the pattern.
pub fn is_anonymous<S: DetectorSpec>(
    spec: &S,
    f: &FailurePattern,
    h: &History<S::Value>,
    perms: &PermutationSource,
) -> Result<AnonymityVerdict, ModelError> {
    if let Verdict::Invalid(v) = spec.check(h, f)? {
        return Err(ModelError::InvalidInput(v));
    }
    let perms = perms.permutations(f.n());
    for pi in &perms {
        let fp = f.permuted(pi)?;
        let hp = h.permuted(&pi.inverse())?;
        if let Verdict::Invalid(violation) = spec.check(&hp, &fp)? {
            return Ok(AnonymityVerdict::Violated {
                perm: pi.clone(),
                violation,
            });
        }
    }
    Ok(AnonymityVerdict::Closed {
        checked: perms.len(),
    })
}
