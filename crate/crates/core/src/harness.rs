//! Scenario files, single runs, seed campaigns and exhaustive exploration,
//! with the check sets each protocol is judged by.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{Alg1, Alg1Mutant, Alg2, Alg2Mutant, Alg3, Alg3Mutant, ConsensusError};
use crate::detectors::{AnyHistory, DetectorError, DetectorKind, OracleProfile, PreConvergence};
use crate::model::{
    Environment, FailurePattern, ModelError, PermutationSource, ProcessId, SystemConfig, Time,
};
use crate::simulator::{
    self, Action, Bin, Delivery, EventKind, ExploreConfig, OracleSource, Payload, Protocol,
    RunConfig, SchedulerPolicy, SimError, Trace, TraceHeader,
};
use crate::transforms::{self, Alg4, Alg5, Alg5Mutant, NToTheta, ThetaToOmega, TransformError};
use crate::verify::{self, Check, CheckReport, Suite, Summary, Verdict, Witness};

pub const SCHEMA: u32 = 1;

/// Protocols a scenario can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Alg1,
    Alg2,
    Alg3,
    Alg4,
    Alg5,
    NToTheta,
    ThetaToOmega,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Alg1,
        Algorithm::Alg2,
        Algorithm::Alg3,
        Algorithm::Alg4,
        Algorithm::Alg5,
        Algorithm::NToTheta,
        Algorithm::ThetaToOmega,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Alg1 => "alg1",
            Algorithm::Alg2 => "alg2",
            Algorithm::Alg3 => "alg3",
            Algorithm::Alg4 => "alg4",
            Algorithm::Alg5 => "alg5",
            Algorithm::NToTheta => "n-to-theta",
            Algorithm::ThetaToOmega => "theta-to-omega",
        }
    }

    pub fn is_consensus(self) -> bool {
        matches!(self, Algorithm::Alg1 | Algorithm::Alg2 | Algorithm::Alg3)
    }

    /// Oracle kinds the protocol may consume; the first is the default.
    pub fn oracles(self) -> &'static [DetectorKind] {
        match self {
            Algorithm::Alg1 | Algorithm::Alg5 | Algorithm::NToTheta => &[DetectorKind::N],
            Algorithm::Alg2 | Algorithm::Alg4 => &[DetectorKind::DiamondN, DetectorKind::N],
            Algorithm::Alg3 | Algorithm::ThetaToOmega => &[DetectorKind::Theta],
        }
    }

    /// Detector emulated by a transformation.
    pub fn target(self) -> Option<DetectorKind> {
        match self {
            Algorithm::Alg4 => Some(DetectorKind::DiamondP),
            Algorithm::Alg5 => Some(DetectorKind::P),
            Algorithm::NToTheta => Some(DetectorKind::Theta),
            Algorithm::ThetaToOmega => Some(DetectorKind::Omega),
            _ => None,
        }
    }

    pub fn mutants(self) -> &'static [&'static str] {
        match self {
            Algorithm::Alg1 => &["min-instead-of-max"],
            Algorithm::Alg2 => &[
                "lock-without-unanimity",
                "decide-on-any-lock",
                "ignore-partial-lock",
            ],
            Algorithm::Alg3 => &["vote-without-majority"],
            Algorithm::Alg5 => &["drop-guard", "no-wait"],
            _ => &[],
        }
    }

    /// Whether runs never finish on their own and go on to the horizon.
    fn unbounded(self) -> bool {
        !self.is_consensus()
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Keyword {
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Inputs {
    Fixed(Vec<Bin>),
    /// Drawn from the run seed.
    Drawn(Keyword),
}

impl Default for Inputs {
    fn default() -> Self {
        Inputs::Drawn(Keyword::Random)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum CrashSpec {
    Fixed(BTreeMap<ProcessId, Time>),
    /// A member of the environment drawn from the run seed.
    Drawn(Keyword),
}

impl<'de> Deserialize<'de> for CrashSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) if s == "random" => Ok(CrashSpec::Drawn(Keyword::Random)),
            serde_json::Value::Object(m) => m
                .into_iter()
                .map(|(k, v)| {
                    let p = k
                        .parse::<u32>()
                        .ok()
                        .filter(|&i| i >= 1)
                        .map(ProcessId::new);
                    match (p, v.as_u64()) {
                        (Some(p), Some(t)) => Ok((p, t)),
                        _ => Err(D::Error::custom(format!(
                            "bad crash entry `{k}`: expected a process index >= 1 and a time"
                        ))),
                    }
                })
                .collect::<Result<_, _>>()
                .map(CrashSpec::Fixed),
            _ => Err(D::Error::custom(
                "expected a map from process index to crash time, or \"random\"",
            )),
        }
    }
}

impl Default for CrashSpec {
    fn default() -> Self {
        CrashSpec::Fixed(BTreeMap::new())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConvergenceSpec {
    Fixed(Time),
    /// Uniform in `[0, crash_window]`.
    Drawn(Keyword),
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        ConvergenceSpec::Fixed(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub kind: String,
    #[serde(default = "optimistic")]
    pub profile: PreConvergence,
    #[serde(default)]
    pub convergence_time: ConvergenceSpec,
}

fn optimistic() -> PreConvergence {
    PreConvergence::Optimistic
}

fn schema_version() -> u32 {
    SCHEMA
}

fn default_policy() -> String {
    "random".into()
}

/// Bounds for exhaustive exploration.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploreBounds {
    pub max_states: Option<usize>,
    pub max_depth: Option<usize>,
    /// Processes may only crash while their round is at most this.
    pub crash_until_round: Option<u32>,
}

/// A scenario file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "schema_version")]
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub algorithm: Algorithm,
    pub n: usize,
    pub f: usize,
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default)]
    pub crash: CrashSpec,
    /// Latest crash time (and drawn convergence time) for drawn patterns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crash_window: Option<Time>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSpec>,
    #[serde(default = "default_policy")]
    pub policy: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<Time>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_bound: Option<Time>,
    /// Transformations halt after this round.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<u32>,
    /// Forced ids for `n-to-theta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explore: Option<ExploreBounds>,
}

/// A rejected configuration, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: &str, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

impl HarnessError {
    /// Whether the error is the user's input rather than a harness fault.
    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config(_))
    }
}

/// Default step budget: generous enough for `f + 2` rounds of all-to-all
/// traffic with slack for adversarial schedules.
pub fn default_horizon(n: usize, f: usize) -> Time {
    50 * (f as Time + 2) * n as Time * (n as Time + 1)
}

impl Scenario {
    pub fn new(algorithm: Algorithm, n: usize, f: usize) -> Self {
        Scenario {
            schema: SCHEMA,
            name: None,
            algorithm,
            n,
            f,
            inputs: Inputs::default(),
            crash: CrashSpec::default(),
            crash_window: None,
            oracle: None,
            policy: default_policy(),
            seed: 0,
            horizon: None,
            age_bound: None,
            max_rounds: None,
            ids: None,
            mutant: None,
            explore: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let sc: Scenario = parse_json(text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn config(&self) -> Result<SystemConfig, ConfigError> {
        SystemConfig::new(self.n, self.f).map_err(|_| {
            if self.n == 0 {
                ConfigError::new("n", "need at least one process")
            } else {
                ConfigError::new(
                    "f",
                    format!("need f < n, got f = {} with n = {}", self.f, self.n),
                )
            }
        })
    }

    pub fn horizon(&self) -> Time {
        self.horizon
            .unwrap_or_else(|| default_horizon(self.n, self.f))
    }

    pub fn crash_window(&self) -> Time {
        self.crash_window
            .unwrap_or_else(|| (self.horizon() / 20).max(1))
    }

    pub fn policy(&self) -> Result<SchedulerPolicy, ConfigError> {
        self.policy
            .parse()
            .map_err(|e: String| ConfigError::new("policy", e))
    }

    pub fn oracle_kind(&self) -> Result<DetectorKind, ConfigError> {
        match &self.oracle {
            None => Ok(self.algorithm.oracles()[0]),
            Some(o) => o
                .kind
                .parse()
                .map_err(|e: DetectorError| ConfigError::new("oracle.kind", e.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SCHEMA {
            return Err(ConfigError::new(
                "schema",
                format!("unsupported schema {}, expected {SCHEMA}", self.schema),
            ));
        }
        let cfg = self.config()?;
        if matches!(self.algorithm, Algorithm::Alg2 | Algorithm::Alg3) && cfg.n <= 2 * cfg.f {
            return Err(ConfigError::new(
                "f",
                format!("{} needs n > 2f", self.algorithm),
            ));
        }
        if let Inputs::Fixed(v) = &self.inputs {
            if v.len() != cfg.n {
                return Err(ConfigError::new(
                    "inputs",
                    format!("expected {} values, got {}", cfg.n, v.len()),
                ));
            }
            if v.iter().any(|&x| x > 1) {
                return Err(ConfigError::new("inputs", "values must be 0 or 1"));
            }
        }
        if let CrashSpec::Fixed(m) = &self.crash {
            FailurePattern::new(cfg.n, m.clone())
                .and_then(|p| p.validate_for(&cfg))
                .map_err(|e| ConfigError::new("crash", e.to_string()))?;
        }
        let kind = self.oracle_kind()?;
        if !self.algorithm.oracles().contains(&kind) {
            let allowed: Vec<_> = self.algorithm.oracles().iter().map(|k| k.name()).collect();
            return Err(ConfigError::new(
                "oracle.kind",
                format!(
                    "{} cannot run with {kind}; allowed: {}",
                    self.algorithm,
                    allowed.join(", ")
                ),
            ));
        }
        if let Some(OracleSpec {
            convergence_time: ConvergenceSpec::Fixed(t),
            ..
        }) = &self.oracle
        {
            if *t > self.horizon() {
                return Err(ConfigError::new(
                    "oracle.convergence_time",
                    format!("{t} exceeds the horizon {}", self.horizon()),
                ));
            }
        }
        if self.crash_window() > self.horizon() {
            return Err(ConfigError::new("crash_window", "exceeds the horizon"));
        }
        self.policy()?;
        if let Some(m) = &self.mutant {
            if !self.algorithm.mutants().contains(&m.as_str()) {
                return Err(ConfigError::new(
                    "mutant",
                    format!("`{m}` is not a mutant of {}", self.algorithm),
                ));
            }
        }
        if self.max_rounds.is_some() && self.algorithm.is_consensus() {
            return Err(ConfigError::new(
                "max_rounds",
                "only transformations take a round bound",
            ));
        }
        if let Some(ids) = &self.ids {
            if self.algorithm != Algorithm::NToTheta {
                return Err(ConfigError::new("ids", "only n-to-theta takes forced ids"));
            }
            if ids.len() != cfg.n {
                return Err(ConfigError::new(
                    "ids",
                    format!("expected {} ids, got {}", cfg.n, ids.len()),
                ));
            }
        }
        Ok(())
    }

    /// Fixes everything a run needs from the scenario and a seed.
    pub fn resolve(&self, seed: u64) -> Result<Resolved, HarnessError> {
        self.validate()?;
        let cfg = self.config()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce7_a710);
        let mut inputs_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
        let mut crash_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
        let oracle_seed = rng.next_u64();
        let horizon = self.horizon();
        let window = self.crash_window();
        let inputs = match &self.inputs {
            Inputs::Fixed(v) => v.clone(),
            Inputs::Drawn(_) => (0..cfg.n).map(|_| inputs_rng.gen_range(0..=1)).collect(),
        };
        let pattern = match &self.crash {
            CrashSpec::Fixed(m) => FailurePattern::new(cfg.n, m.clone())?,
            CrashSpec::Drawn(_) => Environment::at_most_f(cfg).sample(&mut crash_rng, window),
        };
        let kind = self.oracle_kind()?;
        let (pre, conv) = match &self.oracle {
            None => (PreConvergence::Optimistic, 0),
            Some(o) => (
                o.profile,
                match o.convergence_time {
                    ConvergenceSpec::Fixed(t) => t,
                    ConvergenceSpec::Drawn(_) => crash_rng.gen_range(0..=window),
                },
            ),
        };
        let profile = OracleProfile::new(conv, pre);
        let oracle = AnyHistory::sample(kind, &pattern, &profile, horizon, oracle_seed)?;
        Ok(Resolved {
            scenario: self.clone(),
            cfg,
            seed,
            inputs,
            pattern,
            oracle,
            profile,
            policy: self.policy()?,
            horizon,
            age_bound: self.age_bound.unwrap_or(horizon),
        })
    }
}

/// Parses JSON, reporting failures with the path of the offending field.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let msg = e.inner().to_string();
        let path = e.path().to_string();
        let named = ["unknown field `", "missing field `"].iter().find_map(|m| {
            msg.split(m)
                .nth(1)
                .and_then(|r| r.split('`').next())
                .map(String::from)
        });
        let field = match (path.as_str(), named) {
            (".", Some(f)) => f,
            (_, Some(f)) if msg.starts_with("missing") => format!("{path}.{f}"),
            (".", None) => "(document)".into(),
            _ => path,
        };
        ConfigError::new(&field, msg)
    })
}

/// A scenario with its drawn parameters fixed.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub scenario: Scenario,
    pub cfg: SystemConfig,
    pub seed: u64,
    pub inputs: Vec<Bin>,
    pub pattern: FailurePattern,
    pub oracle: AnyHistory,
    pub profile: OracleProfile,
    pub policy: SchedulerPolicy,
    pub horizon: Time,
    pub age_bound: Time,
}

impl Resolved {
    pub fn header(&self) -> TraceHeader {
        TraceHeader {
            algorithm: self.scenario.algorithm.name().into(),
            n: self.cfg.n,
            f: self.cfg.f,
            inputs: self.inputs.clone(),
            crash: self.pattern.crash_times().clone(),
            oracle: format!(
                "{}/{}@{}",
                self.oracle.kind(),
                serde_json::to_value(self.profile.pre)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default(),
                self.profile.effective_convergence(&self.pattern)
            ),
            policy: self.policy.name().into(),
            seed: self.seed,
            horizon: self.horizon,
            identified: self.scenario.algorithm.target().is_some()
                && self.scenario.algorithm != Algorithm::NToTheta,
        }
    }
}

/// Something generic over protocols, applied to the protocol a scenario
/// names.
pub trait ProtocolTask {
    type Output;
    fn apply<P: Protocol>(self, protocol: &P) -> Self::Output;
}

/// Instantiates the scenario's protocol (and mutant) and hands it to `task`.
pub fn with_protocol<T: ProtocolTask>(
    sc: &Scenario,
    max_rounds: Option<u32>,
    task: T,
) -> Result<T::Output, HarnessError> {
    let cfg = sc.config()?;
    let mutant = sc.mutant.as_deref();
    let consensus = |e: ConsensusError| ConfigError::new("f", e.to_string());
    Ok(match sc.algorithm {
        Algorithm::Alg1 => match mutant {
            Some(_) => task.apply(&Alg1::mutated(cfg, Alg1Mutant::MinInsteadOfMax)),
            None => task.apply(&Alg1::new(cfg)),
        },
        Algorithm::Alg2 => {
            let p = match mutant {
                Some("lock-without-unanimity") => {
                    Alg2::mutated(cfg, Alg2Mutant::LockWithoutUnanimity)
                }
                Some("decide-on-any-lock") => Alg2::mutated(cfg, Alg2Mutant::DecideOnAnyLock),
                Some(_) => Alg2::mutated(cfg, Alg2Mutant::IgnorePartialLock),
                None => Alg2::new(cfg),
            };
            task.apply(&p.map_err(consensus)?)
        }
        Algorithm::Alg3 => {
            let p = match mutant {
                Some(_) => Alg3::mutated(cfg, Alg3Mutant::VoteWithoutMajority),
                None => Alg3::new(cfg),
            };
            task.apply(&p.map_err(consensus)?)
        }
        Algorithm::Alg4 => {
            task.apply(&Alg4::new(cfg, Delivery::Identified)?.with_max_rounds(max_rounds))
        }
        Algorithm::Alg5 => {
            let p = match mutant {
                Some("drop-guard") => {
                    Alg5::mutated(cfg, Delivery::Identified, Alg5Mutant::DropGuard)?
                }
                Some(_) => Alg5::mutated(cfg, Delivery::Identified, Alg5Mutant::NoWait)?,
                None => Alg5::new(cfg, Delivery::Identified)?,
            };
            task.apply(&p.with_max_rounds(max_rounds))
        }
        Algorithm::NToTheta => {
            let mut p = NToTheta::new(cfg, Delivery::Anonymous)?.with_max_rounds(max_rounds);
            if let Some(ids) = &sc.ids {
                p = p.with_ids(ids.clone())?;
            }
            task.apply(&p)
        }
        Algorithm::ThetaToOmega => task.apply(&ThetaToOmega::new(cfg, Delivery::Identified)?),
    })
}

struct RunTask<'a> {
    resolved: &'a Resolved,
}

impl ProtocolTask for RunTask<'_> {
    type Output = Result<Trace, SimError>;

    fn apply<P: Protocol>(self, protocol: &P) -> Self::Output {
        let r = self.resolved;
        let mut rc = RunConfig::new(r.horizon, r.policy, r.seed);
        rc.age_bound = r.age_bound;
        simulator::run(
            protocol,
            r.cfg,
            &r.inputs,
            &r.pattern,
            OracleSource::Table(r.oracle.clone()),
            &rc,
            r.header(),
        )
    }
}

/// Outcome of one run: the trace and every check on it.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub resolved: Resolved,
    pub trace: Trace,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub n: usize,
    pub f: usize,
    pub end_step: Time,
    pub truncated: bool,
    pub checks: Vec<CheckReport>,
    /// No check failed.
    pub passed: bool,
}

impl RunReport {
    pub fn failed_properties(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| c.failed())
            .map(|c| c.property.as_str())
            .collect()
    }
}

pub fn run_scenario(sc: &Scenario, seed: u64) -> Result<RunOutcome, HarnessError> {
    let resolved = sc.resolve(seed)?;
    let trace = with_protocol(
        sc,
        sc.max_rounds,
        RunTask {
            resolved: &resolved,
        },
    )??;
    let checks = check_trace(&trace)?;
    let report = RunReport {
        algorithm: sc.algorithm,
        seed,
        n: resolved.cfg.n,
        f: resolved.cfg.f,
        end_step: trace.end.step,
        truncated: trace.truncated(),
        passed: !checks.iter().any(CheckReport::failed),
        checks,
    };
    Ok(RunOutcome {
        resolved,
        trace,
        report,
    })
}

/// Every check that applies to a recorded trace, as determined by its
/// header: trace integrity, then consensus properties or the emulated
/// history's validity, then protocol invariants.
pub fn check_trace(trace: &Trace) -> Result<Vec<CheckReport>, HarnessError> {
    let h = &trace.header;
    let algorithm: Algorithm = h
        .algorithm
        .parse()
        .map_err(|e: String| ConfigError::new("algorithm", e))?;
    let pattern = FailurePattern::new(h.n, h.crash.clone())?;
    let mut reports = verify::check_trace_integrity(trace, &pattern);
    if algorithm.is_consensus() {
        reports.extend(verify::check_consensus(trace, &h.inputs));
    }
    if let Some(target) = algorithm.target() {
        let out = transforms::output_history(trace, target)?;
        reports.push(verify::check_history_any(&out, &pattern)?);
        if target.is_anonymous_class() && h.n <= crate::model::EXHAUSTIVE_PERMUTATION_LIMIT {
            reports.push(verify::check_permutation_closure_any(
                &out,
                &pattern,
                &PermutationSource::Exhaustive,
            )?);
        }
    }
    if algorithm == Algorithm::NToTheta {
        reports.push(distinct_ids(trace));
    }
    let invariants = verify::invariant_checks(algorithm.name(), h.n, h.f);
    if !invariants.is_empty() {
        reports.extend(Suite::new(invariants).run(trace));
    }
    Ok(reports)
}

/// Heartbeat ids as seen on the wire; equal ids at two processes mean the
/// reduction cannot single out one self-truster.
fn distinct_ids(trace: &Trace) -> CheckReport {
    let mut ids: BTreeMap<ProcessId, (u64, usize)> = BTreeMap::new();
    for (i, e) in trace.events.iter().enumerate() {
        if let EventKind::Send {
            p,
            payload: Payload::Heartbeat { id, .. },
            ..
        } = e.kind
        {
            ids.entry(p).or_insert((id, i));
        }
    }
    let mut seen: BTreeMap<u64, (ProcessId, usize)> = BTreeMap::new();
    for (&p, &(id, i)) in &ids {
        if let Some(&(q, j)) = seen.get(&id) {
            return CheckReport::fail(
                "distinct-ids",
                vec![Witness::Event(j), Witness::Event(i)],
                format!("{q} and {p} drew the same id {id}"),
            );
        }
        seen.insert(id, (p, i));
    }
    CheckReport::pass("distinct-ids")
}

/// Seeds `start .. start + count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRange {
    pub start: u64,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Single,
    #[default]
    Sweep,
    Explore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioRef {
    Inline(Box<Scenario>),
    /// Path relative to the campaign file.
    Path(String),
}

/// A campaign file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSpec {
    #[serde(default = "schema_version")]
    pub schema: u32,
    pub scenario: ScenarioRef,
    pub seeds: SeedRange,
    #[serde(default)]
    pub mode: Mode,
    /// Only report these properties; all by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

impl CampaignSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SCHEMA {
            return Err(ConfigError::new(
                "schema",
                format!("unsupported schema {}, expected {SCHEMA}", self.schema),
            ));
        }
        if self.seeds.count == 0 {
            return Err(ConfigError::new("seeds.count", "seed range is empty"));
        }
        if self.seeds.start.checked_add(self.seeds.count).is_none() {
            return Err(ConfigError::new("seeds", "seed range overflows"));
        }
        if self.mode == Mode::Single && self.seeds.count != 1 {
            return Err(ConfigError::new(
                "seeds.count",
                "single mode runs exactly one seed",
            ));
        }
        Ok(())
    }
}

/// One failing run of a campaign, with the command that reproduces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignFailure {
    pub seed: u64,
    pub properties: Vec<String>,
    pub repro: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub algorithm: Algorithm,
    pub n: usize,
    pub f: usize,
    pub seeds: SeedRange,
    pub summary: Summary,
    pub truncated: usize,
    pub failures: Vec<CampaignFailure>,
    /// For the randomized reduction: fraction of runs whose emitted history
    /// is a legal `Θ` history with distinct ids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub successes: Option<u64>,
}

impl CampaignSummary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs every seed in parallel on `jobs` workers (all cores when `None`) and
/// merges the reports in seed order. `repro` renders the reproduction
/// command for a seed.
pub fn run_campaign(
    sc: &Scenario,
    seeds: SeedRange,
    checks: Option<&[String]>,
    jobs: Option<usize>,
    repro: &(dyn Fn(u64) -> String + Sync),
) -> Result<(CampaignSummary, Vec<RunReport>), HarnessError> {
    sc.validate()?;
    if seeds.count == 0 {
        return Err(ConfigError::new("seeds.count", "seed range is empty").into());
    }
    let work = || -> Result<Vec<RunReport>, HarnessError> {
        (seeds.start..seeds.start + seeds.count)
            .into_par_iter()
            .map(|seed| {
                let mut report = run_scenario(sc, seed)?.report;
                if let Some(keep) = checks {
                    report.checks.retain(|c| keep.contains(&c.property));
                    report.passed = !report.checks.iter().any(CheckReport::failed);
                }
                Ok(report)
            })
            .collect()
    };
    let reports = match jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .expect("building the worker pool")
            .install(work)?,
        None => work()?,
    };
    let mut summary = Summary::default();
    let mut failures = Vec::new();
    let mut truncated = 0;
    let mut successes = 0u64;
    for r in &reports {
        summary.add(&r.checks);
        truncated += r.truncated as usize;
        if !r.passed {
            failures.push(CampaignFailure {
                seed: r.seed,
                properties: r
                    .failed_properties()
                    .into_iter()
                    .map(String::from)
                    .collect(),
                repro: repro(r.seed),
            });
        }
        let ok = |p: &str| {
            r.checks
                .iter()
                .any(|c| c.property == p && c.verdict == Verdict::Pass)
        };
        successes += (ok("valid-Theta") && ok("distinct-ids")) as u64;
    }
    let theta = sc.algorithm == Algorithm::NToTheta;
    Ok((
        CampaignSummary {
            algorithm: sc.algorithm,
            n: sc.n,
            f: sc.f,
            seeds,
            summary,
            truncated,
            failures,
            success_rate: theta.then(|| successes as f64 / seeds.count as f64),
            successes: theta.then_some(successes),
        },
        reports,
    ))
}

pub const EXPLORE_MAX_N: usize = 3;

#[derive(Debug, Clone, Serialize)]
pub struct ExploreFinding {
    pub message: String,
    pub schedule: Vec<Action>,
    #[serde(skip)]
    pub trace: Trace,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExploreRun {
    pub inputs: Vec<Bin>,
    pub states: usize,
    pub traces: u128,
    pub truncated: u128,
    pub complete: bool,
    pub violations: Vec<ExploreFinding>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExploreSummary {
    pub algorithm: Algorithm,
    pub n: usize,
    pub f: usize,
    pub max_rounds: Option<u32>,
    pub crash_until_round: Option<u32>,
    pub properties: Vec<String>,
    pub runs: Vec<ExploreRun>,
}

impl ExploreSummary {
    pub fn passed(&self) -> bool {
        self.runs.iter().all(|r| r.violations.is_empty())
    }

    /// Every search finished within its budgets.
    pub fn complete(&self) -> bool {
        self.runs.iter().all(|r| r.complete)
    }

    /// Saturates at `u128::MAX`; see [`ExploreSummary::traces_saturated`].
    pub fn traces(&self) -> u128 {
        self.runs
            .iter()
            .fold(0u128, |a, r| a.saturating_add(r.traces))
    }

    /// The schedule count overflowed and is a lower bound.
    pub fn traces_saturated(&self) -> bool {
        self.traces() == u128::MAX
    }

    /// Some search stopped at its violation limit rather than a budget.
    pub fn stopped_at_violation(&self) -> bool {
        self.runs
            .iter()
            .any(|r| !r.complete && !r.violations.is_empty())
    }

    pub fn states(&self) -> usize {
        self.runs.iter().map(|r| r.states).sum()
    }
}

/// Checks folded into exploration states for a protocol.
pub fn explore_suite(algorithm: Algorithm, n: usize, f: usize, inputs: &[Bin]) -> Suite {
    let mut suite = if algorithm.is_consensus() {
        verify::consensus_suite(n, inputs)
    } else {
        Suite::new(Vec::new())
    };
    for c in verify::invariant_checks(algorithm.name(), n, f) {
        suite.push(c);
    }
    suite
}

struct ExploreTask<'a> {
    config: &'a ExploreConfig,
    suite: Suite,
    header: TraceHeader,
}

impl ProtocolTask for ExploreTask<'_> {
    type Output = Result<simulator::ExploreReport, SimError>;

    fn apply<P: Protocol>(self, protocol: &P) -> Self::Output {
        simulator::explore(protocol, self.config, self.suite, self.header)
    }
}

/// Explores every schedule and crash placement of a small scenario, for
/// each binary input vector unless the scenario fixes one. Protocols that
/// never stop are cut at a round bound chosen so that the detector
/// properties have settled by the last round.
pub fn explore_scenario(sc: &Scenario) -> Result<ExploreSummary, HarnessError> {
    explore_scenario_with(sc, None)
}

/// Like [`explore_scenario`], monitoring only the named properties. With a
/// single property the search runs until that one fails rather than
/// stopping at whichever check trips first.
pub fn explore_scenario_with(
    sc: &Scenario,
    only: Option<&[String]>,
) -> Result<ExploreSummary, HarnessError> {
    sc.validate()?;
    if let Some(names) = only {
        let known = explore_suite(sc.algorithm, sc.n, sc.f, &vec![0; sc.n]);
        if let Some(bad) = names
            .iter()
            .find(|k| !known.checks().iter().any(|c| c.property() == k.as_str()))
        {
            return Err(ConfigError::new(
                "checks",
                format!("{bad} is not monitored for {}", sc.algorithm),
            )
            .into());
        }
    }
    if sc.n > EXPLORE_MAX_N {
        return Err(ConfigError::new(
            "n",
            format!("exploration supports n <= {EXPLORE_MAX_N}, got {}", sc.n),
        )
        .into());
    }
    if sc.oracle_kind()? == DetectorKind::Theta {
        return Err(ConfigError::new(
            "algorithm",
            format!(
                "{} needs a Θ oracle; exploration drives crash-count oracles only",
                sc.algorithm
            ),
        )
        .into());
    }
    if let CrashSpec::Fixed(m) = &sc.crash {
        if !m.is_empty() {
            return Err(ConfigError::new(
                "crash",
                "exploration places crashes itself; leave `crash` empty",
            )
            .into());
        }
    }
    let cfg = sc.config()?;
    let bounds = sc.explore.clone().unwrap_or_default();
    let crash_until_round = bounds
        .crash_until_round
        .or((sc.algorithm.unbounded()).then_some(2));
    let max_rounds = sc.max_rounds.or_else(|| {
        let c = crash_until_round.unwrap_or(2);
        match sc.algorithm {
            Algorithm::Alg5 => Some(c + cfg.f as u32 + 3),
            Algorithm::Alg4 | Algorithm::NToTheta => Some(c + 2),
            _ => None,
        }
    });
    let vectors: Vec<Vec<Bin>> = match &sc.inputs {
        Inputs::Fixed(v) => vec![v.clone()],
        Inputs::Drawn(_) if sc.algorithm.is_consensus() => (0..1u32 << cfg.n)
            .map(|m| (0..cfg.n).map(|i| ((m >> i) & 1) as Bin).collect())
            .collect(),
        Inputs::Drawn(_) => vec![vec![0; cfg.n]],
    };
    let mut runs = Vec::new();
    let mut properties = Vec::new();
    for inputs in vectors {
        let mut config = ExploreConfig::new(cfg, inputs.clone());
        config.seed = sc.seed;
        config.crash_until_round = crash_until_round;
        if let Some(s) = bounds.max_states {
            config.max_states = s;
        }
        if let Some(d) = bounds.max_depth {
            config.max_depth = d;
        }
        let mut suite = explore_suite(sc.algorithm, cfg.n, cfg.f, &inputs);
        if let Some(names) = only {
            suite = Suite::new(
                suite
                    .checks()
                    .iter()
                    .filter(|c| names.iter().any(|k| k == c.property()))
                    .cloned()
                    .collect(),
            );
        }
        properties = suite
            .checks()
            .iter()
            .map(|c| c.property().to_string())
            .collect();
        let header = TraceHeader {
            algorithm: sc.algorithm.name().into(),
            n: cfg.n,
            f: cfg.f,
            inputs: inputs.clone(),
            crash: BTreeMap::new(),
            oracle: "crash-count".into(),
            policy: "explore".into(),
            seed: sc.seed,
            horizon: 0,
            identified: matches!(sc.algorithm, Algorithm::Alg4 | Algorithm::Alg5),
        };
        let report = with_protocol(
            sc,
            max_rounds,
            ExploreTask {
                config: &config,
                suite,
                header,
            },
        )??;
        runs.push(ExploreRun {
            inputs,
            states: report.states,
            traces: report.traces,
            truncated: report.truncated,
            complete: report.complete,
            violations: report
                .violations
                .into_iter()
                .map(|v| ExploreFinding {
                    message: v.message,
                    schedule: v.schedule,
                    trace: v.trace,
                })
                .collect(),
        });
    }
    Ok(ExploreSummary {
        algorithm: sc.algorithm,
        n: cfg.n,
        f: cfg.f,
        max_rounds,
        crash_until_round,
        properties,
        runs,
    })
}

/// Crash sets reachable in a set of traces; used to report coverage.
pub fn crash_sets(traces: &[Trace]) -> BTreeSet<BTreeSet<ProcessId>> {
    traces.iter().map(|t| t.end.crashed.clone()).collect()
}

/// Extra checks by property name, for callers assembling custom suites.
pub fn named_check(name: &str, n: usize, f: usize, inputs: &[Bin]) -> Option<Check> {
    Some(match name {
        "termination" => Check::termination(n),
        "integrity" => Check::integrity(),
        "agreement" => Check::agreement(),
        "validity" => Check::validity(inputs),
        "stubbornness" => Check::stubbornness(),
        "lock-exclusivity" => Check::lock_exclusivity(),
        "decision-spread" => Check::decision_spread(),
        "unique-decide" => Check::unique_decide(),
        "round-skew" => Check::round_skew(n, f),
        "strong-accuracy" => Check::strong_accuracy(),
        "strong-completeness" => Check::final_completeness(n),
        "eventual-strong-accuracy" => Check::final_accuracy(n),
        "eventual-self-trust" => Check::final_self_trust(n),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(json: &str) -> Result<Scenario, ConfigError> {
        Scenario::from_json(json)
    }

    #[test]
    fn parses_minimal_scenario_with_defaults() {
        let sc = scenario(r#"{"algorithm": "alg1", "n": 3, "f": 1}"#).unwrap();
        assert_eq!(sc.inputs, Inputs::Drawn(Keyword::Random));
        assert_eq!(sc.oracle_kind().unwrap(), DetectorKind::N);
        assert_eq!(sc.horizon(), 50 * 3 * 3 * 4);
    }

    #[test]
    fn rejections_name_the_field() {
        assert_eq!(
            scenario(r#"{"algorithm": "alg1", "n": 3, "f": 3}"#)
                .unwrap_err()
                .field,
            "f"
        );
        assert_eq!(
            scenario(r#"{"algorithm": "alg3", "n": 3, "f": 1, "oracle": {"kind": "N"}}"#)
                .unwrap_err()
                .field,
            "oracle.kind"
        );
        assert_eq!(
            scenario(r#"{"algorithm": "alg1", "n": 3, "f": 1, "bogus": 1}"#)
                .unwrap_err()
                .field,
            "bogus"
        );
        assert_eq!(
            scenario(r#"{"algorithm": "alg1", "n": 3}"#)
                .unwrap_err()
                .field,
            "f"
        );
        assert_eq!(
            scenario(r#"{"algorithm": "alg1", "n": 2, "f": 1, "inputs": [0, 2]}"#)
                .unwrap_err()
                .field,
            "inputs"
        );
        assert_eq!(
            scenario(r#"{"algorithm": "alg2", "n": 4, "f": 2}"#)
                .unwrap_err()
                .field,
            "f"
        );
        assert_eq!(
            scenario(r#"{"algorithm": "alg1", "n": 2, "f": 1, "mutant": "drop-guard"}"#)
                .unwrap_err()
                .field,
            "mutant"
        );
        assert_eq!(
            scenario(r#"{"algorithm": "alg1", "n": 3, "f": 1, "crash": {"1": 0, "2": 0}}"#)
                .unwrap_err()
                .field,
            "crash"
        );
        assert_eq!(
            scenario(r#"{"schema": 2, "algorithm": "alg1", "n": 3, "f": 1}"#)
                .unwrap_err()
                .field,
            "schema"
        );
    }

    #[test]
    fn resolution_is_deterministic() {
        let mut sc = Scenario::new(Algorithm::Alg2, 5, 2);
        sc.crash = CrashSpec::Drawn(Keyword::Random);
        sc.oracle = Some(OracleSpec {
            kind: "DiamondN".into(),
            profile: PreConvergence::AdversarialRandom,
            convergence_time: ConvergenceSpec::Drawn(Keyword::Random),
        });
        let a = sc.resolve(11).unwrap();
        let b = sc.resolve(11).unwrap();
        assert_eq!(
            (a.inputs.clone(), a.pattern.clone(), a.oracle.clone()),
            (b.inputs, b.pattern, b.oracle)
        );
        assert!(a.oracle.check(&a.pattern).unwrap().is_valid());
    }

    #[test]
    fn run_checks_pass_for_alg1() {
        let mut sc = Scenario::new(Algorithm::Alg1, 3, 1);
        sc.crash = CrashSpec::Drawn(Keyword::Random);
        for seed in 0..10 {
            let out = run_scenario(&sc, seed).unwrap();
            assert!(out.report.passed, "{:?}", out.report.checks);
            let props: Vec<_> = out
                .report
                .checks
                .iter()
                .map(|c| c.property.as_str())
                .collect();
            assert!(
                props.contains(&"agreement")
                    && props.contains(&"stubbornness")
                    && props.contains(&"reliability")
            );
        }
    }

    #[test]
    fn campaign_collects_repro_lines() {
        let mut sc = Scenario::new(Algorithm::Alg1, 2, 0);
        sc.inputs = Inputs::Fixed(vec![1, 0]);
        sc.mutant = Some("min-instead-of-max".into());
        let (summary, reports) =
            run_campaign(&sc, SeedRange { start: 0, count: 4 }, None, Some(2), &|s| {
                format!("anonfd run x.json --seed {s}")
            })
            .unwrap();
        assert_eq!(reports.len(), 4);
        assert!(!summary.failures.is_empty());
        assert!(summary.failures[0]
            .repro
            .ends_with(&format!("--seed {}", summary.failures[0].seed)));
        assert!(summary.failures[0]
            .properties
            .contains(&"stubbornness".to_string()));
    }

    #[test]
    fn explore_guards() {
        let sc = Scenario::new(Algorithm::Alg1, 4, 1);
        assert!(explore_scenario(&sc).unwrap_err().is_config());
        let sc = Scenario::new(Algorithm::Alg3, 3, 1);
        assert!(explore_scenario(&sc).unwrap_err().is_config());
    }

    #[test]
    fn explore_alg1_two_processes() {
        let sc = Scenario::new(Algorithm::Alg1, 2, 1);
        let s = explore_scenario(&sc).unwrap();
        assert_eq!(s.runs.len(), 4);
        assert!(s.passed() && s.complete());
        assert!(s.traces() > 4);
    }
}
