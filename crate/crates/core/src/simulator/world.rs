use std::collections::BTreeSet;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::trace::{EndReason, Event, EventKind, Trace, TraceEnd, TraceHeader};
use super::{Automaton, Bin, Ctx, Effect, Payload, ProcessInit, Protocol};
use crate::detectors::{AnyHistory, DetectorValue};
use crate::model::{FailurePattern, ModelError, ProcessId, SystemConfig, Time};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("expected {expected} inputs, got {found}")]
    InputLength { expected: usize, found: usize },
    #[error("inputs must be 0 or 1")]
    NonBinaryInput,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("oracle history covers {found} processes, system has {expected}")]
    OracleSize { expected: usize, found: usize },
    #[error("{0} reported ready but made no progress")]
    NoProgress(ProcessId),
}

/// Whether receivers learn who sent a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delivery {
    Anonymous,
    Identified,
}

/// A message copy in flight to one receiver.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Envelope {
    pub to: ProcessId,
    pub from: Option<ProcessId>,
    pub payload: Payload,
    pub id: u64,
    pub sent: Time,
    /// Sender in the global view, kept even when receivers cannot see it.
    pub origin: ProcessId,
}

/// Where detector readings come from.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleSource {
    /// A pre-drawn history revealed cell by cell.
    Table(AnyHistory),
    /// Exact number of processes crashed so far. Used when crashes are
    /// chosen on the fly, as in exploration.
    CrashCount,
}

impl OracleSource {
    fn query(&self, p: ProcessId, t: Time, crashed_so_far: usize) -> DetectorValue {
        match self {
            OracleSource::Table(h) => h.get(p, t),
            OracleSource::CrashCount => DetectorValue::Count(crashed_so_far as u32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    /// Deliver the pending envelope at this index.
    Deliver(usize),
    Step(ProcessId),
    Crash(ProcessId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerPolicy {
    /// Deliver in send order; step processes only when nothing is in flight.
    Fifo,
    /// Uniform choice among all enabled deliveries and steps.
    Random,
    /// Messages of processes that crash are delivered first, ready
    /// processes step eagerly, everything else is delayed at random.
    CrashAdjacent,
}

impl SchedulerPolicy {
    pub fn name(self) -> &'static str {
        match self {
            SchedulerPolicy::Fifo => "fifo",
            SchedulerPolicy::Random => "random",
            SchedulerPolicy::CrashAdjacent => "crash-adjacent",
        }
    }
}

impl std::str::FromStr for SchedulerPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fifo" => Ok(SchedulerPolicy::Fifo),
            "random" => Ok(SchedulerPolicy::Random),
            "crash-adjacent" => Ok(SchedulerPolicy::CrashAdjacent),
            other => Err(format!(
                "unknown policy `{other}` (expected fifo, random or crash-adjacent)"
            )),
        }
    }
}

/// Global state of a simulated system.
#[derive(Debug, Clone)]
pub struct World<A> {
    cfg: SystemConfig,
    nodes: Vec<A>,
    crashed: Vec<bool>,
    halted: Vec<bool>,
    pending: Vec<Envelope>,
    delivery: Delivery,
    /// Exploration mode: message identity and timing are erased, in-flight
    /// messages are kept sorted and deliveries without effect are dropped.
    canonical: bool,
    oracle: OracleSource,
    time: Time,
    next_msg: u64,
}

impl<A: Automaton> World<A> {
    pub fn new<P: Protocol<Node = A>>(
        protocol: &P,
        cfg: SystemConfig,
        inputs: &[Bin],
        seed: u64,
        oracle: OracleSource,
        canonical: bool,
    ) -> Result<Self, SimError> {
        Self::with_seeds(
            protocol,
            cfg,
            inputs,
            &derive_seeds(seed, cfg.n),
            oracle,
            canonical,
        )
    }

    pub fn with_seeds<P: Protocol<Node = A>>(
        protocol: &P,
        cfg: SystemConfig,
        inputs: &[Bin],
        seeds: &[u64],
        oracle: OracleSource,
        canonical: bool,
    ) -> Result<Self, SimError> {
        if inputs.len() != cfg.n {
            return Err(SimError::InputLength {
                expected: cfg.n,
                found: inputs.len(),
            });
        }
        if inputs.iter().any(|&v| v > 1) {
            return Err(SimError::NonBinaryInput);
        }
        if let OracleSource::Table(h) = &oracle {
            if h.n() != cfg.n {
                return Err(SimError::OracleSize {
                    expected: cfg.n,
                    found: h.n(),
                });
            }
        }
        let identified = protocol.identified();
        let nodes = cfg
            .processes()
            .map(|p| {
                protocol.spawn(ProcessInit {
                    input: inputs[p.idx()],
                    identity: identified.then_some(p),
                    seed: seeds[p.idx()],
                    index: p.idx(),
                })
            })
            .collect();
        Ok(World {
            cfg,
            nodes,
            crashed: vec![false; cfg.n],
            halted: vec![false; cfg.n],
            pending: Vec::new(),
            delivery: if identified {
                Delivery::Identified
            } else {
                Delivery::Anonymous
            },
            canonical,
            oracle,
            time: 0,
            next_msg: 0,
        })
    }

    pub fn config(&self) -> SystemConfig {
        self.cfg
    }

    pub fn time(&self) -> Time {
        self.time
    }

    pub fn node(&self, p: ProcessId) -> &A {
        &self.nodes[p.idx()]
    }

    pub fn nodes(&self) -> &[A] {
        &self.nodes
    }

    pub fn pending(&self) -> &[Envelope] {
        &self.pending
    }

    pub fn is_crashed(&self, p: ProcessId) -> bool {
        self.crashed[p.idx()]
    }

    pub fn is_halted(&self, p: ProcessId) -> bool {
        self.halted[p.idx()]
    }

    pub fn crashed_set(&self) -> BTreeSet<ProcessId> {
        self.cfg
            .processes()
            .filter(|&p| self.is_crashed(p))
            .collect()
    }

    pub fn crashed_count(&self) -> usize {
        self.crashed.iter().filter(|&&c| c).count()
    }

    pub fn reading(&self, p: ProcessId) -> DetectorValue {
        self.oracle.query(p, self.time, self.crashed_count())
    }

    fn can_step(&self, p: ProcessId) -> bool {
        !self.is_crashed(p)
            && !self.is_halted(p)
            && self.node(p).ready(&self.reading(p), self.cfg.n)
    }

    /// Enabled deliveries (by pending index) and process steps. Crashes and
    /// time advances are not included.
    pub fn enabled(&self) -> Vec<Action> {
        let mut out = Vec::new();
        for (i, e) in self.pending.iter().enumerate() {
            if self.canonical && i > 0 && self.pending[i - 1] == *e {
                continue;
            }
            if !self.is_crashed(e.to) {
                out.push(Action::Deliver(i));
            }
        }
        out.extend(
            self.cfg
                .processes()
                .filter(|&p| self.can_step(p))
                .map(Action::Step),
        );
        out
    }

    /// Applies `action`, appending the resulting events. Deliveries and steps
    /// take one time unit; crashes take none.
    pub fn apply(&mut self, action: Action, events: &mut Vec<Event>) -> Result<(), SimError> {
        match action {
            Action::Deliver(i) => {
                let e = self.pending.remove(i);
                events.push(Event {
                    step: self.time,
                    kind: EventKind::Deliver {
                        p: e.to,
                        from: e.from,
                        msg: e.id,
                        payload: e.payload.clone(),
                    },
                });
                self.nodes[e.to.idx()].deliver(e.from, &e.payload);
                self.time += 1;
            }
            Action::Step(p) => {
                let value = self.reading(p);
                events.push(Event {
                    step: self.time,
                    kind: EventKind::Oracle {
                        p,
                        value: value.clone(),
                    },
                });
                let mut ctx = Ctx::new(&value, self.cfg.n);
                if !self.nodes[p.idx()].step(&mut ctx) {
                    return Err(SimError::NoProgress(p));
                }
                for effect in ctx.into_effects() {
                    self.apply_effect(p, effect, events);
                }
                self.time += 1;
            }
            Action::Crash(p) => self.crash(p, events),
        }
        if self.canonical {
            self.canonicalize();
        }
        Ok(())
    }

    fn apply_effect(&mut self, p: ProcessId, effect: Effect, events: &mut Vec<Event>) {
        let step = self.time;
        let kind = match effect {
            Effect::Send(payload) => {
                let id = if self.canonical { 0 } else { self.next_msg };
                self.next_msg += 1;
                let from = (self.delivery == Delivery::Identified).then_some(p);
                let sent = if self.canonical { 0 } else { step };
                let origin = if self.canonical && from.is_none() {
                    ProcessId::new(1)
                } else {
                    p
                };
                let receivers: Vec<_> = self
                    .cfg
                    .processes()
                    .filter(|&q| !self.is_crashed(q))
                    .collect();
                for to in receivers {
                    self.pending.push(Envelope {
                        to,
                        from,
                        payload: payload.clone(),
                        id,
                        sent,
                        origin,
                    });
                }
                EventKind::Send {
                    p,
                    msg: id,
                    payload,
                }
            }
            Effect::Round { round, v } => EventKind::Round { p, round, v },
            Effect::Decide { value, round } => EventKind::Decide { p, value, round },
            Effect::Output(value) => EventKind::Output { p, value },
            Effect::Halt => {
                self.halted[p.idx()] = true;
                EventKind::Halt { p }
            }
        };
        events.push(Event { step, kind });
    }

    fn crash(&mut self, p: ProcessId, events: &mut Vec<Event>) {
        assert!(!self.is_crashed(p), "{p} crashed twice");
        self.crashed[p.idx()] = true;
        self.pending.retain(|e| e.to != p);
        events.push(Event {
            step: self.time,
            kind: EventKind::Crash { p },
        });
    }

    fn canonicalize(&mut self) {
        let mut pending = std::mem::take(&mut self.pending);
        pending.retain(|e| {
            let q = e.to.idx();
            !self.crashed[q] && !self.halted[q] && self.nodes[q].accepts(&e.payload)
        });
        pending.sort_unstable();
        self.pending = pending;
    }

    /// Live processes that still owe output.
    pub fn unfinished(&self) -> Vec<ProcessId> {
        self.cfg
            .processes()
            .filter(|&p| !self.is_crashed(p) && !self.node(p).is_finished())
            .collect()
    }

    pub fn decisions(&self) -> std::collections::BTreeMap<ProcessId, Bin> {
        self.cfg
            .processes()
            .filter_map(|p| self.node(p).decision().map(|v| (p, v)))
            .collect()
    }

    /// Hashes everything that determines future behavior, excluding time and
    /// message numbering.
    pub fn hash_state<H: Hasher>(&self, h: &mut H) {
        self.nodes.hash(h);
        self.crashed.hash(h);
        self.halted.hash(h);
        for e in &self.pending {
            (e.to, e.from, &e.payload).hash(h);
        }
    }

    pub fn advance_to(&mut self, t: Time) {
        debug_assert!(t >= self.time);
        self.time = t;
    }

    fn end(&self, reason: EndReason) -> TraceEnd {
        let unfinished = !self.unfinished().is_empty();
        TraceEnd {
            step: self.time,
            reason,
            truncated: reason == EndReason::Horizon && unfinished,
            pending: self
                .pending
                .iter()
                .filter(|e| !self.is_crashed(e.to))
                .count(),
            crashed: self.crashed_set(),
            decisions: self.decisions(),
            rounds: self.nodes.iter().map(Automaton::round).collect(),
        }
    }
}

/// Per-process seeds derived from a run seed.
pub fn derive_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_90ce_55e5);
    (0..n).map(|_| rng.next_u64()).collect()
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub horizon: Time,
    pub policy: SchedulerPolicy,
    pub seed: u64,
    /// Pending messages at least this old are delivered before anything else.
    pub age_bound: Time,
}

impl RunConfig {
    pub fn new(horizon: Time, policy: SchedulerPolicy, seed: u64) -> Self {
        RunConfig {
            horizon,
            policy,
            seed,
            age_bound: horizon,
        }
    }
}

/// Executes one scenario to quiescence or the horizon.
///
/// Crashes fire at their scheduled times; when nothing is enabled, time jumps
/// to the next crash or oracle change.
pub fn run<P: Protocol>(
    protocol: &P,
    cfg: SystemConfig,
    inputs: &[Bin],
    pattern: &FailurePattern,
    oracle: OracleSource,
    rc: &RunConfig,
    header: TraceHeader,
) -> Result<Trace, SimError> {
    pattern.validate_for(&cfg)?;
    let change_points: Vec<Time> = match &oracle {
        OracleSource::Table(h) => h.change_points().into_iter().collect(),
        OracleSource::CrashCount => Vec::new(),
    };
    let mut world = World::new(protocol, cfg, inputs, rc.seed, oracle, false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rc.seed);
    let mut events = Vec::new();
    let reason = loop {
        for (&p, &t) in pattern.crash_times() {
            if t <= world.time && !world.is_crashed(p) {
                world.crash(p, &mut events);
            }
        }
        if world.time >= rc.horizon {
            break EndReason::Horizon;
        }
        let enabled = world.enabled();
        if enabled.is_empty() {
            let next_crash = pattern
                .crash_times()
                .iter()
                .filter(|(p, _)| !world.is_crashed(**p))
                .map(|(_, &t)| t)
                .filter(|&t| t > world.time);
            let next_change = change_points.iter().copied().filter(|&t| t > world.time);
            match next_crash.chain(next_change).min() {
                Some(t) => {
                    world.advance_to(t.min(rc.horizon));
                    continue;
                }
                None => break EndReason::Quiescent,
            }
        }
        let action = choose(&world, &enabled, rc, pattern, &mut rng);
        world.apply(action, &mut events)?;
    };
    Ok(Trace {
        header,
        events,
        end: world.end(reason),
    })
}

fn choose<A: Automaton>(
    world: &World<A>,
    enabled: &[Action],
    rc: &RunConfig,
    pattern: &FailurePattern,
    rng: &mut ChaCha8Rng,
) -> Action {
    let now = world.time();
    let overdue = enabled
        .iter()
        .filter_map(|&a| match a {
            Action::Deliver(i) if now.saturating_sub(world.pending()[i].sent) >= rc.age_bound => {
                Some((world.pending()[i].id, a))
            }
            _ => None,
        })
        .min_by_key(|&(id, _)| id);
    if let Some((_, a)) = overdue {
        return a;
    }
    let deliveries: Vec<Action> = enabled
        .iter()
        .copied()
        .filter(|a| matches!(a, Action::Deliver(_)))
        .collect();
    let steps: Vec<Action> = enabled
        .iter()
        .copied()
        .filter(|a| matches!(a, Action::Step(_)))
        .collect();
    match rc.policy {
        SchedulerPolicy::Fifo => deliveries
            .first()
            .or(steps.first())
            .copied()
            .expect("nonempty"),
        SchedulerPolicy::Random => *enabled.choose(rng).expect("nonempty"),
        SchedulerPolicy::CrashAdjacent => {
            let from_faulty: Vec<Action> = deliveries
                .iter()
                .copied()
                .filter(|&a| match a {
                    Action::Deliver(i) => !pattern.is_correct(world.pending()[i].origin),
                    _ => false,
                })
                .collect();
            if let Some(a) = from_faulty.choose(rng) {
                return *a;
            }
            // Mostly step eagerly, occasionally deliver first so that steps
            // also see larger message sets.
            if !steps.is_empty() && (deliveries.is_empty() || rng.gen_bool(0.8)) {
                return *steps.choose(rng).expect("nonempty");
            }
            *deliveries.choose(rng).expect("nonempty")
        }
    }
}
