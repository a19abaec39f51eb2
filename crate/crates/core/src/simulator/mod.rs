//! Deterministic discrete-event execution of process automata over reliable
//! broadcast channels, with crash injection, pluggable scheduling policies,
//! trace capture and exhaustive schedule exploration.

mod explore;
mod payload;
mod trace;
mod world;

use std::collections::BTreeSet;
use std::fmt::Debug;
use std::hash::Hash;

pub use explore::{explore, replay, ExploreConfig, ExploreReport, ExploreViolation};
pub use payload::{Bin, Payload};
pub use trace::{EndReason, Event, EventKind, Trace, TraceEnd, TraceHeader};
pub use world::{
    derive_seeds, run, Action, Delivery, Envelope, OracleSource, RunConfig, SchedulerPolicy,
    SimError, World,
};

use crate::detectors::DetectorValue;
use crate::model::ProcessId;

/// What a process step produced, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    Send(Payload),
    /// Entered `round` holding estimate `v`.
    Round {
        round: u32,
        v: Option<Bin>,
    },
    Decide {
        value: Bin,
        round: u32,
    },
    /// Emulated detector output changed.
    Output(DetectorValue),
    Halt,
}

/// Per-step context handed to an automaton.
pub struct Ctx<'a> {
    oracle: &'a DetectorValue,
    n: usize,
    effects: Vec<Effect>,
}

impl<'a> Ctx<'a> {
    pub fn new(oracle: &'a DetectorValue, n: usize) -> Self {
        Ctx {
            oracle,
            n,
            effects: Vec::new(),
        }
    }

    /// Current reading of the local detector module.
    pub fn oracle(&self) -> &DetectorValue {
        self.oracle
    }

    /// `n - H(p, t)` for crash-count detectors.
    pub fn alive_view(&self) -> usize {
        let crashed = self
            .oracle
            .as_count()
            .expect("protocol expects a crash-count oracle") as usize;
        self.n.saturating_sub(crashed)
    }

    pub fn trusted(&self) -> bool {
        self.oracle
            .as_bool()
            .expect("protocol expects a self-trust oracle")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn broadcast(&mut self, msg: Payload) {
        self.effects.push(Effect::Send(msg));
    }

    pub fn enter_round(&mut self, round: u32, v: Option<Bin>) {
        self.effects.push(Effect::Round { round, v });
    }

    pub fn decide(&mut self, value: Bin, round: u32) {
        self.effects.push(Effect::Decide { value, round });
    }

    pub fn output(&mut self, value: DetectorValue) {
        self.effects.push(Effect::Output(value));
    }

    pub fn halt(&mut self) {
        self.effects.push(Effect::Halt);
    }

    pub fn into_effects(self) -> Vec<Effect> {
        self.effects
    }
}

/// A process automaton. Steps run atomically from one wait to the next and
/// must be deterministic functions of the local state and oracle reading.
pub trait Automaton: Clone + Debug + Hash + Eq + Send {
    /// Buffers a delivered message. `from` is `None` in anonymous mode.
    fn deliver(&mut self, from: Option<ProcessId>, msg: &Payload);

    /// Runs one step if the current wait condition holds; returns whether
    /// anything happened. Called at every scheduler visit.
    fn step(&mut self, ctx: &mut Ctx<'_>) -> bool;

    /// Whether [`Automaton::step`] would make progress with this reading.
    fn ready(&self, oracle: &DetectorValue, n: usize) -> bool {
        let mut probe = self.clone();
        probe.step(&mut Ctx::new(oracle, n))
    }

    /// Whether a delivery of `msg` could still influence this process.
    /// Deliveries that cannot are dropped eagerly during exploration.
    fn accepts(&self, msg: &Payload) -> bool {
        let _ = msg;
        true
    }

    fn round(&self) -> u32;

    fn decision(&self) -> Option<Bin> {
        None
    }

    /// Emulated detector output before the first step, if any.
    fn initial_output(&self) -> Option<DetectorValue> {
        None
    }

    /// Whether this process has produced everything it must produce.
    fn is_finished(&self) -> bool;
}

/// What a protocol instance learns at start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProcessInit {
    pub input: Bin,
    /// Set only for protocols that run with identities.
    pub identity: Option<ProcessId>,
    /// Per-process randomness, derived from the run seed.
    pub seed: u64,
    /// Position in the scenario's per-process configuration (inputs, forced
    /// ids). Anonymous protocols must not put it in messages.
    pub index: usize,
}

/// Factory of process automata.
pub trait Protocol: Sync {
    type Node: Automaton;

    fn name(&self) -> &'static str;

    /// Whether receptions are attributed to senders.
    fn identified(&self) -> bool {
        false
    }

    fn spawn(&self, init: ProcessInit) -> Self::Node;
}

/// Incremental trace checker. Clone/Hash/Eq so that exploration can fold
/// monitor state into the explored state.
pub trait Monitor: Clone + Hash + Eq + Send {
    /// Returns a failure description once a violation is observed. `index`
    /// is the position of `ev` in the trace (zero during exploration).
    fn observe(&mut self, index: usize, ev: &Event) -> Option<String>;

    /// Final verdict for a complete or truncated execution.
    fn finish(&self, truncated: bool, crashed: &BTreeSet<ProcessId>) -> Option<String>;
}

/// Multiset of received payloads with round isolation: messages of past
/// rounds are discarded, messages of later rounds are buffered.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Inbox {
    items: Vec<(Payload, Option<ProcessId>)>,
}

impl Inbox {
    pub fn new() -> Self {
        Inbox::default()
    }

    /// Inserts in sorted position so equal contents give equal inboxes.
    pub fn insert(&mut self, from: Option<ProcessId>, msg: Payload) {
        let item = (msg, from);
        let at = self.items.binary_search(&item).unwrap_or_else(|e| e);
        self.items.insert(at, item);
    }

    /// Discards messages tagged with a round below `r`.
    pub fn purge_before(&mut self, r: u32) {
        self.items
            .retain(|(m, _)| m.round().is_none_or(|mr| mr >= r));
    }

    pub fn iter(&self) -> impl Iterator<Item = &Payload> {
        self.items.iter().map(|(m, _)| m)
    }

    pub fn with_senders(&self) -> impl Iterator<Item = (&Payload, Option<ProcessId>)> {
        self.items.iter().map(|(m, s)| (m, *s))
    }

    pub fn count(&self, pred: impl Fn(&Payload) -> bool) -> usize {
        self.iter().filter(|m| pred(m)).count()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}
