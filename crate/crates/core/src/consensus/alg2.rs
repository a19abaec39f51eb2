use std::collections::BTreeSet;

use super::{require_majority, ConsensusError};
use crate::model::{ProcessId, SystemConfig};
use crate::simulator::{Automaton, Bin, Ctx, Inbox, Payload, ProcessInit, Protocol};

/// Broken variants of [`Alg2`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Alg2Mutant {
    /// Lock the adopted value even when the proposals were mixed.
    LockWithoutUnanimity,
    /// Decide as soon as one non-`?` lock is received.
    DecideOnAnyLock,
    /// Adopt the smallest estimate unless every lock agrees, ignoring a
    /// partial lock.
    IgnorePartialLock,
}

/// Consensus with `◇N`: rounds of a propose phase and a lock phase. A
/// process locks a value only if every proposal it received carried it, and
/// decides once every received lock carries the same value.
///
/// Waits use `max(n - H, n - f)` messages: the detector may over-report the
/// alive count before it stabilizes, and waiting for fewer than `n - f`
/// messages would let two lock phases see disjoint majorities.
#[derive(Debug, Clone)]
pub struct Alg2 {
    cfg: SystemConfig,
    mutant: Option<Alg2Mutant>,
}

impl Alg2 {
    pub fn new(cfg: SystemConfig) -> Result<Self, ConsensusError> {
        require_majority("alg2", cfg)?;
        Ok(Alg2 { cfg, mutant: None })
    }

    pub fn mutated(cfg: SystemConfig, mutant: Alg2Mutant) -> Result<Self, ConsensusError> {
        Ok(Alg2 {
            mutant: Some(mutant),
            ..Self::new(cfg)?
        })
    }
}

impl Protocol for Alg2 {
    type Node = Alg2Node;

    fn name(&self) -> &'static str {
        "alg2"
    }

    fn spawn(&self, init: ProcessInit) -> Alg2Node {
        Alg2Node {
            v: init.input,
            lock: None,
            decided: None,
            r: 0,
            phase: Phase::Start,
            inbox: Inbox::new(),
            quorum: self.cfg.n - self.cfg.f,
            mutant: self.mutant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Phase {
    Start,
    Propose,
    Lock,
    Halted,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Alg2Node {
    v: Bin,
    lock: Option<Bin>,
    decided: Option<Bin>,
    r: u32,
    phase: Phase,
    inbox: Inbox,
    quorum: usize,
    mutant: Option<Alg2Mutant>,
}

impl Alg2Node {
    fn threshold(&self, ctx: &Ctx<'_>) -> usize {
        ctx.alive_view().max(self.quorum)
    }

    fn propose(&mut self, ctx: &mut Ctx<'_>) {
        self.inbox.purge_before(self.r);
        ctx.enter_round(self.r, Some(self.v));
        ctx.broadcast(Payload::Propose {
            r: self.r,
            v: self.v,
        });
        self.phase = Phase::Propose;
    }

    fn propose_phase(&mut self, ctx: &mut Ctx<'_>) -> bool {
        let r = self.r;
        let proposed: Vec<Bin> = self
            .inbox
            .iter()
            .filter_map(|m| match *m {
                Payload::Propose { r: mr, v } if mr == r => Some(v),
                _ => None,
            })
            .collect();
        if proposed.len() < self.threshold(ctx) {
            return false;
        }
        let proposed: BTreeSet<Bin> = proposed.into_iter().collect();
        self.v = *proposed.first().expect("threshold is positive");
        let unanimous = proposed.len() == 1;
        self.lock =
            (unanimous || self.mutant == Some(Alg2Mutant::LockWithoutUnanimity)).then_some(self.v);
        ctx.broadcast(Payload::Lock {
            r,
            lock: self.lock,
            v: self.v,
        });
        if self.decided.is_some() {
            self.phase = Phase::Halted;
            ctx.halt();
        } else {
            self.phase = Phase::Lock;
        }
        true
    }

    fn lock_phase(&mut self, ctx: &mut Ctx<'_>) -> bool {
        let r = self.r;
        let locks: Vec<(Option<Bin>, Bin)> = self
            .inbox
            .iter()
            .filter_map(|m| match *m {
                Payload::Lock { r: mr, lock, v } if mr == r => Some((lock, v)),
                _ => None,
            })
            .collect();
        if locks.len() < self.threshold(ctx) {
            return false;
        }
        let tags: BTreeSet<Option<Bin>> = locks.iter().map(|&(l, _)| l).collect();
        let values: BTreeSet<Bin> = tags.iter().flatten().copied().collect();
        let all_locked = tags.len() == 1;
        let ignore = self.mutant == Some(Alg2Mutant::IgnorePartialLock) && !all_locked;
        if let (Some(&x), false) = (values.first(), ignore) {
            self.v = x;
            if all_locked || self.mutant == Some(Alg2Mutant::DecideOnAnyLock) {
                self.decided = Some(x);
                ctx.decide(x, r);
            }
        } else {
            self.v = locks
                .iter()
                .map(|&(_, v)| v)
                .min()
                .expect("threshold is positive");
        }
        self.r += 1;
        self.propose(ctx);
        true
    }
}

impl Automaton for Alg2Node {
    fn deliver(&mut self, _from: Option<ProcessId>, msg: &Payload) {
        if self.accepts(msg) {
            self.inbox.insert(None, msg.clone());
        }
    }

    fn step(&mut self, ctx: &mut Ctx<'_>) -> bool {
        match self.phase {
            Phase::Start => {
                self.propose(ctx);
                true
            }
            Phase::Propose => self.propose_phase(ctx),
            Phase::Lock => self.lock_phase(ctx),
            Phase::Halted => false,
        }
    }

    fn accepts(&self, msg: &Payload) -> bool {
        if self.phase == Phase::Halted {
            return false;
        }
        match *msg {
            Payload::Propose { r, .. } => r > self.r || (r == self.r && self.phase != Phase::Lock),
            Payload::Lock { r, .. } => r >= self.r,
            _ => false,
        }
    }

    fn round(&self) -> u32 {
        self.r
    }

    fn decision(&self) -> Option<Bin> {
        self.decided
    }

    fn is_finished(&self) -> bool {
        self.decided.is_some()
    }
}
