use std::collections::BTreeSet;

use super::{require_identified, TransformError};
use crate::detectors::DetectorValue;
use crate::model::{ProcessId, SystemConfig};
use crate::simulator::{Automaton, Ctx, Delivery, Inbox, Payload, ProcessInit, Protocol};

fn senders(inbox: &Inbox, r: u32) -> BTreeSet<ProcessId> {
    inbox
        .with_senders()
        .filter_map(|(m, from)| match *m {
            Payload::Alive { r: mr } if mr == r => from,
            _ => None,
        })
        .collect()
}

fn complement(n: usize, set: &BTreeSet<ProcessId>) -> BTreeSet<ProcessId> {
    ProcessId::all(n).filter(|p| !set.contains(p)).collect()
}

/// `◇N` to `◇P`: every round, broadcast `ALIVE`, wait for as many round
/// messages as processes are believed alive, and suspect everyone whose
/// message is missing.
#[derive(Debug, Clone)]
pub struct Alg4 {
    cfg: SystemConfig,
    max_rounds: Option<u32>,
}

impl Alg4 {
    pub fn new(cfg: SystemConfig, mode: Delivery) -> Result<Self, TransformError> {
        require_identified("alg4", mode)?;
        Ok(Alg4 {
            cfg,
            max_rounds: None,
        })
    }

    /// Halt after completing round `rounds`.
    pub fn with_max_rounds(mut self, rounds: Option<u32>) -> Self {
        self.max_rounds = rounds;
        self
    }
}

impl Protocol for Alg4 {
    type Node = Alg4Node;

    fn name(&self) -> &'static str {
        "alg4"
    }

    fn identified(&self) -> bool {
        true
    }

    fn spawn(&self, _init: ProcessInit) -> Alg4Node {
        Alg4Node {
            n: self.cfg.n,
            r: 0,
            suspect: BTreeSet::new(),
            inbox: Inbox::new(),
            max_rounds: self.max_rounds,
            halted: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Alg4Node {
    n: usize,
    r: u32,
    suspect: BTreeSet<ProcessId>,
    inbox: Inbox,
    max_rounds: Option<u32>,
    halted: bool,
}

impl Alg4Node {
    pub fn suspect(&self) -> &BTreeSet<ProcessId> {
        &self.suspect
    }

    fn next_round(&mut self, ctx: &mut Ctx<'_>) {
        self.r += 1;
        self.inbox.purge_before(self.r);
        ctx.enter_round(self.r, None);
        ctx.broadcast(Payload::Alive { r: self.r });
    }
}

impl Automaton for Alg4Node {
    fn deliver(&mut self, from: Option<ProcessId>, msg: &Payload) {
        if self.accepts(msg) {
            self.inbox.insert(from, msg.clone());
        }
    }

    fn step(&mut self, ctx: &mut Ctx<'_>) -> bool {
        if self.halted {
            return false;
        }
        if self.r == 0 {
            self.next_round(ctx);
            return true;
        }
        let alive = senders(&self.inbox, self.r);
        if alive.len() < ctx.alive_view() {
            return false;
        }
        let suspect = complement(self.n, &alive);
        if suspect != self.suspect {
            self.suspect = suspect;
            ctx.output(DetectorValue::Set(self.suspect.clone()));
        }
        if self.max_rounds == Some(self.r) {
            self.halted = true;
            ctx.halt();
        } else {
            self.next_round(ctx);
        }
        true
    }

    fn accepts(&self, msg: &Payload) -> bool {
        !self.halted && matches!(*msg, Payload::Alive { r } if r >= self.r)
    }

    fn round(&self) -> u32 {
        self.r
    }

    fn initial_output(&self) -> Option<DetectorValue> {
        Some(DetectorValue::Set(BTreeSet::new()))
    }

    fn is_finished(&self) -> bool {
        true
    }
}

/// Broken variants of [`Alg5`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Alg5Mutant {
    /// Update the suspicion set every round, without waiting for the
    /// alive set to stabilize.
    DropGuard,
    /// Move to the next round without waiting for messages.
    NoWait,
}

/// `N` to `P`: like [`Alg4`], but the suspicion set only changes after the
/// received alive set has stayed the same for `f + 2` rounds.
///
/// The wait ends once at least `n - N` distinct senders are heard from in the
/// round, rather than exactly that many, so a process that has already
/// collected more messages than the oracle's count is never stuck.
#[derive(Debug, Clone)]
pub struct Alg5 {
    cfg: SystemConfig,
    max_rounds: Option<u32>,
    mutant: Option<Alg5Mutant>,
}

impl Alg5 {
    pub fn new(cfg: SystemConfig, mode: Delivery) -> Result<Self, TransformError> {
        require_identified("alg5", mode)?;
        Ok(Alg5 {
            cfg,
            max_rounds: None,
            mutant: None,
        })
    }

    pub fn mutated(
        cfg: SystemConfig,
        mode: Delivery,
        mutant: Alg5Mutant,
    ) -> Result<Self, TransformError> {
        Ok(Alg5 {
            mutant: Some(mutant),
            ..Self::new(cfg, mode)?
        })
    }

    /// Halt after completing round `rounds` (rounds count from 0).
    pub fn with_max_rounds(mut self, rounds: Option<u32>) -> Self {
        self.max_rounds = rounds;
        self
    }
}

impl Protocol for Alg5 {
    type Node = Alg5Node;

    fn name(&self) -> &'static str {
        "alg5"
    }

    fn identified(&self) -> bool {
        true
    }

    fn spawn(&self, _init: ProcessInit) -> Alg5Node {
        Alg5Node {
            n: self.cfg.n,
            f: self.cfg.f as u32,
            r: 0,
            started: false,
            suspect: BTreeSet::new(),
            earlier_alive: BTreeSet::new(),
            last_change: 0,
            inbox: Inbox::new(),
            max_rounds: self.max_rounds,
            halted: false,
            mutant: self.mutant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Alg5Node {
    n: usize,
    f: u32,
    r: u32,
    started: bool,
    suspect: BTreeSet<ProcessId>,
    earlier_alive: BTreeSet<ProcessId>,
    last_change: u32,
    inbox: Inbox,
    max_rounds: Option<u32>,
    halted: bool,
    mutant: Option<Alg5Mutant>,
}

impl Alg5Node {
    pub fn suspect(&self) -> &BTreeSet<ProcessId> {
        &self.suspect
    }

    fn begin_round(&mut self, ctx: &mut Ctx<'_>) {
        self.inbox.purge_before(self.r);
        ctx.enter_round(self.r, None);
        ctx.broadcast(Payload::Alive { r: self.r });
    }
}

impl Automaton for Alg5Node {
    fn deliver(&mut self, from: Option<ProcessId>, msg: &Payload) {
        if self.accepts(msg) {
            self.inbox.insert(from, msg.clone());
        }
    }

    fn step(&mut self, ctx: &mut Ctx<'_>) -> bool {
        if self.halted {
            return false;
        }
        if !self.started {
            self.started = true;
            self.begin_round(ctx);
            return true;
        }
        let alive = senders(&self.inbox, self.r);
        if alive.len() < ctx.alive_view() && self.mutant != Some(Alg5Mutant::NoWait) {
            return false;
        }
        if alive != self.earlier_alive {
            self.last_change = self.r;
        }
        let stable = alive == self.earlier_alive && self.r >= self.last_change + self.f + 2;
        if stable || self.mutant == Some(Alg5Mutant::DropGuard) {
            let suspect = complement(self.n, &alive);
            if suspect != self.suspect {
                self.suspect = suspect;
                ctx.output(DetectorValue::Set(self.suspect.clone()));
            }
        }
        self.earlier_alive = alive;
        if self.max_rounds == Some(self.r) {
            self.halted = true;
            ctx.halt();
        } else {
            self.r += 1;
            self.begin_round(ctx);
        }
        true
    }

    fn accepts(&self, msg: &Payload) -> bool {
        !self.halted && matches!(*msg, Payload::Alive { r } if r >= self.r)
    }

    fn round(&self) -> u32 {
        self.r
    }

    fn initial_output(&self) -> Option<DetectorValue> {
        Some(DetectorValue::Set(BTreeSet::new()))
    }

    fn is_finished(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::testing::run_with;
    use crate::detectors::AnyHistory;
    use crate::detectors::{DetectorKind, DetectorSpec, DiamondPSpec, PSpec};
    use crate::model::{FailurePattern, History};
    use crate::simulator::{EventKind, SchedulerPolicy};
    use crate::transforms::output_history;

    fn cfg(n: usize, f: usize) -> SystemConfig {
        SystemConfig::new(n, f).unwrap()
    }

    #[test]
    fn anonymous_mode_is_rejected() {
        assert_eq!(
            Alg4::new(cfg(3, 1), Delivery::Anonymous).unwrap_err(),
            TransformError::RequiresIdentities("alg4")
        );
        assert!(Alg5::new(cfg(3, 1), Delivery::Anonymous).is_err());
    }

    #[test]
    fn no_crashes_never_suspect() {
        let c = cfg(3, 1);
        let f = FailurePattern::no_crashes(3);
        for seed in 0..5 {
            let a4 = Alg4::new(c, Delivery::Identified)
                .unwrap()
                .with_max_rounds(Some(6));
            let t = run_with(&a4, c, &[0; 3], &f, None, SchedulerPolicy::Random, seed);
            assert!(!t
                .events
                .iter()
                .any(|e| matches!(e.kind, EventKind::Output { .. })));
            let a5 = Alg5::new(c, Delivery::Identified)
                .unwrap()
                .with_max_rounds(Some(6));
            let t = run_with(&a5, c, &[0; 3], &f, None, SchedulerPolicy::Random, seed);
            assert!(!t
                .events
                .iter()
                .any(|e| matches!(e.kind, EventKind::Output { .. })));
        }
    }

    #[test]
    fn crashed_process_ends_up_suspected() {
        let c = cfg(3, 1);
        let f = FailurePattern::from_pairs(3, &[(3, 10)]).unwrap();
        for seed in 0..10 {
            let a5 = Alg5::new(c, Delivery::Identified)
                .unwrap()
                .with_max_rounds(Some(20));
            let t = run_with(&a5, c, &[0; 3], &f, None, SchedulerPolicy::Random, seed);
            let h = output_history(&t, DetectorKind::P).unwrap();
            assert!(h.check(&f).unwrap().is_valid(), "seed {seed}");
            let AnyHistory::P(h) = h else { unreachable!() };
            assert!(PSpec.validates(&h, &f).unwrap());
        }
    }

    #[test]
    fn eventual_suspicion_with_noisy_oracle() {
        let c = cfg(3, 1);
        let f = FailurePattern::from_pairs(3, &[(2, 30)]).unwrap();
        // Over-reports alive processes until t = 200, exact afterwards.
        let oracle = History::from_fn(3, 200, |_, t| {
            if t < 200 {
                0
            } else {
                f.crashed_count_at(t) as u32
            }
        })
        .with_convergence(200);
        let a4 = Alg4::new(c, Delivery::Identified)
            .unwrap()
            .with_max_rounds(Some(30));
        let t = run_with(
            &a4,
            c,
            &[0; 3],
            &f,
            Some(AnyHistory::DiamondN(oracle)),
            SchedulerPolicy::Random,
            1,
        );
        let AnyHistory::DiamondP(h) = output_history(&t, DetectorKind::DiamondP).unwrap() else {
            unreachable!()
        };
        assert!(DiamondPSpec.validates(&h, &f).unwrap());
    }
}
