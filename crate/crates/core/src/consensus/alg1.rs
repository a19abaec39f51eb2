use std::collections::BTreeSet;

use crate::model::{ProcessId, SystemConfig};
use crate::simulator::{Automaton, Bin, Ctx, Inbox, Payload, ProcessInit, Protocol};

/// Broken variants of [`Alg1`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Alg1Mutant {
    /// Adopt the smallest received value instead of the largest.
    MinInsteadOfMax,
}

/// Consensus with `N` in `f + 1` rounds: broadcast the estimate, wait for as
/// many round messages as processes are believed alive, adopt the maximum.
#[derive(Debug, Clone)]
pub struct Alg1 {
    cfg: SystemConfig,
    mutant: Option<Alg1Mutant>,
}

impl Alg1 {
    pub fn new(cfg: SystemConfig) -> Self {
        Alg1 { cfg, mutant: None }
    }

    pub fn mutated(cfg: SystemConfig, mutant: Alg1Mutant) -> Self {
        Alg1 {
            cfg,
            mutant: Some(mutant),
        }
    }
}

impl Protocol for Alg1 {
    type Node = Alg1Node;

    fn name(&self) -> &'static str {
        "alg1"
    }

    fn spawn(&self, init: ProcessInit) -> Alg1Node {
        Alg1Node {
            v: init.input,
            r: 0,
            last_round: self.cfg.f as u32 + 1,
            inbox: Inbox::new(),
            decided: None,
            mutant: self.mutant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Alg1Node {
    v: Bin,
    /// Current round; 0 before the first broadcast.
    r: u32,
    last_round: u32,
    inbox: Inbox,
    decided: Option<Bin>,
    mutant: Option<Alg1Mutant>,
}

impl Alg1Node {
    pub fn estimate(&self) -> Bin {
        self.v
    }

    fn start_round(&mut self, r: u32, ctx: &mut Ctx<'_>) {
        self.r = r;
        self.inbox.purge_before(r);
        ctx.enter_round(r, Some(self.v));
        ctx.broadcast(Payload::Propose { r, v: self.v });
    }
}

impl Automaton for Alg1Node {
    fn deliver(&mut self, _from: Option<ProcessId>, msg: &Payload) {
        if self.accepts(msg) {
            self.inbox.insert(None, msg.clone());
        }
    }

    fn step(&mut self, ctx: &mut Ctx<'_>) -> bool {
        if self.decided.is_some() {
            return false;
        }
        if self.r == 0 {
            self.start_round(1, ctx);
            return true;
        }
        let r = self.r;
        // Counts round-r proposals of any value.
        let received: Vec<Bin> = self
            .inbox
            .iter()
            .filter_map(|m| match *m {
                Payload::Propose { r: mr, v } if mr == r => Some(v),
                _ => None,
            })
            .collect();
        if received.len() < ctx.alive_view() {
            return false;
        }
        let values: BTreeSet<Bin> = received.into_iter().chain([self.v]).collect();
        self.v = match self.mutant {
            None => *values.last().expect("nonempty"),
            Some(Alg1Mutant::MinInsteadOfMax) => *values.first().expect("nonempty"),
        };
        if r == self.last_round {
            self.decided = Some(self.v);
            ctx.decide(self.v, r);
            ctx.halt();
        } else {
            self.start_round(r + 1, ctx);
        }
        true
    }

    fn accepts(&self, msg: &Payload) -> bool {
        self.decided.is_none() && matches!(*msg, Payload::Propose { r, .. } if r >= self.r)
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::testing::run_with;
    use crate::model::FailurePattern;
    use crate::simulator::{EventKind, SchedulerPolicy};

    #[test]
    fn single_process_decides_own_input() {
        let cfg = SystemConfig::new(1, 0).unwrap();
        let t = run_with(
            &Alg1::new(cfg),
            cfg,
            &[1],
            &FailurePattern::no_crashes(1),
            None,
            SchedulerPolicy::Fifo,
            0,
        );
        assert_eq!(t.decisions().map(|d| d.2).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn fifo_three_processes_decide_in_last_round() {
        let cfg = SystemConfig::new(3, 1).unwrap();
        let t = run_with(
            &Alg1::new(cfg),
            cfg,
            &[0, 1, 0],
            &FailurePattern::no_crashes(3),
            None,
            SchedulerPolicy::Fifo,
            0,
        );
        let d: Vec<_> = t.decisions().map(|(_, _, v, r)| (v, r)).collect();
        assert_eq!(d, vec![(1, 2); 3]);
        assert!(!t.truncated());
    }

    #[test]
    fn all_zero_inputs_decide_zero() {
        let cfg = SystemConfig::new(4, 2).unwrap();
        let f = FailurePattern::from_pairs(4, &[(2, 5), (4, 30)]).unwrap();
        for seed in 0..20 {
            let t = run_with(
                &Alg1::new(cfg),
                cfg,
                &[0; 4],
                &f,
                None,
                SchedulerPolicy::Random,
                seed,
            );
            assert!(t.decisions().all(|d| d.2 == 0));
            assert_eq!(
                t.decisions().count(),
                2 + t
                    .decisions()
                    .filter(|d| f.crash_time(d.1).is_some())
                    .count()
            );
        }
    }

    #[test]
    fn min_mutant_flips_estimate() {
        let cfg = SystemConfig::new(2, 0).unwrap();
        let t = run_with(
            &Alg1::mutated(cfg, Alg1Mutant::MinInsteadOfMax),
            cfg,
            &[1, 0],
            &FailurePattern::no_crashes(2),
            None,
            SchedulerPolicy::Fifo,
            0,
        );
        assert!(t
            .events
            .iter()
            .any(|e| matches!(e.kind, EventKind::Decide { value: 0, .. })));
    }
}
