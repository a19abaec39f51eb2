use std::collections::BTreeMap;

use super::{require_majority, ConsensusError};
use crate::model::{ProcessId, SystemConfig};
use crate::simulator::{Automaton, Bin, Ctx, Inbox, Payload, ProcessInit, Protocol};

/// Broken variants of [`Alg3`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Alg3Mutant {
    /// Vote for the own estimate without checking for a report majority.
    VoteWithoutMajority,
}

/// Consensus with `Θ`. Each round a self-trusting process broadcasts a
/// leader value, everyone reports its estimate, votes for a value reported
/// by a strict majority (or `?`), and broadcasts `Decide` after `n - f`
/// non-`?` votes. A received `Decide` is forwarded once, adopted and ends the
/// process.
#[derive(Debug, Clone)]
pub struct Alg3 {
    cfg: SystemConfig,
    mutant: Option<Alg3Mutant>,
}

impl Alg3 {
    pub fn new(cfg: SystemConfig) -> Result<Self, ConsensusError> {
        require_majority("alg3", cfg)?;
        Ok(Alg3 { cfg, mutant: None })
    }

    pub fn mutated(cfg: SystemConfig, mutant: Alg3Mutant) -> Result<Self, ConsensusError> {
        Ok(Alg3 {
            mutant: Some(mutant),
            ..Self::new(cfg)?
        })
    }
}

impl Protocol for Alg3 {
    type Node = Alg3Node;

    fn name(&self) -> &'static str {
        "alg3"
    }

    fn spawn(&self, init: ProcessInit) -> Alg3Node {
        Alg3Node {
            v: init.input,
            r: 0,
            phase: Phase::Start,
            inbox: Inbox::new(),
            n: self.cfg.n,
            quorum: self.cfg.n - self.cfg.f,
            decided: None,
            mutant: self.mutant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Phase {
    Start,
    Leader,
    Report,
    Vote,
    Halted,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Alg3Node {
    v: Bin,
    r: u32,
    phase: Phase,
    inbox: Inbox,
    n: usize,
    quorum: usize,
    decided: Option<Bin>,
    mutant: Option<Alg3Mutant>,
}

impl Alg3Node {
    fn round_values(&self, pick: impl Fn(&Payload) -> Option<Option<Bin>>) -> Vec<Option<Bin>> {
        self.inbox.iter().filter_map(pick).collect()
    }

    fn leader_phase(&mut self, ctx: &mut Ctx<'_>) -> bool {
        let r = self.r;
        let leader = self.inbox.iter().find_map(|m| match *m {
            Payload::Leader { r: mr, v } if mr == r => Some(v),
            _ => None,
        });
        // A leader message wins over the local oracle when both are present.
        match leader {
            Some(w) => self.v = w,
            None if ctx.trusted() => ctx.broadcast(Payload::Leader { r, v: self.v }),
            None => return false,
        }
        ctx.broadcast(Payload::Report { r, v: self.v });
        self.phase = Phase::Report;
        true
    }

    fn report_phase(&mut self, ctx: &mut Ctx<'_>) -> bool {
        let r = self.r;
        let reports = self.round_values(|m| match *m {
            Payload::Report { r: mr, v } if mr == r => Some(Some(v)),
            _ => None,
        });
        if reports.len() < self.quorum {
            return false;
        }
        let mut tally: BTreeMap<Bin, usize> = BTreeMap::new();
        for v in reports.into_iter().flatten() {
            *tally.entry(v).or_default() += 1;
        }
        let aux = match self.mutant {
            None => tally
                .iter()
                .find(|&(_, &c)| 2 * c > self.n)
                .map(|(&w, _)| w),
            Some(Alg3Mutant::VoteWithoutMajority) => Some(self.v),
        };
        ctx.broadcast(Payload::Vote { r, aux });
        self.phase = Phase::Vote;
        true
    }

    fn vote_phase(&mut self, ctx: &mut Ctx<'_>) -> bool {
        let r = self.r;
        let votes = self.round_values(|m| match *m {
            Payload::Vote { r: mr, aux } if mr == r => Some(aux),
            _ => None,
        });
        if votes.len() < self.quorum {
            return false;
        }
        let cast: Vec<Bin> = votes.into_iter().flatten().collect();
        if let Some(&w) = cast.iter().min() {
            self.v = w;
        }
        if cast.len() >= self.quorum {
            ctx.broadcast(Payload::Decide { v: self.v });
        }
        self.r += 1;
        self.begin_round(ctx);
        true
    }

    fn begin_round(&mut self, ctx: &mut Ctx<'_>) {
        self.inbox.purge_before(self.r);
        ctx.enter_round(self.r, Some(self.v));
        self.phase = Phase::Leader;
    }
}

impl Automaton for Alg3Node {
    fn deliver(&mut self, _from: Option<ProcessId>, msg: &Payload) {
        if self.accepts(msg) {
            self.inbox.insert(None, msg.clone());
        }
    }

    fn step(&mut self, ctx: &mut Ctx<'_>) -> bool {
        if self.phase == Phase::Halted {
            return false;
        }
        let decide = self.inbox.iter().find_map(|m| match *m {
            Payload::Decide { v } => Some(v),
            _ => None,
        });
        if let Some(v) = decide {
            ctx.broadcast(Payload::Decide { v });
            self.v = v;
            self.decided = Some(v);
            ctx.decide(v, self.r);
            ctx.halt();
            self.phase = Phase::Halted;
            return true;
        }
        match self.phase {
            Phase::Start => {
                self.begin_round(ctx);
                true
            }
            Phase::Leader => self.leader_phase(ctx),
            Phase::Report => self.report_phase(ctx),
            Phase::Vote => self.vote_phase(ctx),
            Phase::Halted => unreachable!(),
        }
    }

    fn accepts(&self, msg: &Payload) -> bool {
        if self.phase == Phase::Halted {
            return false;
        }
        match *msg {
            Payload::Decide { .. } => true,
            Payload::Leader { r, .. } => {
                r > self.r || (r == self.r && matches!(self.phase, Phase::Start | Phase::Leader))
            }
            Payload::Report { r, .. } => r > self.r || (r == self.r && self.phase != Phase::Vote),
            Payload::Vote { r, .. } => r >= self.r,
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::testing::run_with;
    use crate::detectors::AnyHistory;
    use crate::model::{FailurePattern, History};
    use crate::simulator::{EventKind, SchedulerPolicy};

    #[test]
    fn stable_leader_unanimous_inputs() {
        let cfg = SystemConfig::new(3, 1).unwrap();
        let f = FailurePattern::no_crashes(3);
        let theta = History::from_fn(3, 0, |p, _| p == ProcessId::new(1));
        for c in [0, 1] {
            let t = run_with(
                &Alg3::new(cfg).unwrap(),
                cfg,
                &[c; 3],
                &f,
                Some(AnyHistory::Theta(theta.clone())),
                SchedulerPolicy::Fifo,
                0,
            );
            assert_eq!(t.decisions().map(|d| d.2).collect::<Vec<_>>(), vec![c; 3]);
            assert!(!t.truncated());
        }
    }

    #[test]
    fn nobody_trusted_blocks_until_oracle_changes() {
        let cfg = SystemConfig::new(3, 1).unwrap();
        let f = FailurePattern::no_crashes(3);
        let theta = History::from_fn(3, 500, |p, t| t >= 500 && p == ProcessId::new(2));
        let t = run_with(
            &Alg3::new(cfg).unwrap(),
            cfg,
            &[0, 1, 1],
            &f,
            Some(AnyHistory::Theta(theta)),
            SchedulerPolicy::Random,
            3,
        );
        let first_leader = t
            .events
            .iter()
            .find(|e| {
                matches!(
                    e.kind,
                    EventKind::Send {
                        payload: Payload::Leader { .. },
                        ..
                    }
                )
            })
            .unwrap();
        assert!(first_leader.step >= 500);
        assert_eq!(t.decisions().count(), 3);
    }
}
