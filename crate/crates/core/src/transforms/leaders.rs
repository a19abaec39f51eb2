use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{require_identified, TransformError};
use crate::detectors::DetectorValue;
use crate::model::{ProcessId, SystemConfig};
use crate::simulator::{Automaton, Ctx, Delivery, Inbox, Payload, ProcessInit, Protocol};

/// Randomized `N` to `Θ` in anonymous mode. Each process draws a 64-bit id
/// once, broadcasts it in a heartbeat every round, waits for as many
/// heartbeats as processes are believed alive, and trusts itself iff its id
/// is the largest of the round. Two processes drawing the same largest id
/// both trust themselves forever.
#[derive(Debug, Clone)]
pub struct NToTheta {
    cfg: SystemConfig,
    ids: Option<Vec<u64>>,
    max_rounds: Option<u32>,
}

impl NToTheta {
    pub fn new(cfg: SystemConfig, mode: Delivery) -> Result<Self, TransformError> {
        match mode {
            Delivery::Anonymous => Ok(NToTheta {
                cfg,
                ids: None,
                max_rounds: None,
            }),
            Delivery::Identified => Err(TransformError::RequiresAnonymity("n-to-theta")),
        }
    }

    /// Uses the given ids instead of random draws, e.g. to force a collision.
    pub fn with_ids(mut self, ids: Vec<u64>) -> Result<Self, TransformError> {
        if ids.len() != self.cfg.n {
            return Err(TransformError::IdCount {
                expected: self.cfg.n,
                found: ids.len(),
            });
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn with_max_rounds(mut self, rounds: Option<u32>) -> Self {
        self.max_rounds = rounds;
        self
    }

    /// The id a process draws from its per-process seed.
    pub fn draw_id(seed: u64) -> u64 {
        ChaCha8Rng::seed_from_u64(seed).gen()
    }
}

impl Protocol for NToTheta {
    type Node = NToThetaNode;

    fn name(&self) -> &'static str {
        "n-to-theta"
    }

    fn spawn(&self, init: ProcessInit) -> NToThetaNode {
        let id = match &self.ids {
            Some(ids) => ids[init.index],
            None => Self::draw_id(init.seed),
        };
        NToThetaNode {
            id,
            r: 0,
            trusted: false,
            inbox: Inbox::new(),
            max_rounds: self.max_rounds,
            halted: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NToThetaNode {
    id: u64,
    r: u32,
    trusted: bool,
    inbox: Inbox,
    max_rounds: Option<u32>,
    halted: bool,
}

impl NToThetaNode {
    pub fn id(&self) -> u64 {
        self.id
    }

    fn next_round(&mut self, ctx: &mut Ctx<'_>) {
        self.r += 1;
        self.inbox.purge_before(self.r);
        ctx.enter_round(self.r, None);
        ctx.broadcast(Payload::Heartbeat {
            r: self.r,
            id: self.id,
        });
    }
}

impl Automaton for NToThetaNode {
    fn deliver(&mut self, _from: Option<ProcessId>, msg: &Payload) {
        if self.accepts(msg) {
            self.inbox.insert(None, msg.clone());
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
        let r = self.r;
        let ids: Vec<u64> = self
            .inbox
            .iter()
            .filter_map(|m| match *m {
                Payload::Heartbeat { r: mr, id } if mr == r => Some(id),
                _ => None,
            })
            .collect();
        if ids.len() < ctx.alive_view() {
            return false;
        }
        let trusted = ids.iter().max() == Some(&self.id);
        if trusted != self.trusted {
            self.trusted = trusted;
            ctx.output(DetectorValue::Bool(trusted));
        }
        if self.max_rounds == Some(r) {
            self.halted = true;
            ctx.halt();
        } else {
            self.next_round(ctx);
        }
        true
    }

    fn accepts(&self, msg: &Payload) -> bool {
        !self.halted && matches!(*msg, Payload::Heartbeat { r, .. } if r >= self.r)
    }

    fn round(&self) -> u32 {
        self.r
    }

    fn initial_output(&self) -> Option<DetectorValue> {
        Some(DetectorValue::Bool(false))
    }

    fn is_finished(&self) -> bool {
        true
    }
}

/// `Θ` to `Ω` with identities: a self-trusting process keeps announcing
/// itself, sending the next announcement once its previous one has come
/// back; everyone else outputs the sender of the last announcement received
/// (itself before any arrives).
#[derive(Debug, Clone)]
pub struct ThetaToOmega {
    _cfg: SystemConfig,
}

impl ThetaToOmega {
    pub fn new(cfg: SystemConfig, mode: Delivery) -> Result<Self, TransformError> {
        require_identified("theta-to-omega", mode)?;
        Ok(ThetaToOmega { _cfg: cfg })
    }
}

impl Protocol for ThetaToOmega {
    type Node = ThetaToOmegaNode;

    fn name(&self) -> &'static str {
        "theta-to-omega"
    }

    fn identified(&self) -> bool {
        true
    }

    fn spawn(&self, init: ProcessInit) -> ThetaToOmegaNode {
        let me = init
            .identity
            .expect("identified protocols receive their identity");
        ThetaToOmegaNode {
            me,
            heard: None,
            seq: 0,
            in_flight: false,
            leader: me,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ThetaToOmegaNode {
    me: ProcessId,
    /// Sender of the last announcement from another process.
    heard: Option<ProcessId>,
    seq: u64,
    in_flight: bool,
    leader: ProcessId,
}

impl ThetaToOmegaNode {
    pub fn leader(&self) -> ProcessId {
        self.leader
    }
}

impl Automaton for ThetaToOmegaNode {
    fn deliver(&mut self, from: Option<ProcessId>, msg: &Payload) {
        if let (Payload::Announce { .. }, Some(q)) = (msg, from) {
            if q == self.me {
                self.in_flight = false;
            } else {
                self.heard = Some(q);
            }
        }
    }

    fn step(&mut self, ctx: &mut Ctx<'_>) -> bool {
        let trusted = ctx.trusted();
        let leader = if trusted {
            self.me
        } else {
            self.heard.unwrap_or(self.me)
        };
        let mut progressed = false;
        if leader != self.leader {
            self.leader = leader;
            ctx.output(DetectorValue::Process(leader));
            progressed = true;
        }
        if trusted && !self.in_flight {
            self.seq += 1;
            self.in_flight = true;
            ctx.broadcast(Payload::Announce { seq: self.seq });
            progressed = true;
        }
        progressed
    }

    fn round(&self) -> u32 {
        self.seq as u32
    }

    fn initial_output(&self) -> Option<DetectorValue> {
        Some(DetectorValue::Process(self.me))
    }

    fn is_finished(&self) -> bool {
        true
    }
}
