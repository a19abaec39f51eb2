//! Detector emulations. Each transformation is a process automaton that
//! maintains an emulated output; [`output_history`] assembles those outputs
//! from a trace into a history of the target detector.

mod leaders;
mod suspicion;

pub use leaders::{NToTheta, NToThetaNode, ThetaToOmega, ThetaToOmegaNode};
pub use suspicion::{Alg4, Alg4Node, Alg5, Alg5Mutant, Alg5Node};

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::detectors::{AnyHistory, DetectorKind, DetectorValue};
use crate::model::{History, ProcessId, Time};
use crate::simulator::{Delivery, EventKind, Trace};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransformError {
    #[error("{0} needs sender identities and cannot run in anonymous mode")]
    RequiresIdentities(&'static str),
    #[error("{0} runs in anonymous mode only")]
    RequiresAnonymity(&'static str),
    #[error("expected {expected} forced ids, got {found}")]
    IdCount { expected: usize, found: usize },
    #[error("trace output at {p} does not fit a {kind} history")]
    OutputType { p: ProcessId, kind: DetectorKind },
}

/// Catalog entry of a transformation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Transformation {
    pub name: &'static str,
    pub source: DetectorKind,
    pub target: DetectorKind,
    /// Needs sender identities.
    pub identified: bool,
    /// Runs as a message-passing protocol rather than a local map.
    pub distributed: bool,
}

pub const TRANSFORMATIONS: [Transformation; 8] = [
    Transformation {
        name: "alg4",
        source: DetectorKind::DiamondN,
        target: DetectorKind::DiamondP,
        identified: true,
        distributed: true,
    },
    Transformation {
        name: "alg5",
        source: DetectorKind::N,
        target: DetectorKind::P,
        identified: true,
        distributed: true,
    },
    Transformation {
        name: "n-to-theta",
        source: DetectorKind::N,
        target: DetectorKind::Theta,
        identified: false,
        distributed: true,
    },
    Transformation {
        name: "theta-to-omega",
        source: DetectorKind::Theta,
        target: DetectorKind::Omega,
        identified: true,
        distributed: true,
    },
    Transformation {
        name: "p-to-n",
        source: DetectorKind::P,
        target: DetectorKind::N,
        identified: false,
        distributed: false,
    },
    Transformation {
        name: "diamond-p-to-diamond-n",
        source: DetectorKind::DiamondP,
        target: DetectorKind::DiamondN,
        identified: false,
        distributed: false,
    },
    Transformation {
        name: "omega-to-theta",
        source: DetectorKind::Omega,
        target: DetectorKind::Theta,
        identified: false,
        distributed: false,
    },
    Transformation {
        name: "n-to-diamond-n",
        source: DetectorKind::N,
        target: DetectorKind::DiamondN,
        identified: false,
        distributed: false,
    },
];

pub fn transformation(name: &str) -> Option<Transformation> {
    TRANSFORMATIONS.iter().copied().find(|t| t.name == name)
}

pub(crate) fn require_identified(name: &'static str, mode: Delivery) -> Result<(), TransformError> {
    match mode {
        Delivery::Identified => Ok(()),
        Delivery::Anonymous => Err(TransformError::RequiresIdentities(name)),
    }
}

/// Crash count from a suspicion set: the number of suspected processes.
pub fn p_to_n(h: &History<BTreeSet<ProcessId>>) -> History<u32> {
    let mut out = h.map(|_, _, s| s.len() as u32);
    out.set_convergence(h.convergence());
    out
}

/// Same map as [`p_to_n`]; eventual accuracy carries over unchanged.
pub fn diamond_p_to_diamond_n(h: &History<BTreeSet<ProcessId>>) -> History<u32> {
    p_to_n(h)
}

/// Trust yourself exactly when the leader oracle names you.
pub fn omega_to_theta(h: &History<ProcessId>) -> History<bool> {
    let mut out = h.map(|p, _, &l| l == p);
    out.set_convergence(h.convergence());
    out
}

/// Every `N` history already is a `◇N` history.
pub fn n_to_diamond_n(h: &History<u32>) -> History<u32> {
    h.clone()
}

/// Emulated output before a process emits anything.
pub fn default_output(kind: DetectorKind, p: ProcessId) -> DetectorValue {
    match kind {
        DetectorKind::N | DetectorKind::DiamondN => DetectorValue::Count(0),
        DetectorKind::Theta => DetectorValue::Bool(false),
        DetectorKind::P | DetectorKind::DiamondP => DetectorValue::Set(BTreeSet::new()),
        DetectorKind::Omega => DetectorValue::Process(p),
    }
}

/// History of the emulated outputs in a trace: at each time, the last value
/// a process emitted, or its default before that. The horizon is the last
/// step of the trace.
pub fn output_history(trace: &Trace, kind: DetectorKind) -> Result<AnyHistory, TransformError> {
    let n = trace.header.n;
    let horizon: Time = trace.end.step;
    let mut rows: Vec<Vec<DetectorValue>> = Vec::with_capacity(n);
    for p in ProcessId::all(n) {
        let mut row = Vec::with_capacity(horizon as usize + 1);
        let mut cur = default_output(kind, p);
        let mut outs = trace.events.iter().filter_map(|e| match &e.kind {
            EventKind::Output { p: q, value } if *q == p => Some((e.step, value)),
            _ => None,
        });
        let mut next = outs.next();
        for t in 0..=horizon {
            while let Some((_, v)) = next.filter(|(s, _)| *s <= t) {
                cur = v.clone();
                next = outs.next();
            }
            row.push(cur.clone());
        }
        rows.push(row);
    }
    fn typed<V: crate::model::HistoryValue>(
        rows: Vec<Vec<DetectorValue>>,
        kind: DetectorKind,
        conv: impl Fn(&DetectorValue) -> Option<V>,
    ) -> Result<History<V>, TransformError> {
        let mut out = Vec::with_capacity(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            let typed: Option<Vec<V>> = row.iter().map(&conv).collect();
            out.push(typed.ok_or(TransformError::OutputType {
                p: ProcessId::from_index0(i),
                kind,
            })?);
        }
        Ok(History::from_rows(out).expect("rows share one length"))
    }
    Ok(match kind {
        DetectorKind::N => AnyHistory::N(typed(rows, kind, DetectorValue::as_count)?),
        DetectorKind::DiamondN => AnyHistory::DiamondN(typed(rows, kind, DetectorValue::as_count)?),
        DetectorKind::Theta => AnyHistory::Theta(typed(rows, kind, DetectorValue::as_bool)?),
        DetectorKind::P => AnyHistory::P(typed(rows, kind, as_set)?),
        DetectorKind::DiamondP => AnyHistory::DiamondP(typed(rows, kind, as_set)?),
        DetectorKind::Omega => AnyHistory::Omega(typed(rows, kind, |v| match v {
            DetectorValue::Process(p) => Some(*p),
            _ => None,
        })?),
    })
}

fn as_set(v: &DetectorValue) -> Option<BTreeSet<ProcessId>> {
    match v {
        DetectorValue::Set(s) => Some(s.clone()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::{DetectorSpec, DiamondNSpec, NSpec, OmegaSpec, PSpec, ThetaSpec};
    use crate::model::FailurePattern;

    fn p(i: u32) -> ProcessId {
        ProcessId::new(i)
    }

    #[test]
    fn perfect_suspicion_gives_exact_count() {
        let f = FailurePattern::from_pairs(3, &[(2, 4)]).unwrap();
        let perfect = History::from_fn(3, 8, |_, t| f.crashed_at(t));
        assert!(PSpec.validates(&perfect, &f).unwrap());
        let n = p_to_n(&perfect);
        for t in 0..=8 {
            assert_eq!(*n.get(p(1), t), f.crashed_count_at(t) as u32);
        }
        assert!(NSpec.validates(&n, &f).unwrap());
    }

    #[test]
    fn constant_leader_trusts_exactly_the_leader() {
        let f = FailurePattern::no_crashes(3);
        let omega = History::constant(3, 5, p(2));
        assert!(OmegaSpec.validates(&omega, &f).unwrap());
        let theta = omega_to_theta(&omega);
        for t in 0..=5 {
            assert_eq!(
                ProcessId::all(3)
                    .map(|q| *theta.get(q, t))
                    .collect::<Vec<_>>(),
                vec![false, true, false]
            );
        }
        assert!(ThetaSpec.validates(&theta, &f).unwrap());
    }

    #[test]
    fn diamond_only_history_is_not_n() {
        let f = FailurePattern::no_crashes(3);
        let h = History::from_fn(3, 12, |_, t| if t < 10 { 3 } else { 0 }).with_convergence(10);
        assert!(DiamondNSpec.validates(&n_to_diamond_n(&h), &f).unwrap());
        assert!(!NSpec.validates(&h, &f).unwrap());
    }

    #[test]
    fn catalog_lookup() {
        assert_eq!(transformation("alg5").unwrap().target, DetectorKind::P);
        assert!(transformation("alg9").is_none());
        assert_eq!(TRANSFORMATIONS.iter().filter(|t| t.identified).count(), 3);
    }
}
