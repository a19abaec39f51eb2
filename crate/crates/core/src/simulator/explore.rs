use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use super::trace::{EndReason, Trace, TraceEnd, TraceHeader};
use super::world::{Action, OracleSource, SimError, World};
use super::{Automaton, Bin, Monitor, Protocol};
use crate::model::SystemConfig;

/// Bounds of an exhaustive exploration. Crashes are explored as choices at
/// every state, so every crash placement of up to `max_crashes` processes is
/// covered; the oracle reports the exact number of crashes so far.
#[derive(Debug, Clone)]
pub struct ExploreConfig {
    pub cfg: SystemConfig,
    pub inputs: Vec<Bin>,
    pub seed: u64,
    pub max_crashes: usize,
    /// Only processes whose round is at most this may crash.
    pub crash_until_round: Option<u32>,
    pub max_states: usize,
    pub max_depth: usize,
    pub max_violations: usize,
}

impl ExploreConfig {
    pub fn new(cfg: SystemConfig, inputs: Vec<Bin>) -> Self {
        ExploreConfig {
            cfg,
            inputs,
            seed: 0,
            max_crashes: cfg.f,
            crash_until_round: None,
            max_states: 4_000_000,
            max_depth: 2_000,
            max_violations: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExploreViolation {
    pub message: String,
    /// Action sequence reproducing the violation from the initial state.
    pub schedule: Vec<Action>,
    pub trace: Trace,
}

#[derive(Debug, Clone)]
pub struct ExploreReport {
    /// Distinct states visited.
    pub states: usize,
    /// Distinct maximal schedules (complete executions), including ones
    /// cut at the depth bound.
    pub traces: u128,
    /// Schedules cut at the depth bound.
    pub truncated: u128,
    /// False when a budget stopped the search early.
    pub complete: bool,
    pub violations: Vec<ExploreViolation>,
}

impl ExploreReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

struct Search<'a, P: Protocol, M> {
    protocol: &'a P,
    config: &'a ExploreConfig,
    header: TraceHeader,
    memo: HashMap<u128, (u128, u128)>,
    path: Vec<Action>,
    violations: Vec<ExploreViolation>,
    aborted: bool,
    _monitor: std::marker::PhantomData<M>,
}

fn fingerprint<A: Automaton, M: Hash>(world: &World<A>, monitor: &M) -> u128 {
    let mut lo = DefaultHasher::new();
    world.hash_state(&mut lo);
    monitor.hash(&mut lo);
    let mut hi = DefaultHasher::new();
    0x9e37_79b9_7f4a_7c15u64.hash(&mut hi);
    world.hash_state(&mut hi);
    monitor.hash(&mut hi);
    ((hi.finish() as u128) << 64) | lo.finish() as u128
}

impl<P: Protocol, M: Monitor> Search<'_, P, M> {
    fn actions(&self, world: &World<P::Node>) -> (Vec<Action>, Vec<Action>) {
        let steps = world.enabled();
        let mut crashes = Vec::new();
        if world.crashed_count() < self.config.max_crashes {
            for p in world.config().processes() {
                let in_window = self
                    .config
                    .crash_until_round
                    .is_none_or(|r| world.node(p).round() <= r);
                if !world.is_crashed(p) && in_window {
                    crashes.push(Action::Crash(p));
                }
            }
        }
        (steps, crashes)
    }

    fn record(&mut self, message: String, truncated: bool) {
        if self.violations.len() >= self.config.max_violations {
            self.aborted = true;
            return;
        }
        let trace = replay(
            self.protocol,
            self.config,
            &self.path,
            self.header.clone(),
            truncated,
        )
        .expect("replaying an explored schedule");
        self.violations.push(ExploreViolation {
            message,
            schedule: self.path.clone(),
            trace,
        });
        if self.violations.len() >= self.config.max_violations {
            self.aborted = true;
        }
    }

    /// Returns `(paths, truncated paths)` below this state.
    fn visit(
        &mut self,
        world: World<P::Node>,
        monitor: M,
        depth: usize,
    ) -> Result<(u128, u128), SimError> {
        let fp = fingerprint(&world, &monitor);
        if let Some(&counts) = self.memo.get(&fp) {
            return Ok(counts);
        }
        if self.memo.len() >= self.config.max_states {
            self.aborted = true;
            return Ok((0, 0));
        }
        let (steps, crashes) = self.actions(&world);
        let mut paths = 0u128;
        let mut truncated = 0u128;
        if steps.is_empty() {
            paths += 1;
            if let Some(msg) = monitor.finish(false, &world.crashed_set()) {
                self.record(msg, false);
            }
        }
        if depth >= self.config.max_depth && !(steps.is_empty() && crashes.is_empty()) {
            if let Some(msg) = monitor.finish(true, &world.crashed_set()) {
                self.record(msg, true);
            }
            self.memo.insert(fp, (paths + 1, 1));
            return Ok((paths + 1, 1));
        }
        for action in steps.into_iter().chain(crashes) {
            if self.aborted {
                break;
            }
            let mut child = world.clone();
            let mut child_monitor = monitor.clone();
            let mut events = Vec::new();
            child.apply(action, &mut events)?;
            self.path.push(action);
            let failure = events.iter().find_map(|ev| child_monitor.observe(0, ev));
            match failure {
                Some(msg) => {
                    self.record(msg, false);
                    paths += 1;
                }
                None => {
                    let (p, t) = self.visit(child, child_monitor, depth + 1)?;
                    paths = paths.saturating_add(p);
                    truncated = truncated.saturating_add(t);
                }
            }
            self.path.pop();
        }
        if !self.aborted {
            self.memo.insert(fp, (paths, truncated));
        }
        Ok((paths, truncated))
    }
}

/// Enumerates every schedule of deliveries, steps and crash placements
/// reachable from the initial state, merging identical states.
pub fn explore<P: Protocol, M: Monitor>(
    protocol: &P,
    config: &ExploreConfig,
    monitor: M,
    header: TraceHeader,
) -> Result<ExploreReport, SimError> {
    let world = World::new(
        protocol,
        config.cfg,
        &config.inputs,
        config.seed,
        OracleSource::CrashCount,
        true,
    )?;
    let result = std::thread::scope(|scope| {
        std::thread::Builder::new()
            .stack_size(1 << 30)
            .spawn_scoped(scope, || {
                let mut search = Search {
                    protocol,
                    config,
                    header,
                    memo: HashMap::new(),
                    path: Vec::new(),
                    violations: Vec::new(),
                    aborted: false,
                    _monitor: std::marker::PhantomData,
                };
                let (traces, truncated) = search.visit(world, monitor, 0)?;
                Ok(ExploreReport {
                    states: search.memo.len(),
                    traces,
                    truncated,
                    complete: !search.aborted && truncated == 0,
                    violations: search.violations,
                })
            })
            .expect("spawning the exploration thread")
            .join()
    });
    match result {
        Ok(r) => r,
        Err(panic) => std::panic::resume_unwind(panic),
    }
}

/// Re-executes an explored schedule and records its trace.
pub fn replay<P: Protocol>(
    protocol: &P,
    config: &ExploreConfig,
    schedule: &[Action],
    header: TraceHeader,
    truncated: bool,
) -> Result<Trace, SimError> {
    let mut world = World::new(
        protocol,
        config.cfg,
        &config.inputs,
        config.seed,
        OracleSource::CrashCount,
        true,
    )?;
    let mut events = Vec::new();
    for &a in schedule {
        world.apply(a, &mut events)?;
    }
    let end = TraceEnd {
        step: world.time(),
        reason: if truncated {
            EndReason::Horizon
        } else {
            EndReason::Quiescent
        },
        truncated,
        pending: world.pending().len(),
        crashed: world.crashed_set(),
        decisions: world.decisions(),
        rounds: world.nodes().iter().map(Automaton::round).collect(),
    };
    Ok(Trace {
        header,
        events,
        end,
    })
}
