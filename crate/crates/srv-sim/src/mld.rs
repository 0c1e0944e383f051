//! Leakage-assertion engine: named, side-effect-free predicates over
//! (event, microarchitectural state) pairs, evaluated synchronously at every
//! pipeline event. A firing marks an optimization event that could carry
//! secret-dependent state out of the speculative domain.
//!
//! Predicates receive immutable snapshots, so running them cannot change the
//! simulation: the result of a run is bit-identical with and without them.

use crate::error::Result;
use crate::isa::{AccessKind, GadgetProgram};
use crate::pipeline::{
    execute, CoreConfig, EventSink, ExecResult, MachineEnv, TraceEvent, UarchView,
};

/// Authoring guidance tag: speculative predicates catch replay/flush events,
/// non-speculative ones catch timing-relevant triggers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MldKind {
    Speculative,
    NonSpeculative,
}

/// A leakage descriptor. `evaluate` must not mutate anything reachable from
/// the view; it sees memory-access state before the access applies.
pub trait MldPredicate {
    fn name(&self) -> &str;
    fn kind(&self) -> MldKind;
    fn evaluate(&self, event: &TraceEvent, view: &UarchView<'_>) -> bool;
}

/// One predicate firing.
#[derive(Debug, Clone, PartialEq)]
pub struct Firing {
    pub tick: u64,
    pub predicate: String,
    pub instr_seq: u32,
    pub lane: u32,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MldReport {
    pub firings: Vec<Firing>,
}

impl MldReport {
    pub fn count_for(&self, name: &str) -> usize {
        self.firings.iter().filter(|f| f.predicate == name).count()
    }
}

/// Evaluates every registered predicate against one event and returns the
/// firings it produced.
pub fn evaluate_mld_hooks(
    event: &TraceEvent,
    view: &UarchView<'_>,
    predicates: &[Box<dyn MldPredicate>],
) -> Vec<Firing> {
    let mut out = Vec::new();
    for p in predicates {
        if p.evaluate(event, view) {
            let (seq, lane) = match event {
                TraceEvent::MemAccess { seq, lane, .. } => (*seq, *lane),
                TraceEvent::ReplayDecision { seq, lane, .. } => (*seq, *lane),
                TraceEvent::Alu { seq, .. }
                | TraceEvent::Fence { seq, .. }
                | TraceEvent::RegionStart { seq, .. }
                | TraceEvent::RegionEnd { seq, .. } => (*seq, 0),
                _ => (0, 0),
            };
            out.push(Firing {
                tick: event.tick(),
                predicate: p.name().to_string(),
                instr_seq: seq,
                lane,
                detail: detail_of(event),
            });
        }
    }
    out
}

fn detail_of(event: &TraceEvent) -> String {
    match event {
        TraceEvent::MemAccess { addr, hit, .. } => format!("addr={addr:#x} {}", hit.label()),
        TraceEvent::ReplayDecision { vob, hob, .. } => format!("vob={vob} hob={hob}"),
        TraceEvent::BranchResolve { predicted, actual, .. } => {
            format!("predicted={predicted:?} actual={actual}")
        }
        TraceEvent::RegionEnd { pass, taint, .. } => format!("pass={pass} taint={taint}"),
        _ => String::new(),
    }
}

/// Engine: an event sink that runs predicates and accumulates the report.
pub struct MldEngine {
    predicates: Vec<Box<dyn MldPredicate>>,
    report: MldReport,
}

impl MldEngine {
    pub fn new(predicates: Vec<Box<dyn MldPredicate>>) -> Self {
        MldEngine { predicates, report: MldReport::default() }
    }

    pub fn into_report(self) -> MldReport {
        self.report
    }

    pub fn report(&self) -> &MldReport {
        &self.report
    }
}

impl EventSink for MldEngine {
    fn offer(&mut self, event: &TraceEvent, view: &UarchView<'_>) {
        let firings = evaluate_mld_hooks(event, view, &self.predicates);
        self.report.firings.extend(firings);
    }
}

/// Fires when a memory access finds its line already valid with a matching
/// tag, i.e. when the cache optimization is being used. Checked against the
/// pre-access state; tag and validity are evaluated across all ways of the
/// addressed set (the set-associative generalization of a direct-mapped
/// lookup).
pub struct DCacheMld;

impl MldPredicate for DCacheMld {
    fn name(&self) -> &str {
        "d_cache"
    }

    fn kind(&self) -> MldKind {
        MldKind::NonSpeculative
    }

    fn evaluate(&self, event: &TraceEvent, view: &UarchView<'_>) -> bool {
        match event {
            TraceEvent::MemAccess { addr, kind: AccessKind::Load | AccessKind::Store, .. } => {
                view.cache.probe(*addr).is_hit()
            }
            _ => false,
        }
    }
}

/// Fires when a branch prediction and its resolved outcome disagree.
pub struct BranchMld;

impl MldPredicate for BranchMld {
    fn name(&self) -> &str {
        "branch_pred"
    }

    fn kind(&self) -> MldKind {
        MldKind::Speculative
    }

    fn evaluate(&self, event: &TraceEvent, _view: &UarchView<'_>) -> bool {
        match event {
            TraceEvent::BranchResolve { predicted: Some(p), actual, .. } => *p != *actual,
            _ => false,
        }
    }
}

/// Fires for every LSQ entry whose horizontal overlap mask is set when a
/// region evaluates its replay register: that lane is about to be replayed.
pub struct SrvMld;

impl MldPredicate for SrvMld {
    fn name(&self) -> &str {
        "speculative_vectorization"
    }

    fn kind(&self) -> MldKind {
        MldKind::Speculative
    }

    fn evaluate(&self, event: &TraceEvent, view: &UarchView<'_>) -> bool {
        match event {
            TraceEvent::ReplayDecision { hob, .. } => {
                debug_assert!(view.lsq_entry.is_some());
                !hob.is_zero()
            }
            _ => false,
        }
    }
}

pub fn builtin_predicates() -> Vec<Box<dyn MldPredicate>> {
    vec![Box::new(DCacheMld), Box::new(BranchMld), Box::new(SrvMld)]
}

/// Runs a program with the given predicates attached and returns both the
/// execution result and the report.
pub fn run_with_mlds(
    program: &GadgetProgram,
    env: &mut MachineEnv,
    cfg: &CoreConfig,
    predicates: Vec<Box<dyn MldPredicate>>,
) -> Result<(ExecResult, MldReport)> {
    let mut engine = MldEngine::new(predicates);
    let result = execute(program, env, cfg, &mut engine)?;
    Ok((result, engine.into_report()))
}
