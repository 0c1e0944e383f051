//! Machine models: scalar in-order (the oracle), scalar out-of-order with a
//! memory-dependence predictor, and the vector modes with region replay.
//!
//! Timing is additive event latency: each memory access contributes its
//! hit/miss latency, ALU work contributes one tick, and replay passes
//! serialize. Every claim tested against this model is ordinal (hit versus
//! miss, serialized versus overlapped), not absolute-cycle.

mod ooo;
mod srv;

use std::collections::BTreeMap;

use crate::error::{Result, SimError};
use crate::isa::{
    eval_scalar_iter, layout_memory, AccessKind, GadgetProgram, LayoutConfig, Memory,
};
use crate::lsu::{ByteMask, LsqEntry, ReplayRegister};
use crate::memhier::{CacheConfig, CacheState, HitLevel, TimerModel, TimerState};

pub use ooo::{run_ooo_stl, GuardedRunner, MemDepPredictor};
pub use srv::run_srv;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    ScalarInOrder,
    ScalarOoo,
    Srv,
    FlexVec,
    ScalarFallback,
    VfencedSrv,
}

impl Strategy {
    pub fn is_vector(self) -> bool {
        matches!(
            self,
            Strategy::Srv | Strategy::FlexVec | Strategy::ScalarFallback | Strategy::VfencedSrv
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::ScalarInOrder => "scalar",
            Strategy::ScalarOoo => "scalar_ooo",
            Strategy::Srv => "srv",
            Strategy::FlexVec => "flexvec",
            Strategy::ScalarFallback => "scalar_fallback",
            Strategy::VfencedSrv => "vfenced_srv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mitigation {
    None,
    /// Fences between statements and around the region; forbids load-over-
    /// store reordering in the out-of-order model.
    MemFence,
    /// Recompilation with fences: vectorization is gone, the loop runs
    /// scalar in order.
    FenceRecompiledScalar,
    /// Predicates the region to one lane at a time.
    Vfence,
    /// Speculative fills become visible only at region commit and are
    /// dropped for replayed lanes.
    VisibilityDelay,
    /// Loads inside a speculative window never modify cache state.
    CfenceStyle,
    /// Disables out-of-order memory execution. Vector regions are unaffected.
    InOrder,
}

impl Mitigation {
    pub fn name(self) -> &'static str {
        match self {
            Mitigation::None => "none",
            Mitigation::MemFence => "mem_fence",
            Mitigation::FenceRecompiledScalar => "fence_recompiled_scalar",
            Mitigation::Vfence => "vfence",
            Mitigation::VisibilityDelay => "visibility_delay",
            Mitigation::CfenceStyle => "cfence_style",
            Mitigation::InOrder => "in_order",
        }
    }

    pub const ALL: [Mitigation; 7] = [
        Mitigation::None,
        Mitigation::MemFence,
        Mitigation::InOrder,
        Mitigation::Vfence,
        Mitigation::VisibilityDelay,
        Mitigation::CfenceStyle,
        Mitigation::FenceRecompiledScalar,
    ];

    pub fn parse(s: &str) -> Result<Mitigation> {
        Mitigation::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Mitigation::ALL.iter().map(|m| m.name()).collect();
                SimError::Config(format!("unknown mitigation '{s}', valid: {}", valid.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayPolicy {
    /// Replay exactly the lanes that used erroneous data.
    ErroneousOnly,
    /// Replay the erroneous lanes and every active lane after the first one.
    ErroneousAndLater,
}

#[derive(Debug, Clone)]
pub struct CoreConfig {
    pub width: u32,
    pub strategy: Strategy,
    pub mitigation: Mitigation,
    pub replay_policy: ReplayPolicy,
    /// Defaults to width - 1.
    pub replay_limit: Option<u32>,
    /// Confidence needed before the dependence predictor declares no-alias.
    pub mdp_threshold: u32,
    pub branch_counter_bits: u8,
    /// Tick cost of the run-time dependence check preceding each FlexVec chunk.
    pub flexvec_check_overhead: u64,
}

impl Default for CoreConfig {
    fn default() -> Self {
        CoreConfig {
            width: 16,
            strategy: Strategy::Srv,
            mitigation: Mitigation::None,
            replay_policy: ReplayPolicy::ErroneousOnly,
            replay_limit: None,
            mdp_threshold: 4,
            branch_counter_bits: 2,
            flexvec_check_overhead: 12,
        }
    }
}

impl CoreConfig {
    pub fn replay_limit(&self) -> u32 {
        self.replay_limit.unwrap_or(self.width.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if ![2, 4, 8, 16, 32].contains(&self.width) {
            return Err(SimError::Config(format!("width {} not in {{2,4,8,16,32}}", self.width)));
        }
        if self.replay_limit() > self.width - 1 {
            return Err(SimError::Config("replay limit must be at most width - 1".into()));
        }
        if self.branch_counter_bits != 2 {
            return Err(SimError::Config("only 2-bit branch counters are modeled".into()));
        }
        Ok(())
    }
}

/// All mutable machine state owned by one run.
#[derive(Debug, Clone)]
pub struct MachineEnv {
    pub memory: Memory,
    pub cache: CacheState,
    pub timer: TimerState,
}

impl MachineEnv {
    pub fn build(
        program: &GadgetProgram,
        layout: &LayoutConfig,
        cache: CacheConfig,
        timer: TimerModel,
    ) -> Result<MachineEnv> {
        program.validate()?;
        cache.validate()?;
        let map = layout_memory(program, layout)?;
        Ok(MachineEnv {
            memory: Memory::build(program, &map),
            cache: CacheState::new(cache),
            timer: TimerState::new(timer)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SquashReason {
    MemOrder,
    Branch,
}

/// One microarchitectural event. The `lane` column carries the iteration
/// index in the scalar models.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceEvent {
    MemAccess {
        tick: u64,
        seq: u32,
        lane: u32,
        kind: AccessKind,
        addr: u64,
        size: u8,
        value: i64,
        hit: HitLevel,
        latency: u64,
    },
    Alu { tick: u64, seq: u32, stmt: usize, lanes: u32 },
    Fence { tick: u64, seq: u32 },
    RegionStart { tick: u64, seq: u32, chunk: usize },
    /// Emitted once per LSQ entry when a region evaluates its replay
    /// register.
    ReplayDecision { tick: u64, seq: u32, lane: u32, vob: ByteMask, hob: ByteMask },
    RegionEnd { tick: u64, seq: u32, chunk: usize, pass: u32, taint: ReplayRegister },
    RegionCommit { tick: u64, chunk: usize, replays: u32 },
    BranchResolve { tick: u64, site: u64, predicted: Option<bool>, actual: bool },
    Squash { tick: u64, reason: SquashReason },
}

impl TraceEvent {
    pub fn tick(&self) -> u64 {
        match self {
            TraceEvent::MemAccess { tick, .. }
            | TraceEvent::Alu { tick, .. }
            | TraceEvent::Fence { tick, .. }
            | TraceEvent::RegionStart { tick, .. }
            | TraceEvent::ReplayDecision { tick, .. }
            | TraceEvent::RegionEnd { tick, .. }
            | TraceEvent::RegionCommit { tick, .. }
            | TraceEvent::BranchResolve { tick, .. }
            | TraceEvent::Squash { tick, .. } => *tick,
        }
    }
}

/// Read-only view of the machine offered to event sinks.
pub struct UarchView<'a> {
    pub cache: &'a CacheState,
    pub branch: Option<&'a BranchPredictor>,
    pub lsq_entry: Option<&'a LsqEntry>,
}

/// Observer of pipeline events. For memory accesses the view shows the state
/// before the access updates it.
pub trait EventSink {
    fn offer(&mut self, event: &TraceEvent, view: &UarchView<'_>);
}

/// Sink that ignores everything.
pub struct NoSink;

impl EventSink for NoSink {
    fn offer(&mut self, _event: &TraceEvent, _view: &UarchView<'_>) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub array: usize,
    pub index: u64,
    pub addr: u64,
    pub latency: u64,
    pub observed: u64,
    pub hit: HitLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassInfo {
    pub active: ReplayRegister,
    pub taint: ReplayRegister,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChunkReplays {
    pub passes: Vec<PassInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecResult {
    pub final_memory: Memory,
    pub trace: Vec<TraceEvent>,
    pub cycles: u64,
    /// Replays per chunk; always empty for the scalar models.
    pub replay_counts: Vec<u32>,
    pub replay_log: Vec<ChunkReplays>,
    pub squash_count: u32,
    pub probes: Vec<ProbeResult>,
    /// First chunk that violated and triggered scalar fallback, if any.
    pub fallback_chunk: Option<usize>,
}

/// Shared bookkeeping for all runners.
pub(crate) struct ExecCtx<'a, S: EventSink> {
    pub program: &'a GadgetProgram,
    pub env: &'a mut MachineEnv,
    pub cfg: &'a CoreConfig,
    pub sink: &'a mut S,
    pub trace: Vec<TraceEvent>,
    pub tick: u64,
    pub squash_count: u32,
    pub probes: Vec<ProbeResult>,
    /// Next free instruction sequence number.
    pub next_seq: u32,
}

impl<'a, S: EventSink> ExecCtx<'a, S> {
    pub fn new(program: &'a GadgetProgram, env: &'a mut MachineEnv, cfg: &'a CoreConfig, sink: &'a mut S) -> Self {
        ExecCtx {
            program,
            env,
            cfg,
            sink,
            trace: Vec::new(),
            tick: 0,
            squash_count: 0,
            probes: Vec::new(),
            next_seq: 0,
        }
    }

    pub fn take_seq(&mut self) -> u32 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    pub fn emit(&mut self, event: TraceEvent) {
        let view = UarchView { cache: &self.env.cache, branch: None, lsq_entry: None };
        self.sink.offer(&event, &view);
        self.trace.push(event);
    }

    pub fn emit_with_entry(&mut self, event: TraceEvent, entry: &LsqEntry) {
        let view = UarchView { cache: &self.env.cache, branch: None, lsq_entry: Some(entry) };
        self.sink.offer(&event, &view);
        self.trace.push(event);
    }

    /// Cache behavior for one access under the current mitigation. Returns
    /// the observed level and whether the fill may update cache state now.
    #[allow(clippy::too_many_arguments)]
    pub fn mem_access(
        &mut self,
        seq: u32,
        lane: u32,
        kind: AccessKind,
        addr: u64,
        size: u8,
        value: i64,
        vis: CacheVis,
    ) -> (HitLevel, u64) {
        let (hit, latency) = self.env.cache.access_nofill(addr);
        let event = TraceEvent::MemAccess { tick: self.tick, seq, lane, kind, addr, size, value, hit, latency };
        // Sinks see the state before the access changes it.
        self.emit(event);
        if matches!(vis, CacheVis::Normal) {
            self.env.cache.access(addr, kind);
        }
        self.tick += latency;
        (hit, latency)
    }

    pub fn run_epilogue(&mut self) -> Result<()> {
        let program = self.program;
        for probe in &program.epilogue {
            let id = self.env.memory.id(&probe.array).expect("validated");
            let (addr, size) = self.env.memory.resolve(id, probe.index as i64, AccessKind::Load)?;
            let value = self.env.memory.load_le(addr, size).expect("resolved");
            let seq = self.take_seq();
            let (hit, latency) =
                self.mem_access(seq, 0, AccessKind::Load, addr, size, value, CacheVis::Normal);
            let observed = crate::memhier::observe(latency, &mut self.env.timer);
            self.probes.push(ProbeResult { array: id, index: probe.index, addr, latency, observed, hit });
        }
        Ok(())
    }

    pub fn finish(
        self,
        replay_counts: Vec<u32>,
        replay_log: Vec<ChunkReplays>,
        fallback_chunk: Option<usize>,
    ) -> ExecResult {
        ExecResult {
            final_memory: self.env.memory.clone(),
            cycles: self.tick,
            trace: self.trace,
            replay_counts,
            replay_log,
            squash_count: self.squash_count,
            probes: self.probes,
            fallback_chunk,
        }
    }
}

/// Whether a memory access may update cache state when it executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheVis {
    Normal,
    /// Latency is observable, the fill is suppressed.
    Suppressed,
}

/// Scalar in-order execution: the reference model. The strategy field of the
/// config is ignored.
pub fn run_scalar<S: EventSink>(
    program: &GadgetProgram,
    env: &mut MachineEnv,
    cfg: &CoreConfig,
    sink: &mut S,
) -> Result<ExecResult> {
    cfg.validate()?;
    let mut ctx = ExecCtx::new(program, env, cfg, sink);
    for z in 0..program.trip_count {
        let events = {
            let mem = &mut ctx.env.memory;
            eval_scalar_iter(program, z, mem)?
        };
        let mut stmt = 0usize;
        for ev in events {
            if ev.kind == AccessKind::Store {
                // One ALU op finishes each statement before its store.
                let seq = ctx.take_seq();
                ctx.emit(TraceEvent::Alu { tick: ctx.tick, seq, stmt, lanes: 1 });
                ctx.tick += 1;
                stmt += 1;
            }
            let seq = ctx.take_seq();
            ctx.mem_access(seq, z as u32, ev.kind, ev.addr, ev.size, ev.value, CacheVis::Normal);
        }
    }
    ctx.run_epilogue()?;
    Ok(ctx.finish(Vec::new(), Vec::new(), None))
}

/// 2-bit saturating per-site branch predictor. A site predicts only after its
/// first resolution; the first outcome seeds a weak bias in its direction.
#[derive(Debug, Clone, Default)]
pub struct BranchPredictor {
    table: BTreeMap<u64, u8>,
}

impl BranchPredictor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn predict(&self, site: u64) -> Option<bool> {
        self.table.get(&site).map(|c| *c >= 2)
    }

    pub fn counter(&self, site: u64) -> Option<u8> {
        self.table.get(&site).copied()
    }

    /// Records the outcome and returns the prediction that was in effect.
    pub fn resolve(&mut self, site: u64, taken: bool) -> Option<bool> {
        let prediction = self.predict(site);
        match self.table.get_mut(&site) {
            Some(c) => {
                if taken {
                    *c = (*c + 1).min(3);
                } else {
                    *c = c.saturating_sub(1);
                }
            }
            None => {
                self.table.insert(site, if taken { 2 } else { 1 });
            }
        }
        prediction
    }
}

/// Runs a program under the configured strategy and mitigation.
pub fn execute<S: EventSink>(
    program: &GadgetProgram,
    env: &mut MachineEnv,
    cfg: &CoreConfig,
    sink: &mut S,
) -> Result<ExecResult> {
    cfg.validate()?;
    if cfg.mitigation == Mitigation::FenceRecompiledScalar {
        return run_scalar(program, env, cfg, sink);
    }
    match cfg.strategy {
        Strategy::ScalarInOrder => run_scalar(program, env, cfg, sink),
        Strategy::ScalarOoo => run_ooo_stl(program, env, cfg, sink),
        _ => srv::run_vector(program, env, cfg, sink),
    }
}
