//! Vector execution. A speculative region executes all active lanes at once,
//! records every access in the LSQ, and evaluates the replay register at the
//! region end: tainted lanes re-execute with the taint as predicate until the
//! register is clean, then buffered stores drain in scalar order. FlexVec
//! chunks instead run a concrete dependence check up front and execute safe
//! lane groups back to back; the fallback strategy abandons vector execution
//! for the rest of the program after its first violation.
//!
//! Stores are architecturally buffered until commit. A load sees the buffered
//! store that is youngest among those older than it in (lane, seq) order;
//! this is what replay passes rely on to pick up corrected values from lower
//! lanes. Cache state is exempt from rollback, which is precisely the leak
//! under study.

use std::collections::BTreeMap;

use crate::error::{Result, SimError};
use crate::isa::eval::{apply_binop, eval_pure};
use crate::isa::{eval_scalar_iter, AccessKind, GadgetProgram, Memory};
use crate::lsu::{self, LsqEntry, ReplayRegister};
use crate::vectorize::{
    flexvec_partition, insert_fences, vectorize_loop, vfence_transform, Chunk, FencePlacement,
    SiteExpr, SiteIndexRef, SiteScale, VectorOpcode, VectorProgram, VectorStrategy,
};

use super::{
    CacheVis, ChunkReplays, CoreConfig, EventSink, ExecCtx, ExecResult, MachineEnv, Mitigation,
    PassInfo, ReplayPolicy, SquashReason, Strategy, TraceEvent,
};

#[derive(Debug, Clone, Copy)]
struct StoreRec {
    addr: u64,
    size: u8,
    value: i64,
}

/// Buffered stores keyed by (instr_seq, lane); replays overwrite in place.
type StoreBuf = BTreeMap<(u32, u32), StoreRec>;

/// Deferred cache fill: (pass, lane, addr, kind).
type PendingFills = Vec<(u32, u32, u64, AccessKind)>;

fn read_visible(mem: &Memory, buf: &StoreBuf, addr: u64, size: u8, seq: u32, lane: u32) -> i64 {
    let mut out: u64 = 0;
    for k in 0..size as u64 {
        let b = addr + k;
        let mut byte: u8 = mem.byte_at(b).unwrap_or(0);
        let mut best: Option<(u32, u32)> = None; // (lane, seq) of the winning store
        for (&(s_seq, s_lane), rec) in buf.iter() {
            if !lsu::is_older((s_seq, s_lane), (seq, lane)) {
                continue;
            }
            if b < rec.addr || b >= rec.addr + rec.size as u64 {
                continue;
            }
            let key = (s_lane, s_seq);
            if best.is_none() || Some(key) > best {
                best = Some(key);
                byte = ((rec.value as u64) >> (8 * (b - rec.addr))) as u8;
            }
        }
        out |= (byte as u64) << (8 * k);
    }
    out as i64
}

pub(super) fn eval_site_index(idx: &SiteIndexRef, z: i64, lane: usize, vals: &[Vec<i64>]) -> i64 {
    match idx {
        SiteIndexRef::Affine { scale, offset } => z.wrapping_mul(*scale).wrapping_add(*offset),
        SiteIndexRef::Const(c) => *c,
        SiteIndexRef::FromSite { site, scale, offset } => {
            let v = vals[*site][lane];
            let s = match scale {
                SiteScale::Const(k) => *k,
                SiteScale::Expr(e) => eval_pure(e, z),
            };
            v.wrapping_mul(s).wrapping_add(*offset)
        }
    }
}

pub(super) fn eval_site_expr(e: &SiteExpr, z: i64, lane: usize, vals: &[Vec<i64>]) -> i64 {
    match e {
        SiteExpr::Site(s) => vals[*s][lane],
        SiteExpr::Lit(n) => *n,
        SiteExpr::Z => z,
        SiteExpr::Bin { op, lhs, rhs } => apply_binop(
            *op,
            eval_site_expr(lhs, z, lane, vals),
            eval_site_expr(rhs, z, lane, vals),
        ),
        SiteExpr::Select { cond, then_val, else_val } => {
            let c = eval_site_expr(cond, z, lane, vals);
            let t = eval_site_expr(then_val, z, lane, vals);
            let f = eval_site_expr(else_val, z, lane, vals);
            if c != 0 {
                t
            } else {
                f
            }
        }
    }
}

fn full_predicate(active: u32) -> ReplayRegister {
    ReplayRegister::from_bits(if active >= 32 { u32::MAX } else { (1u32 << active) - 1 })
}

struct PassOutput {
    lsq: Vec<LsqEntry>,
}

#[allow(clippy::too_many_arguments)]
fn run_pass<S: EventSink>(
    ctx: &mut ExecCtx<'_, S>,
    vp: &VectorProgram,
    chunk: &Chunk,
    chunk_idx: usize,
    predicate: ReplayRegister,
    store_buf: &mut StoreBuf,
    speculative: bool,
    pass: u32,
    pending: &mut PendingFills,
) -> Result<PassOutput> {
    let stmts = &vp.stmts;
    let width = chunk.active as usize;
    let mut site_vals: Vec<Vec<Vec<i64>>> =
        stmts.iter().map(|st| vec![vec![0i64; width]; st.sites.len()]).collect();
    let mut rhs_vals: Vec<Vec<i64>> = vec![vec![0i64; width]; stmts.len()];
    let mut lsq: Vec<LsqEntry> = Vec::new();

    let defer_fills = speculative && ctx.cfg.mitigation == Mitigation::VisibilityDelay;
    let cfence = speculative && ctx.cfg.mitigation == Mitigation::CfenceStyle;

    for instr in &chunk.instrs {
        let seq = instr.seq;
        match instr.opcode {
            VectorOpcode::SrvStart => {
                ctx.emit(TraceEvent::RegionStart { tick: ctx.tick, seq, chunk: chunk_idx });
            }
            VectorOpcode::SrvEnd => {
                // Serialization point; the replay decision is evaluated after
                // the instruction walk.
            }
            VectorOpcode::Fence | VectorOpcode::Vfence => {
                ctx.emit(TraceEvent::Fence { tick: ctx.tick, seq });
                ctx.tick += 1;
            }
            VectorOpcode::VGather { stmt, site } | VectorOpcode::VLoadContig { stmt, site } => {
                for lane in 0..chunk.active {
                    if !predicate.contains(lane) {
                        continue;
                    }
                    let z = (chunk.base + lane as u64) as i64;
                    let st = &stmts[stmt];
                    let idx = eval_site_index(&st.sites[site].index, z, lane as usize, &site_vals[stmt]);
                    let (addr, size) =
                        ctx.env.memory.resolve(st.sites[site].array, idx, AccessKind::Load)?;
                    let value = read_visible(&ctx.env.memory, store_buf, addr, size, seq, lane);
                    site_vals[stmt][site][lane as usize] = value;
                    lsq.push(LsqEntry::new(seq, lane, AccessKind::Load, addr, size));
                    let vis = if defer_fills || cfence { CacheVis::Suppressed } else { CacheVis::Normal };
                    ctx.mem_access(seq, lane, AccessKind::Load, addr, size, value, vis);
                    if defer_fills {
                        pending.push((pass, lane, addr, AccessKind::Load));
                    }
                }
            }
            VectorOpcode::VAlu { stmt } => {
                for lane in 0..chunk.active {
                    if !predicate.contains(lane) {
                        continue;
                    }
                    let z = (chunk.base + lane as u64) as i64;
                    rhs_vals[stmt][lane as usize] =
                        eval_site_expr(&stmts[stmt].rhs, z, lane as usize, &site_vals[stmt]);
                }
                ctx.emit(TraceEvent::Alu { tick: ctx.tick, seq, stmt, lanes: predicate.count() });
                ctx.tick += 1;
            }
            VectorOpcode::VScatter { stmt } | VectorOpcode::VStoreContig { stmt } => {
                for lane in 0..chunk.active {
                    if !predicate.contains(lane) {
                        continue;
                    }
                    let z = (chunk.base + lane as u64) as i64;
                    let st = &stmts[stmt];
                    let idx = eval_site_index(&st.dst_index, z, lane as usize, &site_vals[stmt]);
                    let (addr, size) = ctx.env.memory.resolve(st.dst_array, idx, AccessKind::Store)?;
                    let value = rhs_vals[stmt][lane as usize];
                    store_buf.insert((seq, lane), StoreRec { addr, size, value });
                    lsq.push(LsqEntry::new(seq, lane, AccessKind::Store, addr, size));
                    let vis = if defer_fills { CacheVis::Suppressed } else { CacheVis::Normal };
                    ctx.mem_access(seq, lane, AccessKind::Store, addr, size, value, vis);
                    if defer_fills {
                        pending.push((pass, lane, addr, AccessKind::Store));
                    }
                }
            }
        }
    }
    Ok(PassOutput { lsq })
}

/// Region-end evaluation: masks, replay-decision events, taint.
fn evaluate_region<S: EventSink>(
    ctx: &mut ExecCtx<'_, S>,
    chunk_idx: usize,
    pass: u32,
    predicate: ReplayRegister,
    lsq: &mut [LsqEntry],
    end_seq: u32,
) -> ReplayRegister {
    lsu::analyze_region(lsq);
    for entry in lsq.iter() {
        let event = TraceEvent::ReplayDecision {
            tick: ctx.tick,
            seq: entry.instr_seq,
            lane: entry.lane,
            vob: entry.vob,
            hob: entry.hob,
        };
        ctx.emit_with_entry(event, entry);
    }
    let mut taint = lsu::mark_replay(lsq);
    if ctx.cfg.replay_policy == ReplayPolicy::ErroneousAndLater {
        if let Some(min) = taint.min_lane() {
            for lane in min..32 {
                if predicate.contains(lane) {
                    taint.set(lane);
                }
            }
        }
    }
    ctx.emit(TraceEvent::RegionEnd { tick: ctx.tick, seq: end_seq, chunk: chunk_idx, pass, taint });
    taint
}

fn commit_stores<S: EventSink>(ctx: &mut ExecCtx<'_, S>, store_buf: &StoreBuf) {
    let mut recs: Vec<(&(u32, u32), &StoreRec)> = store_buf.iter().collect();
    recs.sort_by_key(|((seq, lane), _)| (*lane, *seq));
    for (_, rec) in recs {
        ctx.env.memory.store_le(rec.addr, rec.size, rec.value);
    }
}

fn apply_pending_fills<S: EventSink>(
    ctx: &mut ExecCtx<'_, S>,
    pending: &PendingFills,
    dropped: &[ReplayRegister],
) {
    for &(pass, lane, addr, kind) in pending {
        let was_replayed = dropped.get(pass as usize).is_some_and(|t| t.contains(lane));
        if !was_replayed {
            ctx.env.cache.access(addr, kind);
        }
    }
}

fn run_chunk_scalar<S: EventSink>(ctx: &mut ExecCtx<'_, S>, chunk: &Chunk) -> Result<()> {
    let program = ctx.program;
    for z in chunk.base..chunk.base + chunk.active as u64 {
        let events = eval_scalar_iter(program, z, &mut ctx.env.memory)?;
        let mut stmt = 0usize;
        for ev in events {
            if ev.kind == AccessKind::Store {
                let seq = ctx.take_seq();
                ctx.emit(TraceEvent::Alu { tick: ctx.tick, seq, stmt, lanes: 1 });
                ctx.tick += 1;
                stmt += 1;
            }
            let seq = ctx.take_seq();
            ctx.mem_access(seq, z as u32, ev.kind, ev.addr, ev.size, ev.value, CacheVis::Normal);
        }
    }
    Ok(())
}

/// Concrete cross-lane read-after-write pairs for one chunk, derived from a
/// scalar simulation of the chunk at its entry memory state.
fn concrete_deps(program: &GadgetProgram, memory: &Memory, chunk: &Chunk) -> Result<Vec<(u32, u32)>> {
    let mut scratch = memory.clone();
    let mut loads: Vec<Vec<(u64, u8)>> = Vec::with_capacity(chunk.active as usize);
    let mut stores: Vec<Vec<(u64, u8)>> = Vec::with_capacity(chunk.active as usize);
    for lane in 0..chunk.active {
        let events = eval_scalar_iter(program, chunk.base + lane as u64, &mut scratch)?;
        let mut l = Vec::new();
        let mut s = Vec::new();
        for ev in events {
            match ev.kind {
                AccessKind::Load => l.push((ev.addr, ev.size)),
                AccessKind::Store => s.push((ev.addr, ev.size)),
            }
        }
        loads.push(l);
        stores.push(s);
    }
    let ranges_overlap = |a: (u64, u8), b: (u64, u8)| {
        a.0 < b.0 + b.1 as u64 && b.0 < a.0 + a.1 as u64
    };
    let mut deps = Vec::new();
    for w in 0..chunk.active {
        for r in w + 1..chunk.active {
            let conflict = stores[w as usize]
                .iter()
                .any(|&sa| loads[r as usize].iter().any(|&la| ranges_overlap(sa, la)));
            if conflict {
                deps.push((w, r));
            }
        }
    }
    Ok(deps)
}

fn run_chunk_flexvec<S: EventSink>(
    ctx: &mut ExecCtx<'_, S>,
    vp: &VectorProgram,
    chunk: &Chunk,
    chunk_idx: usize,
) -> Result<()> {
    // Compiler-generated run-time check, modeled as an oracle-precise
    // dependence set with a fixed tick cost.
    ctx.tick += ctx.cfg.flexvec_check_overhead;
    let deps = concrete_deps(ctx.program, &ctx.env.memory, chunk)?;
    let groups = flexvec_partition(&deps, chunk.active);
    for group in groups {
        let mut predicate = ReplayRegister::default();
        for lane in group {
            predicate.set(lane);
        }
        let mut store_buf = StoreBuf::new();
        let mut pending = PendingFills::new();
        run_pass(ctx, vp, chunk, chunk_idx, predicate, &mut store_buf, false, 0, &mut pending)?;
        // Groups are non-speculative: stores drain as each group retires.
        commit_stores(ctx, &store_buf);
    }
    Ok(())
}

enum RegionOutcome {
    Committed { replays: u32, passes: Vec<PassInfo> },
    Violated { passes: Vec<PassInfo> },
}

#[allow(clippy::too_many_arguments)]
fn run_chunk_region<S: EventSink>(
    ctx: &mut ExecCtx<'_, S>,
    vp: &VectorProgram,
    chunk: &Chunk,
    chunk_idx: usize,
    fallback_probe: bool,
) -> Result<RegionOutcome> {
    let end_seq = chunk.instrs.last().map(|i| i.seq).unwrap_or(0);
    let mut store_buf = StoreBuf::new();
    let mut pending = PendingFills::new();
    let mut passes: Vec<PassInfo> = Vec::new();
    let mut taint_per_pass: Vec<ReplayRegister> = Vec::new();
    let mut predicate = full_predicate(chunk.active);
    let mut replays = 0u32;
    loop {
        let pass = passes.len() as u32;
        let mut out = run_pass(
            ctx, vp, chunk, chunk_idx, predicate, &mut store_buf, true, pass, &mut pending,
        )?;
        let taint = evaluate_region(ctx, chunk_idx, pass, predicate, &mut out.lsq, end_seq);
        passes.push(PassInfo { active: predicate, taint });
        taint_per_pass.push(taint);
        if taint.is_empty() {
            break;
        }
        if fallback_probe {
            return Ok(RegionOutcome::Violated { passes });
        }
        if replays == ctx.cfg.replay_limit() {
            return Err(SimError::ReplayBudgetExceeded {
                chunk: chunk_idx,
                limit: ctx.cfg.replay_limit(),
            });
        }
        replays += 1;
        predicate = taint;
    }
    commit_stores(ctx, &store_buf);
    apply_pending_fills(ctx, &pending, &taint_per_pass);
    ctx.emit(TraceEvent::RegionCommit { tick: ctx.tick, chunk: chunk_idx, replays });
    Ok(RegionOutcome::Committed { replays, passes })
}

/// Vector-mode entry point shared by all four strategies.
pub(super) fn run_vector<S: EventSink>(
    program: &GadgetProgram,
    env: &mut MachineEnv,
    cfg: &CoreConfig,
    sink: &mut S,
) -> Result<ExecResult> {
    let base = match cfg.strategy {
        Strategy::Srv | Strategy::VfencedSrv => VectorStrategy::Srv,
        Strategy::FlexVec => VectorStrategy::FlexVec,
        Strategy::ScalarFallback => VectorStrategy::ScalarFallback,
        other => {
            return Err(SimError::Config(format!(
                "vector runner invoked with scalar strategy {}",
                other.name()
            )))
        }
    };
    let mut vp = vectorize_loop(program, cfg.width, base)?;
    let want_vfence = cfg.strategy == Strategy::VfencedSrv || cfg.mitigation == Mitigation::Vfence;
    if want_vfence && vp.strategy == VectorStrategy::Srv {
        vp = vfence_transform(&vp)?;
    }
    if cfg.mitigation == Mitigation::MemFence {
        vp = insert_fences(&vp, FencePlacement::BetweenStatements);
        vp = insert_fences(&vp, FencePlacement::AroundRegion);
    }

    let mut ctx = ExecCtx::new(program, env, cfg, sink);
    ctx.next_seq = vp.chunks.iter().map(|c| c.instrs.len() as u32).sum();

    let mut replay_counts = Vec::new();
    let mut replay_log = Vec::new();
    let mut fallback_chunk = None;

    for (chunk_idx, chunk) in vp.chunks.iter().enumerate() {
        if fallback_chunk.is_some() {
            run_chunk_scalar(&mut ctx, chunk)?;
            replay_counts.push(0);
            replay_log.push(ChunkReplays::default());
            continue;
        }
        match vp.strategy {
            VectorStrategy::FlexVec => {
                run_chunk_flexvec(&mut ctx, &vp, chunk, chunk_idx)?;
                replay_counts.push(0);
                replay_log.push(ChunkReplays::default());
            }
            VectorStrategy::Srv | VectorStrategy::VfencedSrv => {
                match run_chunk_region(&mut ctx, &vp, chunk, chunk_idx, false)? {
                    RegionOutcome::Committed { replays, passes } => {
                        replay_counts.push(replays);
                        replay_log.push(ChunkReplays { passes });
                    }
                    RegionOutcome::Violated { .. } => unreachable!("not in fallback mode"),
                }
            }
            VectorStrategy::ScalarFallback => {
                match run_chunk_region(&mut ctx, &vp, chunk, chunk_idx, true)? {
                    RegionOutcome::Committed { replays, passes } => {
                        replay_counts.push(replays);
                        replay_log.push(ChunkReplays { passes });
                    }
                    RegionOutcome::Violated { passes } => {
                        // Checkpoint restart: buffered stores are discarded,
                        // the chunk re-runs sequentially, and every later
                        // chunk stays scalar. Cache fills persist.
                        ctx.squash_count += 1;
                        ctx.emit(TraceEvent::Squash { tick: ctx.tick, reason: SquashReason::MemOrder });
                        run_chunk_scalar(&mut ctx, chunk)?;
                        replay_counts.push(0);
                        replay_log.push(ChunkReplays { passes });
                        fallback_chunk = Some(chunk_idx);
                    }
                }
            }
        }
    }
    ctx.run_epilogue()?;
    Ok(ctx.finish(replay_counts, replay_log, fallback_chunk))
}

/// Region execution with selective replay; expects an SRV-family strategy.
pub fn run_srv<S: EventSink>(
    program: &GadgetProgram,
    env: &mut MachineEnv,
    cfg: &CoreConfig,
    sink: &mut S,
) -> Result<ExecResult> {
    if !matches!(cfg.strategy, Strategy::Srv | Strategy::VfencedSrv) {
        return Err(SimError::Config("run_srv expects strategy srv or vfenced_srv".into()));
    }
    run_vector(program, env, cfg, sink)
}

#[cfg(test)]
mod tests {
    use super::super::tests::{env_for, replay_example_src};
    use super::super::{run_scalar, CoreConfig, Mitigation, NoSink, Strategy};
    use super::*;
    use crate::isa::parse_gadget;

    fn run_with(src: &str, strategy: Strategy, mitigation: Mitigation) -> ExecResult {
        let program = parse_gadget(src).unwrap();
        let mut env = env_for(&program);
        let cfg = CoreConfig { strategy, mitigation, ..CoreConfig::default() };
        super::super::execute(&program, &mut env, &cfg, &mut NoSink).unwrap()
    }

    fn scalar_memory(src: &str) -> Memory {
        let program = parse_gadget(src).unwrap();
        let mut env = env_for(&program);
        run_scalar(&program, &mut env, &CoreConfig::default(), &mut NoSink).unwrap().final_memory
    }

    #[test]
    fn worked_example_replays_once_with_marked_lanes() {
        let src = replay_example_src();
        let result = run_with(&src, Strategy::Srv, Mitigation::None);
        assert_eq!(result.replay_counts, vec![1]);
        assert_eq!(result.replay_log[0].passes[0].taint.lanes(), vec![3, 7, 11, 15]);
        assert_eq!(result.replay_log[0].passes[1].active.lanes(), vec![3, 7, 11, 15]);
        assert!(result.replay_log[0].passes[1].taint.is_empty());
        assert_eq!(result.final_memory, scalar_memory(&src));
    }

    #[test]
    fn dependence_free_loop_never_replays() {
        let src = "array a 4 16\narray b 4 16\nloop 16:\n  b[z] = a[z] + 2\n";
        let result = run_with(src, Strategy::Srv, Mitigation::None);
        assert_eq!(result.replay_counts, vec![0]);
        assert_eq!(result.final_memory, scalar_memory(src));
    }

    #[test]
    fn all_strategies_match_scalar_on_the_worked_example() {
        let src = replay_example_src();
        let oracle = scalar_memory(&src);
        for strategy in [
            Strategy::Srv,
            Strategy::FlexVec,
            Strategy::ScalarFallback,
            Strategy::VfencedSrv,
        ] {
            let result = run_with(&src, strategy, Mitigation::None);
            assert_eq!(result.final_memory, oracle, "{}", strategy.name());
        }
    }

    #[test]
    fn vfenced_run_has_zero_replays() {
        let src = replay_example_src();
        let result = run_with(&src, Strategy::VfencedSrv, Mitigation::None);
        assert!(result.replay_counts.iter().all(|&r| r == 0));
        assert_eq!(result.final_memory, scalar_memory(&src));
    }

    #[test]
    fn chained_dependences_replay_width_minus_one_times() {
        // x[i] = i + 1: every lane reads the previous lane's store, and each
        // pass corrects exactly the lowest tainted lane.
        let mut src = String::from("array a 4 16\narray x 4 16\n");
        for i in 0..16 {
            src.push_str(&format!("init x[{i}] = {}\n", (i + 1) % 16));
            src.push_str(&format!("init a[{i}] = {i}\n"));
        }
        src.push_str("loop 16:\n  a[x[z]] = a[z] + 2\n");
        let result = run_with(&src, Strategy::Srv, Mitigation::None);
        assert_eq!(result.replay_counts, vec![15]);
        assert_eq!(result.final_memory, scalar_memory(&src));
    }

    #[test]
    fn fallback_goes_scalar_after_first_violation() {
        // Two chunks; the first violates, the second must run scalar.
        let mut src = String::from("array a 4 32\narray x 4 32\n");
        for i in 0..32 {
            let v = if i == 0 { 3 } else { i };
            src.push_str(&format!("init x[{i}] = {v}\n"));
        }
        src.push_str("loop 32:\n  a[x[z]] = a[z] + 2\n");
        let result = run_with(&src, Strategy::ScalarFallback, Mitigation::None);
        assert_eq!(result.fallback_chunk, Some(0));
        assert_eq!(result.squash_count, 1);
        assert_eq!(result.final_memory, scalar_memory(&src));
        // Only the probe pass of chunk 0 speculated; chunk 1 has no passes.
        assert_eq!(result.replay_log[0].passes.len(), 1);
        assert!(result.replay_log[1].passes.is_empty());
    }

    #[test]
    fn mem_fence_does_not_change_replay_behavior() {
        let src = replay_example_src();
        let plain = run_with(&src, Strategy::Srv, Mitigation::None);
        let fenced = run_with(&src, Strategy::Srv, Mitigation::MemFence);
        assert_eq!(plain.replay_counts, fenced.replay_counts);
        assert_eq!(plain.final_memory, fenced.final_memory);
        assert!(fenced.cycles > plain.cycles, "fences cost ticks");
    }

    #[test]
    fn trace_ticks_never_run_backwards() {
        // Region-end serialization: everything after a commit carries a
        // timestamp at or past it.
        let src = replay_example_src();
        let result = run_with(&src, Strategy::Srv, Mitigation::None);
        let ticks: Vec<u64> = result.trace.iter().map(|e| e.tick()).collect();
        assert!(ticks.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn replay_passes_reload_lanes_through_the_cache() {
        let src = replay_example_src();
        let result = run_with(&src, Strategy::Srv, Mitigation::None);
        // Lane 3 loads a[3] twice: once stale, once on replay.
        let program = parse_gadget(&src).unwrap();
        let env = env_for(&program);
        let a = env.memory.id("a").unwrap();
        let a3 = env.memory.base(a) + 12;
        let loads: Vec<&TraceEvent> = result
            .trace
            .iter()
            .filter(|e| {
                matches!(e, TraceEvent::MemAccess { kind: AccessKind::Load, addr, lane: 3, .. } if *addr == a3)
            })
            .collect();
        assert_eq!(loads.len(), 2);
    }
}
