//! Scalar out-of-order memory execution with a store-set style dependence
//! predictor, plus a branch-guarded transient runner for bounds-check
//! gadgets. Both exist as baselines: the store-to-load reordering they model
//! is exactly what fences and in-order execution are able to stop.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::isa::{eval_scalar_iter, AccessKind, GadgetProgram, Memory};
use crate::vectorize::{lower_statements, LoweredStmt};

use super::srv::{eval_site_expr, eval_site_index};
use super::{
    BranchPredictor, CacheVis, CoreConfig, EventSink, ExecCtx, ExecResult, MachineEnv, Mitigation,
    SquashReason, TraceEvent, UarchView,
};

/// Per-statement-pair confidence counters. A pair predicts no-alias once its
/// counter reaches the threshold; an observed alias resets it to zero.
#[derive(Debug, Clone, Default)]
pub struct MemDepPredictor {
    counters: BTreeMap<(usize, usize), u32>,
}

impl MemDepPredictor {
    pub fn confidence(&self, pair: (usize, usize)) -> u32 {
        self.counters.get(&pair).copied().unwrap_or(0)
    }

    pub fn predicts_no_alias(&self, pair: (usize, usize), threshold: u32) -> bool {
        self.confidence(pair) >= threshold
    }

    fn record_no_alias(&mut self, pair: (usize, usize), threshold: u32) {
        let c = self.counters.entry(pair).or_insert(0);
        *c = (*c + 1).min(threshold.max(1));
    }

    fn record_alias(&mut self, pair: (usize, usize)) {
        self.counters.insert(pair, 0);
    }
}

#[derive(Debug, Clone, Copy)]
struct PendingStore {
    stmt: usize,
    addr: u64,
    size: u8,
    value: i64,
}

fn ranges_overlap(a: (u64, u8), b: (u64, u8)) -> bool {
    a.0 < b.0 + b.1 as u64 && b.0 < a.0 + a.1 as u64
}

/// Reads through the pending-store window. Stores whose statement index is in
/// `ignored` are bypassed (the predictor let the load run ahead of them).
fn read_through(
    mem: &Memory,
    pending: &[PendingStore],
    ignored: &[bool],
    addr: u64,
    size: u8,
) -> i64 {
    let mut out: u64 = 0;
    for k in 0..size as u64 {
        let b = addr + k;
        let mut byte = mem.byte_at(b).unwrap_or(0);
        for (i, st) in pending.iter().enumerate() {
            if ignored[i] {
                continue;
            }
            if b >= st.addr && b < st.addr + st.size as u64 {
                byte = ((st.value as u64) >> (8 * (b - st.addr))) as u8;
            }
        }
        out |= (byte as u64) << (8 * k);
    }
    out as i64
}

struct StmtAttempt {
    loads: Vec<(u64, u8, i64)>,
    rhs: i64,
    dst: (u64, u8),
    /// Pending-store indices that were bypassed and actually overlapped one
    /// of the loads.
    violations: Vec<usize>,
}

fn eval_stmt(
    st: &LoweredStmt,
    z: i64,
    mem: &Memory,
    pending: &[PendingStore],
    ignored: &[bool],
) -> Result<StmtAttempt> {
    let mut vals: Vec<Vec<i64>> = vec![vec![0i64]; st.sites.len()];
    let mut loads = Vec::new();
    let mut violations = Vec::new();
    for (s, site) in st.sites.iter().enumerate() {
        let idx = eval_site_index(&site.index, z, 0, &vals);
        let (addr, size) = mem.resolve(site.array, idx, AccessKind::Load)?;
        let value = read_through(mem, pending, ignored, addr, size);
        vals[s][0] = value;
        loads.push((addr, size, value));
        for (i, p) in pending.iter().enumerate() {
            if ignored[i] && ranges_overlap((p.addr, p.size), (addr, size)) && !violations.contains(&i)
            {
                violations.push(i);
            }
        }
    }
    let rhs = eval_site_expr(&st.rhs, z, 0, &vals);
    let dst_idx = eval_site_index(&st.dst_index, z, 0, &vals);
    let dst = mem.resolve(st.dst_array, dst_idx, AccessKind::Store)?;
    Ok(StmtAttempt { loads, rhs, dst, violations })
}

/// Scalar execution where a load may run ahead of a pending earlier store
/// once the dependence predictor is confident the pair never aliases. A
/// mispredicted bypass squashes and re-executes; the cache keeps whatever the
/// squashed work fetched. Memory fences and in-order execution disable the
/// bypass entirely.
pub fn run_ooo_stl<S: EventSink>(
    program: &GadgetProgram,
    env: &mut MachineEnv,
    cfg: &CoreConfig,
    sink: &mut S,
) -> Result<ExecResult> {
    cfg.validate()?;
    let stmts = lower_statements(program);
    let mut ctx = ExecCtx::new(program, env, cfg, sink);
    let mut predictor = MemDepPredictor::default();
    let bypass_allowed =
        !matches!(cfg.mitigation, Mitigation::MemFence | Mitigation::InOrder);
    let defer_fills = cfg.mitigation == Mitigation::VisibilityDelay;
    let cfence = cfg.mitigation == Mitigation::CfenceStyle;

    for z in 0..program.trip_count {
        let zi = z as i64;
        let mut pending: Vec<PendingStore> = Vec::new();
        for (j, st) in stmts.iter().enumerate() {
            let ignored: Vec<bool> = pending
                .iter()
                .map(|p| {
                    bypass_allowed && predictor.predicts_no_alias((p.stmt, j), cfg.mdp_threshold)
                })
                .collect();
            let speculating = ignored.iter().any(|&b| b);
            let attempt = eval_stmt(st, zi, &ctx.env.memory, &pending, &ignored)?;

            let emit_loads = |ctx: &mut ExecCtx<'_, S>,
                                  a: &StmtAttempt,
                                  vis: CacheVis|
             -> Vec<(u64, AccessKind)> {
                let mut fills = Vec::new();
                for &(addr, size, value) in &a.loads {
                    let seq = ctx.take_seq();
                    ctx.mem_access(seq, z as u32, AccessKind::Load, addr, size, value, vis);
                    fills.push((addr, AccessKind::Load));
                }
                fills
            };

            let attempt = if attempt.violations.is_empty() {
                let vis = if cfence { CacheVis::Suppressed } else { CacheVis::Normal };
                let fills = emit_loads(&mut ctx, &attempt, if defer_fills && speculating {
                    CacheVis::Suppressed
                } else {
                    vis
                });
                if defer_fills && speculating {
                    // Speculation resolved clean: fills become visible.
                    for (addr, kind) in fills {
                        ctx.env.cache.access(addr, kind);
                    }
                }
                attempt
            } else {
                // Transient execution with stale data, then disambiguation.
                let vis = if defer_fills || cfence { CacheVis::Suppressed } else { CacheVis::Normal };
                emit_loads(&mut ctx, &attempt, vis);
                for &i in &attempt.violations {
                    predictor.record_alias((pending[i].stmt, j));
                }
                ctx.squash_count += 1;
                ctx.emit(TraceEvent::Squash { tick: ctx.tick, reason: SquashReason::MemOrder });
                // Re-execute with every pending store visible.
                let none = vec![false; pending.len()];
                let redo = eval_stmt(st, zi, &ctx.env.memory, &pending, &none)?;
                let vis = if cfence { CacheVis::Suppressed } else { CacheVis::Normal };
                emit_loads(&mut ctx, &redo, vis);
                redo
            };

            let seq = ctx.take_seq();
            ctx.emit(TraceEvent::Alu { tick: ctx.tick, seq, stmt: j, lanes: 1 });
            ctx.tick += 1;
            let (dst_addr, dst_size) = attempt.dst;
            let seq = ctx.take_seq();
            ctx.mem_access(seq, z as u32, AccessKind::Store, dst_addr, dst_size, attempt.rhs, CacheVis::Normal);
            pending.push(PendingStore { stmt: j, addr: dst_addr, size: dst_size, value: attempt.rhs });

            // Confidence training for the pairs that did not alias this time.
            for p in &pending[..pending.len() - 1] {
                let pair = (p.stmt, j);
                let aliased = attempt
                    .loads
                    .iter()
                    .any(|&(addr, size, _)| ranges_overlap((p.addr, p.size), (addr, size)));
                if aliased {
                    predictor.record_alias(pair);
                } else {
                    predictor.record_no_alias(pair, cfg.mdp_threshold);
                }
            }
        }
        // In-order retirement.
        for p in &pending {
            ctx.env.memory.store_le(p.addr, p.size, p.value);
        }
    }
    ctx.run_epilogue()?;
    Ok(ctx.finish(Vec::new(), Vec::new(), None))
}

/// Drives one branch-guarded block: a bounds check in front of a dependent
/// load chain. Training resolutions warm the per-site counter; a predicted-
/// taken resolution with an untaken outcome opens a transient window in which
/// the block's loads execute and then squash.
pub struct GuardedRunner {
    pub predictor: BranchPredictor,
    pub trace: Vec<TraceEvent>,
    pub tick: u64,
    pub squash_count: u32,
    next_seq: u32,
    site: u64,
}

impl GuardedRunner {
    pub fn new(site: u64) -> Self {
        GuardedRunner {
            predictor: BranchPredictor::new(),
            trace: Vec::new(),
            tick: 0,
            squash_count: 0,
            next_seq: 0,
            site,
        }
    }

    fn emit<S: EventSink>(&mut self, env: &MachineEnv, sink: &mut S, event: TraceEvent) {
        let view =
            UarchView { cache: &env.cache, branch: Some(&self.predictor), lsq_entry: None };
        sink.offer(&event, &view);
        self.trace.push(event);
    }

    /// One execution of the guarded block. `taken` is the architectural
    /// outcome of the bounds check.
    pub fn step<S: EventSink>(
        &mut self,
        program: &GadgetProgram,
        env: &mut MachineEnv,
        cfg: &CoreConfig,
        sink: &mut S,
        taken: bool,
    ) -> Result<()> {
        let predicted = self.predictor.predict(self.site);
        let event = TraceEvent::BranchResolve {
            tick: self.tick,
            site: self.site,
            predicted,
            actual: taken,
        };
        self.emit(env, sink, event);
        self.predictor.resolve(self.site, taken);

        if taken {
            // Architectural path.
            let events = eval_scalar_iter(program, 0, &mut env.memory)?;
            for ev in events {
                self.access(env, sink, ev.kind, ev.addr, ev.size, ev.value, CacheVis::Normal);
            }
            return Ok(());
        }
        if predicted == Some(true) {
            // Mispredicted taken: the block executes transiently unless a
            // fence blocks the window. Stores never retire.
            let fences_block = matches!(
                cfg.mitigation,
                Mitigation::MemFence | Mitigation::FenceRecompiledScalar
            );
            if !fences_block {
                let stmts = lower_statements(program);
                let suppress = matches!(
                    cfg.mitigation,
                    Mitigation::VisibilityDelay | Mitigation::CfenceStyle
                );
                let vis = if suppress { CacheVis::Suppressed } else { CacheVis::Normal };
                for st in &stmts {
                    let attempt = eval_stmt(st, 0, &env.memory, &[], &[])?;
                    for (addr, size, value) in attempt.loads {
                        self.access(env, sink, AccessKind::Load, addr, size, value, vis);
                    }
                }
            }
            self.squash_count += 1;
            let event = TraceEvent::Squash { tick: self.tick, reason: SquashReason::Branch };
            self.emit(env, sink, event);
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn access<S: EventSink>(
        &mut self,
        env: &mut MachineEnv,
        sink: &mut S,
        kind: AccessKind,
        addr: u64,
        size: u8,
        value: i64,
        vis: CacheVis,
    ) {
        let (hit, latency) = env.cache.access_nofill(addr);
        let seq = self.next_seq;
        self.next_seq += 1;
        let event = TraceEvent::MemAccess {
            tick: self.tick,
            seq,
            lane: 0,
            kind,
            addr,
            size,
            value,
            hit,
            latency,
        };
        self.emit(env, sink, event);
        if vis == CacheVis::Normal {
            env.cache.access(addr, kind);
        }
        self.tick += latency;
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::env_for;
    use super::super::{CoreConfig, Mitigation, NoSink, Strategy};
    use super::*;
    use crate::isa::parse_gadget;
    use crate::memhier::HitLevel;

    /// Store to A[w[z]] followed by a load of A[r[z]]: the vectors alias only
    /// on the final iteration, after the pair has trained up.
    fn stl_src() -> String {
        let mut src = String::from("array a 4 16\narray w 4 16\narray r 4 16\narray out 4 16\n");
        for i in 0..16 {
            let wv = if i == 1 { 0 } else { i };
            let rv = if i == 15 { 1 } else { (i + 2) % 16 };
            src.push_str(&format!("init w[{i}] = {}\n", if i == 15 { 1 } else { wv }));
            src.push_str(&format!("init r[{i}] = {rv}\n"));
        }
        src.push_str("init a[1] = 77\n");
        src.push_str("loop 16:\n  a[w[z]] = 5\n  out[z] = a[r[z]] + 100\n");
        src
    }

    #[test]
    fn trained_pair_bypasses_and_squashes_once() {
        let src = stl_src();
        let program = parse_gadget(&src).unwrap();
        let mut env = env_for(&program);
        let cfg =
            CoreConfig { strategy: Strategy::ScalarOoo, ..CoreConfig::default() };
        let result = run_ooo_stl(&program, &mut env, &cfg, &mut NoSink).unwrap();
        assert_eq!(result.squash_count, 1);
        // The stale value (77) was read transiently, then corrected to 5.
        let out = result.final_memory.id("out").unwrap();
        assert_eq!(result.final_memory.peek(out, 15).unwrap(), 105);
        let stale_reads = result
            .trace
            .iter()
            .filter(|e| matches!(e, TraceEvent::MemAccess { value: 77, kind: AccessKind::Load, .. }))
            .count();
        assert!(stale_reads >= 1, "stale value must be observed transiently");
    }

    #[test]
    fn fence_blocks_the_bypass() {
        let src = stl_src();
        let program = parse_gadget(&src).unwrap();
        let mut env = env_for(&program);
        let cfg = CoreConfig {
            strategy: Strategy::ScalarOoo,
            mitigation: Mitigation::MemFence,
            ..CoreConfig::default()
        };
        let result = run_ooo_stl(&program, &mut env, &cfg, &mut NoSink).unwrap();
        assert_eq!(result.squash_count, 0);
        let stale_reads = result
            .trace
            .iter()
            .filter(|e| matches!(e, TraceEvent::MemAccess { value: 77, kind: AccessKind::Load, .. }))
            .count();
        assert_eq!(stale_reads, 0);
    }

    #[test]
    fn cold_predictor_is_conservative() {
        // Aliasing on the very first iteration: counters are cold, the load
        // waits and reads the fresh value.
        let mut src = String::from("array a 4 4\narray w 4 4\narray r 4 4\narray out 4 4\n");
        for i in 0..4 {
            src.push_str(&format!("init w[{i}] = {i}\n"));
            src.push_str(&format!("init r[{i}] = {i}\n"));
        }
        src.push_str("init a[0] = 9\nloop 4:\n  a[w[z]] = 1\n  out[z] = a[r[z]]\n");
        let program = parse_gadget(&src).unwrap();
        let mut env = env_for(&program);
        let cfg = CoreConfig { strategy: Strategy::ScalarOoo, ..CoreConfig::default() };
        let result = run_ooo_stl(&program, &mut env, &cfg, &mut NoSink).unwrap();
        assert_eq!(result.squash_count, 0);
        let out = result.final_memory.id("out").unwrap();
        assert_eq!(result.final_memory.peek(out, 0).unwrap(), 1, "fresh value forwarded");
    }

    #[test]
    fn ooo_final_memory_matches_scalar() {
        let src = stl_src();
        let program = parse_gadget(&src).unwrap();
        for mitigation in [Mitigation::None, Mitigation::MemFence, Mitigation::InOrder] {
            let mut env = env_for(&program);
            let cfg = CoreConfig {
                strategy: Strategy::ScalarOoo,
                mitigation,
                ..CoreConfig::default()
            };
            let ooo = run_ooo_stl(&program, &mut env, &cfg, &mut NoSink).unwrap();
            let mut env2 = env_for(&program);
            let scalar = super::super::run_scalar(&program, &mut env2, &cfg, &mut NoSink).unwrap();
            assert_eq!(ooo.final_memory, scalar.final_memory, "{}", mitigation.name());
        }
    }

    #[test]
    fn guarded_runner_opens_window_only_when_trained() {
        let program =
            parse_gadget("array enc 1 1024\narray xin 4 1\nloop 1:\n  enc[xin[0] * 64] = enc[xin[0] * 64]\n")
                .unwrap();
        let mut env = env_for(&program);
        let cfg = CoreConfig::default();
        let enc = env.memory.id("enc").unwrap();
        let enc_base = env.memory.base(enc);
        // Cold: an untaken outcome on first sight does nothing.
        let mut runner = GuardedRunner::new(0x40);
        runner.step(&program, &mut env, &cfg, &mut NoSink, false).unwrap();
        assert_eq!(runner.squash_count, 0);
        // Train taken twice, then mispredict: the block runs transiently.
        env.memory.poke(env.memory.id("xin").unwrap(), 0, 3).unwrap();
        let mut runner = GuardedRunner::new(0x44);
        runner.step(&program, &mut env, &cfg, &mut NoSink, true).unwrap();
        runner.step(&program, &mut env, &cfg, &mut NoSink, true).unwrap();
        runner.step(&program, &mut env, &cfg, &mut NoSink, false).unwrap();
        assert_eq!(runner.squash_count, 1);
        assert!(env.cache.probe(enc_base + 3 * 64).is_hit());
        let _ = HitLevel::Memory;
    }
}
