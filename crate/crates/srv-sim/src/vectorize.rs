//! Lowers gadget loops into vector instructions at a configurable width and
//! implements the dependence-handling strategies under comparison: selective
//! replay over a speculative region, FlexVec-style lane partitioning, scalar
//! fallback after a violation, and single-lane predication (Vfence).
//!
//! Lowering merges each statement's scalar accesses lane-wise: all loads of a
//! statement become vector loads placed before the statement's scatter, so a
//! load performed by a high lane moves ahead (in program order) of stores
//! owed to lower lanes. That reordering is the hazard every strategy below
//! must handle.

use crate::error::{Result, SimError};
use crate::isa::{BinOp, GadgetProgram, IndexExpr, IndexScale, ValueExpr};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorStrategy {
    Srv,
    FlexVec,
    ScalarFallback,
    VfencedSrv,
}

impl VectorStrategy {
    pub fn uses_region_markers(self) -> bool {
        !matches!(self, VectorStrategy::FlexVec)
    }
}

/// How a lane computes one element index at execution time.
#[derive(Debug, Clone, PartialEq)]
pub enum SiteIndexRef {
    /// `z * scale + offset` for the lane's iteration.
    Affine { scale: i64, offset: i64 },
    Const(i64),
    /// Value of an earlier read site, scaled and shifted.
    FromSite { site: usize, scale: SiteScale, offset: i64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SiteScale {
    Const(i64),
    /// Memory-free per-lane expression.
    Expr(ValueExpr),
}

impl SiteIndexRef {
    fn is_unit_stride(&self) -> bool {
        matches!(self, SiteIndexRef::Affine { scale: 1, .. })
    }
}

/// One array read performed by a statement; sites are numbered in evaluation
/// order (right-hand side first, then destination index).
#[derive(Debug, Clone, PartialEq)]
pub struct ReadSite {
    pub array: usize,
    pub index: SiteIndexRef,
}

/// Right-hand side over site values.
#[derive(Debug, Clone, PartialEq)]
pub enum SiteExpr {
    Site(usize),
    Lit(i64),
    Z,
    Bin { op: BinOp, lhs: Box<SiteExpr>, rhs: Box<SiteExpr> },
    Select { cond: Box<SiteExpr>, then_val: Box<SiteExpr>, else_val: Box<SiteExpr> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoweredStmt {
    pub stmt_idx: usize,
    pub sites: Vec<ReadSite>,
    /// Number of leading sites that feed the value; the rest feed the
    /// destination index.
    pub rhs_sites: usize,
    pub rhs: SiteExpr,
    pub dst_array: usize,
    pub dst_index: SiteIndexRef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorOpcode {
    SrvStart,
    SrvEnd,
    Fence,
    Vfence,
    VGather { stmt: usize, site: usize },
    VLoadContig { stmt: usize, site: usize },
    VAlu { stmt: usize },
    VScatter { stmt: usize },
    VStoreContig { stmt: usize },
}

impl VectorOpcode {
    pub fn stmt(&self) -> Option<usize> {
        match self {
            VectorOpcode::VGather { stmt, .. }
            | VectorOpcode::VLoadContig { stmt, .. }
            | VectorOpcode::VAlu { stmt }
            | VectorOpcode::VScatter { stmt }
            | VectorOpcode::VStoreContig { stmt } => Some(*stmt),
            _ => None,
        }
    }

    pub fn is_load(&self) -> bool {
        matches!(self, VectorOpcode::VGather { .. } | VectorOpcode::VLoadContig { .. })
    }

    pub fn is_store(&self) -> bool {
        matches!(self, VectorOpcode::VScatter { .. } | VectorOpcode::VStoreContig { .. })
    }

    pub fn load_site(&self) -> Option<usize> {
        match self {
            VectorOpcode::VGather { site, .. } | VectorOpcode::VLoadContig { site, .. } => {
                Some(*site)
            }
            _ => None,
        }
    }

    pub fn mnemonic(&self) -> &'static str {
        match self {
            VectorOpcode::SrvStart => "srv_start",
            VectorOpcode::SrvEnd => "srv_end",
            VectorOpcode::Fence => "fence",
            VectorOpcode::Vfence => "vfence",
            VectorOpcode::VGather { .. } => "vgather",
            VectorOpcode::VLoadContig { .. } => "vload",
            VectorOpcode::VAlu { .. } => "valu",
            VectorOpcode::VScatter { .. } => "vscatter",
            VectorOpcode::VStoreContig { .. } => "vstore",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VectorInstr {
    /// Position in vector program order, global across the program.
    pub seq: u32,
    pub opcode: VectorOpcode,
}

/// One group of `active` consecutive iterations starting at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub base: u64,
    pub active: u32,
    pub instrs: Vec<VectorInstr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorProgram {
    pub width: u32,
    pub strategy: VectorStrategy,
    pub stmts: Vec<LoweredStmt>,
    pub chunks: Vec<Chunk>,
}

impl VectorProgram {
    pub fn active_lane_total(&self) -> u64 {
        self.chunks.iter().map(|c| c.active as u64).sum()
    }

    /// Text rendering for the trace log.
    pub fn disassemble(&self) -> String {
        let mut out = format!("; width {} strategy {:?}\n", self.width, self.strategy);
        for (i, chunk) in self.chunks.iter().enumerate() {
            out.push_str(&format!(
                "chunk {i}: iterations {}..{} ({} active)\n",
                chunk.base,
                chunk.base + chunk.active as u64,
                chunk.active
            ));
            for instr in &chunk.instrs {
                let detail = match instr.opcode {
                    VectorOpcode::VGather { stmt, site }
                    | VectorOpcode::VLoadContig { stmt, site } => {
                        format!(" stmt={stmt} site={site}")
                    }
                    VectorOpcode::VAlu { stmt }
                    | VectorOpcode::VScatter { stmt }
                    | VectorOpcode::VStoreContig { stmt } => format!(" stmt={stmt}"),
                    _ => String::new(),
                };
                out.push_str(&format!("  {:4} {}{}\n", instr.seq, instr.opcode.mnemonic(), detail));
            }
        }
        out
    }

    fn renumber(&mut self) {
        let mut seq = 0u32;
        for chunk in &mut self.chunks {
            for instr in &mut chunk.instrs {
                instr.seq = seq;
                seq += 1;
            }
        }
    }
}

fn lower_index(
    program: &GadgetProgram,
    idx: &IndexExpr,
    sites: &mut Vec<ReadSite>,
) -> SiteIndexRef {
    match idx {
        IndexExpr::Induction { scale, offset } => {
            SiteIndexRef::Affine { scale: *scale, offset: *offset }
        }
        IndexExpr::Constant(c) => SiteIndexRef::Const(*c),
        IndexExpr::Indirect { array, inner, scale, offset } => {
            let inner_ref = lower_index(program, inner, sites);
            let array_id = program.array_id(array).expect("validated");
            sites.push(ReadSite { array: array_id, index: inner_ref });
            let site = sites.len() - 1;
            let scale = match scale {
                IndexScale::Const(k) => SiteScale::Const(*k),
                IndexScale::Expr(e) => SiteScale::Expr((**e).clone()),
            };
            SiteIndexRef::FromSite { site, scale, offset: *offset }
        }
    }
}

fn lower_value(program: &GadgetProgram, expr: &ValueExpr, sites: &mut Vec<ReadSite>) -> SiteExpr {
    match expr {
        ValueExpr::Lit(n) => SiteExpr::Lit(*n),
        ValueExpr::Induction => SiteExpr::Z,
        ValueExpr::Load { array, index } => {
            let idx_ref = lower_index(program, index, sites);
            let array_id = program.array_id(array).expect("validated");
            sites.push(ReadSite { array: array_id, index: idx_ref });
            SiteExpr::Site(sites.len() - 1)
        }
        ValueExpr::Binary { op, lhs, rhs } => SiteExpr::Bin {
            op: *op,
            lhs: Box::new(lower_value(program, lhs, sites)),
            rhs: Box::new(lower_value(program, rhs, sites)),
        },
        ValueExpr::Select { cond, then_val, else_val } => SiteExpr::Select {
            cond: Box::new(lower_value(program, cond, sites)),
            then_val: Box::new(lower_value(program, then_val, sites)),
            else_val: Box::new(lower_value(program, else_val, sites)),
        },
    }
}

pub fn lower_statements(program: &GadgetProgram) -> Vec<LoweredStmt> {
    program
        .body
        .iter()
        .enumerate()
        .map(|(stmt_idx, stmt)| {
            let mut sites = Vec::new();
            let rhs = lower_value(program, &stmt.rhs, &mut sites);
            let rhs_sites = sites.len();
            let dst_index = lower_index(program, &stmt.dst_index, &mut sites);
            LoweredStmt {
                stmt_idx,
                sites,
                rhs_sites,
                rhs,
                dst_array: program.array_id(&stmt.dst_array).expect("validated"),
                dst_index,
            }
        })
        .collect()
}

fn chunk_body(stmts: &[LoweredStmt]) -> Vec<VectorOpcode> {
    let mut ops = Vec::new();
    for st in stmts {
        for (i, site) in st.sites.iter().enumerate().take(st.rhs_sites) {
            ops.push(load_op(st.stmt_idx, i, site));
        }
        ops.push(VectorOpcode::VAlu { stmt: st.stmt_idx });
        for (i, site) in st.sites.iter().enumerate().skip(st.rhs_sites) {
            ops.push(load_op(st.stmt_idx, i, site));
        }
        if st.dst_index.is_unit_stride() {
            ops.push(VectorOpcode::VStoreContig { stmt: st.stmt_idx });
        } else {
            ops.push(VectorOpcode::VScatter { stmt: st.stmt_idx });
        }
    }
    ops
}

fn load_op(stmt: usize, site: usize, s: &ReadSite) -> VectorOpcode {
    if s.index.is_unit_stride() {
        VectorOpcode::VLoadContig { stmt, site }
    } else {
        VectorOpcode::VGather { stmt, site }
    }
}

/// Splits the loop into width-sized chunks of vector instructions. Tail
/// iterations become a final chunk with a partial predicate.
pub fn vectorize_loop(
    program: &GadgetProgram,
    width: u32,
    strategy: VectorStrategy,
) -> Result<VectorProgram> {
    if ![2, 4, 8, 16, 32].contains(&width) {
        return Err(SimError::Config(format!("vector width {width} not in {{2,4,8,16,32}}")));
    }
    let stmts = lower_statements(program);
    if stmts.is_empty() {
        return Err(SimError::UnsupportedPattern("empty loop body".into()));
    }
    let body = chunk_body(&stmts);
    let mut chunks = Vec::new();
    let mut base = 0u64;
    while base < program.trip_count {
        let active = ((program.trip_count - base).min(width as u64)) as u32;
        let mut instrs = Vec::new();
        if strategy.uses_region_markers() {
            instrs.push(VectorInstr { seq: 0, opcode: VectorOpcode::SrvStart });
        }
        instrs.extend(body.iter().map(|&opcode| VectorInstr { seq: 0, opcode }));
        if strategy.uses_region_markers() {
            instrs.push(VectorInstr { seq: 0, opcode: VectorOpcode::SrvEnd });
        }
        chunks.push(Chunk { base, active, instrs });
        base += active as u64;
    }
    let mut vp = VectorProgram { width, strategy, stmts, chunks };
    vp.renumber();
    Ok(vp)
}

/// Partitions the lanes of one chunk into maximal consecutive groups such
/// that no reader lane shares a group with (or precedes) its writer's group
/// boundary. `deps` holds (writer lane, reader lane) store-to-load overlaps;
/// only forward pairs (writer below reader) constrain the partition.
pub fn flexvec_partition(deps: &[(u32, u32)], width: u32) -> Vec<std::ops::RangeInclusive<u32>> {
    debug_assert!(deps.iter().all(|&(w, r)| w < width && r < width));
    let mut groups = Vec::new();
    let mut start = 0u32;
    for reader in 1..width {
        let violating = deps.iter().any(|&(w, r)| r == reader && w < reader && w >= start);
        if violating {
            groups.push(start..=reader - 1);
            start = reader;
        }
    }
    groups.push(start..=width - 1);
    groups
}

/// Rewrites every chunk into single-lane sub-iterations in lane order: the
/// k-th sub-iteration executes with only lane k active, which removes all
/// cross-lane speculation.
pub fn vfence_transform(vp: &VectorProgram) -> Result<VectorProgram> {
    if vp.strategy != VectorStrategy::Srv {
        return Err(SimError::Config("vfence transform expects an SRV program".into()));
    }
    let body = chunk_body(&vp.stmts);
    let mut chunks = Vec::new();
    for chunk in &vp.chunks {
        for k in 0..chunk.active {
            let mut instrs = vec![
                VectorInstr { seq: 0, opcode: VectorOpcode::SrvStart },
                VectorInstr { seq: 0, opcode: VectorOpcode::Vfence },
            ];
            instrs.extend(body.iter().map(|&opcode| VectorInstr { seq: 0, opcode }));
            instrs.push(VectorInstr { seq: 0, opcode: VectorOpcode::SrvEnd });
            chunks.push(Chunk { base: chunk.base + k as u64, active: 1, instrs });
        }
    }
    let mut out = VectorProgram {
        width: vp.width,
        strategy: VectorStrategy::VfencedSrv,
        stmts: vp.stmts.clone(),
        chunks,
    };
    out.renumber();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FencePlacement {
    BetweenStatements,
    AroundRegion,
}

/// Inserts fence instructions at the requested boundaries without changing
/// the vector lowering itself.
pub fn insert_fences(vp: &VectorProgram, placement: FencePlacement) -> VectorProgram {
    let mut out = vp.clone();
    for chunk in &mut out.chunks {
        match placement {
            FencePlacement::BetweenStatements => {
                let mut rebuilt = Vec::new();
                let mut prev_stmt: Option<usize> = None;
                for instr in &chunk.instrs {
                    if let Some(stmt) = instr.opcode.stmt() {
                        if let Some(p) = prev_stmt {
                            if p != stmt {
                                rebuilt.push(VectorInstr { seq: 0, opcode: VectorOpcode::Fence });
                            }
                        }
                        prev_stmt = Some(stmt);
                    }
                    rebuilt.push(*instr);
                }
                chunk.instrs = rebuilt;
            }
            FencePlacement::AroundRegion => {
                chunk.instrs.insert(0, VectorInstr { seq: 0, opcode: VectorOpcode::Fence });
                chunk.instrs.push(VectorInstr { seq: 0, opcode: VectorOpcode::Fence });
            }
        }
    }
    out.renumber();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::parse_gadget;

    fn replay_example() -> GadgetProgram {
        parse_gadget("array a 4 16\narray x 4 16\nloop 16:\n  a[x[z]] = a[z] + 2\n").unwrap()
    }

    #[test]
    fn merged_load_precedes_the_store_it_feeds() {
        // Three scalar iterations of load/add/store collapse into one vector
        // load, one alu, one scatter; the last iteration's load now sits in
        // the first memory instruction of the chunk, ahead of every store.
        let p = parse_gadget("array a 4 4\narray x 4 4\nloop 4:\n  a[x[z]] = a[z] + 2\n").unwrap();
        let vp = vectorize_loop(&p, 4, VectorStrategy::Srv).unwrap();
        assert_eq!(vp.chunks.len(), 1);
        let ops: Vec<&VectorOpcode> = vp.chunks[0]
            .instrs
            .iter()
            .map(|i| &i.opcode)
            .filter(|o| o.stmt().is_some())
            .collect();
        assert_eq!(ops.len(), 4);
        assert!(ops[0].is_load(), "value load first");
        assert!(matches!(ops[1], VectorOpcode::VAlu { .. }));
        assert!(ops[2].is_load(), "index vector load");
        assert!(ops[3].is_store(), "scatter last");
        // One vector load instruction carries the value loads of all lanes.
        let value_loads = ops.iter().filter(|o| o.is_load() && o.load_site() == Some(0)).count();
        assert_eq!(value_loads, 1);
    }

    #[test]
    fn exact_fit_gives_one_full_chunk() {
        let vp = vectorize_loop(&replay_example(), 16, VectorStrategy::Srv).unwrap();
        assert_eq!(vp.chunks.len(), 1);
        assert_eq!(vp.chunks[0].active, 16);
        assert_eq!(vp.active_lane_total(), 16);
    }

    #[test]
    fn tail_gets_partial_predicate() {
        let p =
            parse_gadget("array a 4 17\narray x 4 17\nloop 17:\n  a[x[z]] = a[z] + 2\n").unwrap();
        let vp = vectorize_loop(&p, 16, VectorStrategy::Srv).unwrap();
        assert_eq!(vp.chunks.len(), 2);
        assert_eq!(vp.chunks[0].active, 16);
        assert_eq!(vp.chunks[1].active, 1);
        assert_eq!(vp.active_lane_total(), 17);
    }

    #[test]
    fn partition_matches_worked_example() {
        let x: [u32; 16] = [3, 0, 1, 2, 7, 4, 5, 6, 11, 8, 9, 10, 15, 12, 13, 14];
        // Writer lane w stores to a[x[w]]; reader lane r loads a[r].
        let deps: Vec<(u32, u32)> =
            (0..16u32).filter(|&w| x[w as usize] > w).map(|w| (w, x[w as usize])).collect();
        let groups = flexvec_partition(&deps, 16);
        let expect: Vec<std::ops::RangeInclusive<u32>> =
            vec![0..=2, 3..=6, 7..=10, 11..=14, 15..=15];
        assert_eq!(groups, expect);
    }

    #[test]
    fn empty_deps_is_one_group() {
        assert_eq!(flexvec_partition(&[], 16), vec![0..=15]);
    }

    #[test]
    fn chained_deps_fall_apart_into_singletons() {
        // Every lane reads its predecessor's write: x[i] = i + 1 pattern.
        let deps: Vec<(u32, u32)> = (0..15u32).map(|w| (w, w + 1)).collect();
        let groups = flexvec_partition(&deps, 16);
        assert_eq!(groups.len(), 16);
        for (k, g) in groups.iter().enumerate() {
            assert_eq!(*g, (k as u32)..=(k as u32));
        }
    }

    #[test]
    fn partition_is_consecutive_and_covers_all_lanes() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..200 {
            let width = *[2u32, 4, 8, 16, 32].get(rng.random_range(0..5)).unwrap();
            let ndeps = rng.random_range(0..width);
            let deps: Vec<(u32, u32)> = (0..ndeps)
                .map(|_| (rng.random_range(0..width), rng.random_range(0..width)))
                .filter(|&(w, r)| w < r)
                .collect();
            let groups = flexvec_partition(&deps, width);
            let mut next = 0u32;
            for g in &groups {
                assert_eq!(*g.start(), next);
                assert!(g.end() >= g.start());
                next = g.end() + 1;
            }
            assert_eq!(next, width);
        }
    }

    #[test]
    fn vfence_expands_chunks_into_single_lane_subiterations() {
        let vp = vectorize_loop(&replay_example(), 16, VectorStrategy::Srv).unwrap();
        let vf = vfence_transform(&vp).unwrap();
        assert_eq!(vf.strategy, VectorStrategy::VfencedSrv);
        assert_eq!(vf.chunks.len(), 16);
        for (k, chunk) in vf.chunks.iter().enumerate() {
            assert_eq!(chunk.base, k as u64);
            assert_eq!(chunk.active, 1);
            assert!(matches!(chunk.instrs[1].opcode, VectorOpcode::Vfence));
        }
        assert_eq!(vf.active_lane_total(), vp.active_lane_total());
    }

    #[test]
    fn vfence_preserves_statement_iteration_multiset() {
        let p = parse_gadget(
            "array a 4 10\narray x 4 10\nloop 10:\n  a[x[z]] = a[z] + 2\n  x[z] = x[z] ^ 1\n",
        )
        .unwrap();
        let vp = vectorize_loop(&p, 4, VectorStrategy::Srv).unwrap();
        let vf = vfence_transform(&vp).unwrap();
        let pairs = |v: &VectorProgram| {
            let mut out = Vec::new();
            for chunk in &v.chunks {
                for instr in &chunk.instrs {
                    if instr.opcode.is_store() {
                        for lane in 0..chunk.active {
                            out.push((instr.opcode.stmt().unwrap(), chunk.base + lane as u64));
                        }
                    }
                }
            }
            out.sort_unstable();
            out
        };
        assert_eq!(pairs(&vp), pairs(&vf));
    }

    #[test]
    fn fence_between_two_statements() {
        let p = parse_gadget(
            "array a 4 8\narray b 4 8\nloop 8:\n  a[z] = b[z] + 1\n  b[z] = a[z] ^ 3\n",
        )
        .unwrap();
        let vp = vectorize_loop(&p, 8, VectorStrategy::Srv).unwrap();
        let fenced = insert_fences(&vp, FencePlacement::BetweenStatements);
        let fences =
            fenced.chunks[0].instrs.iter().filter(|i| i.opcode == VectorOpcode::Fence).count();
        assert_eq!(fences, 1);
    }

    #[test]
    fn fence_around_region_brackets_the_markers() {
        let vp = vectorize_loop(&replay_example(), 16, VectorStrategy::Srv).unwrap();
        let fenced = insert_fences(&vp, FencePlacement::AroundRegion);
        let instrs = &fenced.chunks[0].instrs;
        assert_eq!(instrs.first().unwrap().opcode, VectorOpcode::Fence);
        assert_eq!(instrs.last().unwrap().opcode, VectorOpcode::Fence);
        assert_eq!(instrs[1].opcode, VectorOpcode::SrvStart);
    }

    #[test]
    fn disassembly_lists_every_instruction() {
        let vp = vectorize_loop(&replay_example(), 16, VectorStrategy::Srv).unwrap();
        let text = vp.disassemble();
        for instr in &vp.chunks[0].instrs {
            assert!(text.contains(instr.opcode.mnemonic()));
        }
        assert!(text.contains("vgather") || text.contains("vload"));
        assert!(text.contains("vscatter"));
    }

    #[test]
    fn seq_numbers_are_globally_increasing() {
        let p =
            parse_gadget("array a 4 40\narray x 4 40\nloop 40:\n  a[x[z]] = a[z] + 2\n").unwrap();
        let vp = vectorize_loop(&p, 16, VectorStrategy::Srv).unwrap();
        let seqs: Vec<u32> = vp.chunks.iter().flat_map(|c| c.instrs.iter().map(|i| i.seq)).collect();
        for (i, s) in seqs.iter().enumerate() {
            assert_eq!(*s, i as u32);
        }
    }
}
