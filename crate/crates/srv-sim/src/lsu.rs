//! Dependence tracking for vector memory instructions.
//!
//! Inside a speculative region, logical time flows in two dimensions: down
//! the instruction sequence, and across lanes from lower to higher ids. The
//! tracker records every access as an [`LsqEntry`], computes per-byte overlap
//! masks against the other accesses of the region (VOB), restricts them to
//! contributions from strictly older lanes (HOB), and derives the replay
//! register from the entries whose HOB is nonzero.
//!
//! Only read-after-write overlaps force a replay: a load that overlaps a
//! store made by an older lane used data that did not yet exist in scalar
//! order. Write-after-read and write-after-write overlaps across lanes are
//! tracked in VOB but never taint (scatter stores drain in scalar order at
//! commit, which resolves them).

use crate::isa::AccessKind;

/// Byte-mask window size. Accesses are element-aligned and at most 8 bytes,
/// so they never straddle a window.
pub const LINE_BYTES: u64 = 64;

/// One bit per byte of the access's line-aligned window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ByteMask(pub u64);

impl ByteMask {
    pub const ZERO: ByteMask = ByteMask(0);

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn and(self, other: ByteMask) -> ByteMask {
        ByteMask(self.0 & other.0)
    }

    pub fn or(self, other: ByteMask) -> ByteMask {
        ByteMask(self.0 | other.0)
    }

    pub fn contains(self, other: ByteMask) -> bool {
        other.0 & !self.0 == 0
    }
}

impl std::fmt::Display for ByteMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Record of one memory access by one lane of one vector instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LsqEntry {
    /// Position in vector program order.
    pub instr_seq: u32,
    pub lane: u32,
    pub kind: AccessKind,
    pub addr: u64,
    pub size: u8,
    pub vob: ByteMask,
    pub hob: ByteMask,
}

impl LsqEntry {
    pub fn new(instr_seq: u32, lane: u32, kind: AccessKind, addr: u64, size: u8) -> Self {
        LsqEntry { instr_seq, lane, kind, addr, size, vob: ByteMask::ZERO, hob: ByteMask::ZERO }
    }

    pub fn line(&self) -> u64 {
        self.addr / LINE_BYTES
    }

    /// Bytes this access touches within its window.
    pub fn touch_mask(&self) -> ByteMask {
        let off = (self.addr % LINE_BYTES) as u32;
        let bits = if self.size >= 64 { u64::MAX } else { (1u64 << self.size) - 1 };
        ByteMask(bits << off)
    }
}

/// Per-lane taint bits driving the region's implicit do-while.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReplayRegister {
    bits: u32,
}

impl ReplayRegister {
    pub fn is_empty(self) -> bool {
        self.bits == 0
    }

    pub fn set(&mut self, lane: u32) {
        self.bits |= 1 << lane;
    }

    pub fn contains(self, lane: u32) -> bool {
        self.bits & (1 << lane) != 0
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    pub fn from_bits(bits: u32) -> Self {
        ReplayRegister { bits }
    }

    pub fn lanes(self) -> Vec<u32> {
        (0..32).filter(|&l| self.contains(l)).collect()
    }

    pub fn count(self) -> u32 {
        self.bits.count_ones()
    }

    pub fn min_lane(self) -> Option<u32> {
        if self.bits == 0 {
            None
        } else {
            Some(self.bits.trailing_zeros())
        }
    }
}

impl std::fmt::Display for ReplayRegister {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{")?;
        let mut first = true;
        for lane in self.lanes() {
            if !first {
                write!(f, ",")?;
            }
            write!(f, "{lane}")?;
            first = false;
        }
        write!(f, "}}")
    }
}

/// Scalar-equivalent age: `a` precedes `b` when `a` belongs to a lower lane,
/// or to the same lane at an earlier instruction.
pub fn is_older(a: (u32, u32), b: (u32, u32)) -> bool {
    let (seq_a, lane_a) = a;
    let (seq_b, lane_b) = b;
    lane_a < lane_b || (lane_a == lane_b && seq_a < seq_b)
}

fn overlaps_kind(entry: &LsqEntry, other: &LsqEntry) -> bool {
    match entry.kind {
        // A load's overlaps are measured against stores.
        AccessKind::Load => other.kind == AccessKind::Store,
        // A store is compared against loads and stores.
        AccessKind::Store => true,
    }
}

fn overlap_mask(entry: &LsqEntry, other: &LsqEntry) -> ByteMask {
    if entry.line() != other.line() {
        return ByteMask::ZERO;
    }
    entry.touch_mask().and(other.touch_mask())
}

/// Per-byte overlap of `entry` with the co-resident accesses of its region,
/// with the contributing entry index alongside each partial mask.
pub fn vob_contributions(entry: &LsqEntry, region: &[LsqEntry]) -> Vec<(usize, ByteMask)> {
    let mut out = Vec::new();
    for (i, other) in region.iter().enumerate() {
        if other.instr_seq == entry.instr_seq && other.lane == entry.lane {
            continue;
        }
        if !overlaps_kind(entry, other) {
            continue;
        }
        let m = overlap_mask(entry, other);
        if !m.is_zero() {
            out.push((i, m));
        }
    }
    out
}

/// Union of all overlap contributions for `entry`.
pub fn compute_vob(entry: &LsqEntry, region: &[LsqEntry]) -> ByteMask {
    vob_contributions(entry, region)
        .into_iter()
        .fold(ByteMask::ZERO, |acc, (_, m)| acc.or(m))
}

/// Restricts a VOB to the horizontal-violation contributions: store bytes
/// written by strictly lower lanes, for load entries only.
pub fn compute_hob(
    entry: &LsqEntry,
    vob: ByteMask,
    contributions: &[(&LsqEntry, ByteMask)],
) -> ByteMask {
    if entry.kind != AccessKind::Load {
        return ByteMask::ZERO;
    }
    let mut hob = ByteMask::ZERO;
    for (c, m) in contributions {
        if c.kind == AccessKind::Store && c.lane < entry.lane {
            hob = hob.or(*m);
        }
    }
    hob.and(vob)
}

/// Fills the vob/hob masks of every entry in the region.
pub fn analyze_region(entries: &mut [LsqEntry]) {
    let snapshot: Vec<LsqEntry> = entries.to_vec();
    for (i, entry) in entries.iter_mut().enumerate() {
        let contribs = vob_contributions(&snapshot[i], &snapshot);
        let vob = contribs.iter().fold(ByteMask::ZERO, |acc, (_, m)| acc.or(*m));
        let refs: Vec<(&LsqEntry, ByteMask)> =
            contribs.iter().map(|(j, m)| (&snapshot[*j], *m)).collect();
        let hob = compute_hob(&snapshot[i], vob, &refs);
        entry.vob = vob;
        entry.hob = hob;
    }
}

/// Taints every lane owning an entry with nonzero HOB. Masks must already be
/// computed (see [`analyze_region`]).
pub fn mark_replay(entries: &[LsqEntry]) -> ReplayRegister {
    let mut reg = ReplayRegister::default();
    for e in entries {
        if !e.hob.is_zero() {
            reg.set(e.lane);
        }
    }
    reg
}
