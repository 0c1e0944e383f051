//! Multi-level set-associative cache with deterministic latencies, a
//! flush-by-eviction primitive, the coarse jittered timer used as the
//! observation model, and the capacity reverse-engineering procedure
//! (latency sweep plus knee detection).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SimError};
use crate::isa::AccessKind;

/// Scratch region used by [`trash_cache`]; disjoint from any program array.
const TRASH_BASE: u64 = 1 << 44;
/// Scratch region used by [`sweep_latency`].
const SWEEP_BASE: u64 = 1 << 45;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Replacement {
    Lru,
    /// Victim chosen by the cache's seeded generator.
    Random,
}

#[derive(Debug, Clone)]
pub struct LevelConfig {
    pub size: u64,
    pub assoc: u32,
    pub hit_latency: u64,
    pub replacement: Replacement,
}

#[derive(Debug, Clone)]
pub struct CacheConfig {
    pub line: u64,
    /// Innermost first.
    pub levels: Vec<LevelConfig>,
    pub memory_latency: u64,
    pub seed: u64,
}

impl Default for CacheConfig {
    /// Two inclusive levels: 64 KiB / 8-way over a 32 MiB / 16-way last
    /// level, with 40 / 150 / 400 tick latencies.
    fn default() -> Self {
        CacheConfig {
            line: 64,
            levels: vec![
                LevelConfig { size: 64 << 10, assoc: 8, hit_latency: 40, replacement: Replacement::Lru },
                LevelConfig { size: 32 << 20, assoc: 16, hit_latency: 150, replacement: Replacement::Lru },
            ],
            memory_latency: 400,
            seed: 0,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.line.is_power_of_two() || self.line < 8 {
            return Err(SimError::Config(format!("line size {} invalid", self.line)));
        }
        if self.levels.is_empty() {
            return Err(SimError::Config("cache needs at least one level".into()));
        }
        let mut prev = 0;
        for (i, l) in self.levels.iter().enumerate() {
            if l.size % (self.line * l.assoc as u64) != 0 {
                return Err(SimError::Config(format!(
                    "level {} size {} not divisible by line*assoc",
                    i + 1,
                    l.size
                )));
            }
            if l.hit_latency <= prev {
                return Err(SimError::Config("latencies must strictly increase outward".into()));
            }
            prev = l.hit_latency;
        }
        if self.memory_latency <= prev {
            return Err(SimError::Config("memory latency must exceed last-level latency".into()));
        }
        Ok(())
    }

    pub fn llc_size(&self) -> u64 {
        self.levels.last().map(|l| l.size).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HitLevel {
    /// 0-based level index, innermost first.
    Level(usize),
    Memory,
}

impl HitLevel {
    pub fn is_hit(self) -> bool {
        matches!(self, HitLevel::Level(_))
    }

    pub fn label(self) -> String {
        match self {
            HitLevel::Level(k) => format!("L{}", k + 1),
            HitLevel::Memory => "mem".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Way {
    valid: bool,
    tag: u64,
    last_used: u64,
}

#[derive(Debug, Clone)]
struct LevelState {
    nsets: u64,
    assoc: u32,
    hit_latency: u64,
    replacement: Replacement,
    ways: Vec<Way>,
}

impl LevelState {
    fn new(cfg: &LevelConfig, line: u64) -> Self {
        let nsets = cfg.size / (line * cfg.assoc as u64);
        LevelState {
            nsets,
            assoc: cfg.assoc,
            hit_latency: cfg.hit_latency,
            replacement: cfg.replacement,
            ways: vec![Way::default(); (nsets * cfg.assoc as u64) as usize],
        }
    }

    fn set_range(&self, line_addr: u64) -> (usize, u64) {
        let set = (line_addr % self.nsets) as usize;
        (set * self.assoc as usize, line_addr / self.nsets)
    }

    fn find(&self, line_addr: u64) -> Option<usize> {
        let (start, tag) = self.set_range(line_addr);
        (0..self.assoc as usize)
            .map(|w| start + w)
            .find(|&i| self.ways[i].valid && self.ways[i].tag == tag)
    }

    fn invalidate(&mut self, line_addr: u64) {
        if let Some(i) = self.find(line_addr) {
            self.ways[i].valid = false;
        }
    }

    /// Fills the line, returning the evicted line address if a valid victim
    /// was displaced.
    fn fill(&mut self, line_addr: u64, clock: u64, rng: &mut ChaCha8Rng) -> Option<u64> {
        if let Some(i) = self.find(line_addr) {
            self.ways[i].last_used = clock;
            return None;
        }
        let (start, tag) = self.set_range(line_addr);
        let set = line_addr % self.nsets;
        let mut victim = start;
        let mut evicted = None;
        if let Some(free) =
            (0..self.assoc as usize).map(|w| start + w).find(|&i| !self.ways[i].valid)
        {
            victim = free;
        } else {
            match self.replacement {
                Replacement::Lru => {
                    let mut oldest = u64::MAX;
                    for i in (0..self.assoc as usize).map(|w| start + w) {
                        if self.ways[i].last_used < oldest {
                            oldest = self.ways[i].last_used;
                            victim = i;
                        }
                    }
                }
                Replacement::Random => {
                    victim = start + rng.random_range(0..self.assoc as usize);
                }
            }
            let old = self.ways[victim];
            evicted = Some(old.tag * self.nsets + set);
        }
        self.ways[victim] = Way { valid: true, tag, last_used: clock };
        evicted
    }

    fn touch(&mut self, line_addr: u64, clock: u64) {
        if let Some(i) = self.find(line_addr) {
            self.ways[i].last_used = clock;
        }
    }
}

/// Inclusive multi-level cache. Evicting a line from an outer level
/// back-invalidates it from every inner level.
#[derive(Debug, Clone)]
pub struct CacheState {
    cfg: CacheConfig,
    levels: Vec<LevelState>,
    clock: u64,
    rng: ChaCha8Rng,
}

impl CacheState {
    pub fn new(cfg: CacheConfig) -> Self {
        let levels = cfg.levels.iter().map(|l| LevelState::new(l, cfg.line)).collect();
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        CacheState { cfg, levels, clock: 0, rng }
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    pub fn line_of(&self, addr: u64) -> u64 {
        addr / self.cfg.line
    }

    /// Innermost level currently holding the line; no state change.
    pub fn probe(&self, addr: u64) -> HitLevel {
        let line = self.line_of(addr);
        for (k, level) in self.levels.iter().enumerate() {
            if level.find(line).is_some() {
                return HitLevel::Level(k);
            }
        }
        HitLevel::Memory
    }

    pub fn latency_of(&self, hit: HitLevel) -> u64 {
        match hit {
            HitLevel::Level(k) => self.levels[k].hit_latency,
            HitLevel::Memory => self.cfg.memory_latency,
        }
    }

    /// Looks the line up, fills on miss, updates replacement state, and
    /// returns where it was found together with the access latency.
    pub fn access(&mut self, addr: u64, _kind: AccessKind) -> (HitLevel, u64) {
        self.clock += 1;
        let line = self.line_of(addr);
        let hit = self.probe(addr);
        let outermost = match hit {
            HitLevel::Level(k) => {
                self.levels[k].touch(line, self.clock);
                k
            }
            HitLevel::Memory => self.levels.len(),
        };
        // Fill every level inside the hit point, outermost first so that
        // back-invalidation from an outer eviction cannot remove the new line.
        for k in (0..outermost).rev() {
            let evicted = self.levels[k].fill(line, self.clock, &mut self.rng);
            if let Some(victim) = evicted {
                for inner in 0..k {
                    self.levels[inner].invalidate(victim);
                }
            }
        }
        (hit, self.latency_of(hit))
    }

    /// Probe-only access used by mitigations that forbid cache updates: the
    /// latency is observable but no fill or replacement update happens.
    pub fn access_nofill(&self, addr: u64) -> (HitLevel, u64) {
        let hit = self.probe(addr);
        (hit, self.latency_of(hit))
    }
}

/// Evicts by overwriting: sequential line-stride writes over a scratch region
/// of `footprint` bytes. Returns the number of accesses performed.
pub fn trash_cache(state: &mut CacheState, footprint: u64) -> Result<u64> {
    let line = state.cfg.line;
    if footprint < line {
        return Err(SimError::Config(format!("trash footprint {footprint} below line size")));
    }
    let lines = footprint / line;
    for i in 0..lines {
        state.access(TRASH_BASE + i * line, AccessKind::Store);
    }
    Ok(lines)
}

/// Quantized, jittered tick counter standing in for a helper-thread timer.
#[derive(Debug, Clone)]
pub struct TimerModel {
    /// Ticks per observable increment.
    pub granularity: u64,
    pub jitter_stddev: f64,
    pub seed: u64,
}

impl Default for TimerModel {
    fn default() -> Self {
        TimerModel { granularity: 1, jitter_stddev: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TimerState {
    model: TimerModel,
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
}

impl TimerState {
    pub fn new(model: TimerModel) -> Result<Self> {
        if model.granularity == 0 {
            return Err(SimError::Config("timer granularity must be >= 1".into()));
        }
        if model.jitter_stddev < 0.0 {
            return Err(SimError::Config("timer jitter must be >= 0".into()));
        }
        let normal = if model.jitter_stddev > 0.0 {
            Some(Normal::new(0.0, model.jitter_stddev).expect("validated"))
        } else {
            None
        };
        Ok(TimerState { rng: ChaCha8Rng::seed_from_u64(model.seed), model, normal })
    }

    pub fn model(&self) -> &TimerModel {
        &self.model
    }
}

/// What a latency looks like through the coarse timer: jitter added, clamped
/// at zero, then floored to the last completed timer increment.
pub fn observe(latency_ticks: u64, timer: &mut TimerState) -> u64 {
    let jitter = match &timer.normal {
        Some(n) => n.sample(&mut timer.rng),
        None => 0.0,
    };
    let raw = (latency_ticks as f64 + jitter).max(0.0);
    let g = timer.model.granularity;
    (raw as u64) / g * g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HitClass {
    Hit,
    Miss,
}

/// Threshold classifier; the boundary observation counts as a miss.
pub fn classify(observed_ticks: u64, threshold: u64) -> HitClass {
    if observed_ticks < threshold {
        HitClass::Hit
    } else {
        HitClass::Miss
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyRow {
    pub array_size: u64,
    pub mean_latency: f64,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LatencyTable {
    pub rows: Vec<LatencyRow>,
}

/// Working-set sweep: for each size, an array is initialized, walked once to
/// load it, then re-probed at one address per page through the coarse timer.
pub fn sweep_latency(
    state: &mut CacheState,
    timer: &mut TimerState,
    sizes: &[u64],
    reps: u32,
    page: u64,
    mem_limit: u64,
) -> Result<LatencyTable> {
    if sizes.is_empty() {
        return Err(SimError::Config("sweep needs at least one size".into()));
    }
    if !sizes.windows(2).all(|w| w[0] < w[1]) {
        return Err(SimError::Config("sweep sizes must be ascending".into()));
    }
    if reps == 0 {
        return Err(SimError::Config("sweep reps must be >= 1".into()));
    }
    let line = state.config().line;
    let mut rows = Vec::new();
    for &size in sizes {
        if size > mem_limit {
            return Err(SimError::Capacity { needed: size, limit: mem_limit });
        }
        let mut total: f64 = 0.0;
        let mut samples: u64 = 0;
        for _ in 0..reps {
            let lines = size / line;
            for i in 0..lines {
                state.access(SWEEP_BASE + i * line, AccessKind::Store);
            }
            for i in 0..lines {
                state.access(SWEEP_BASE + i * line, AccessKind::Load);
            }
            // One probe per page defeats a hardware prefetcher; none is
            // modeled here, but the procedure is kept.
            let mut off = 0;
            while off < size {
                let (_, lat) = state.access(SWEEP_BASE + off, AccessKind::Load);
                total += observe(lat, timer) as f64;
                samples += 1;
                off += page;
            }
        }
        rows.push(LatencyRow { array_size: size, mean_latency: total / samples as f64, samples });
    }
    Ok(LatencyTable { rows })
}

/// Knee detection by plateau midpoint: the estimate is the largest size whose
/// mean latency stays below the midpoint of the fastest and slowest plateaus.
pub fn estimate_llc_size(table: &LatencyTable) -> Result<u64> {
    if table.rows.len() < 3 {
        return Err(SimError::Config("latency table needs at least 3 rows".into()));
    }
    if !table.rows.windows(2).all(|w| w[0].array_size < w[1].array_size) {
        return Err(SimError::Config("latency table rows must be sorted by size".into()));
    }
    let min = table.rows.iter().map(|r| r.mean_latency).fold(f64::INFINITY, f64::min);
    let max = table.rows.iter().map(|r| r.mean_latency).fold(0.0f64, f64::max);
    if min <= 0.0 || max / min < 1.5 {
        return Err(SimError::NoKnee);
    }
    let threshold = (min + max) / 2.0;
    table
        .rows
        .iter()
        .filter(|r| r.mean_latency < threshold)
        .map(|r| r.array_size)
        .max()
        .ok_or(SimError::NoKnee)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cache(l1_size: u64, assoc: u32, replacement: Replacement) -> CacheState {
        CacheState::new(CacheConfig {
            line: 64,
            levels: vec![LevelConfig { size: l1_size, assoc, hit_latency: 40, replacement }],
            memory_latency: 400,
            seed: 3,
        })
    }

    fn two_level(l1: u64, llc: u64) -> CacheState {
        CacheState::new(CacheConfig {
            line: 64,
            levels: vec![
                LevelConfig { size: l1, assoc: 8, hit_latency: 40, replacement: Replacement::Lru },
                LevelConfig { size: llc, assoc: 16, hit_latency: 150, replacement: Replacement::Lru },
            ],
            memory_latency: 400,
            seed: 3,
        })
    }

    #[test]
    fn second_access_hits_innermost() {
        let mut c = two_level(1 << 12, 1 << 16);
        let (h1, l1) = c.access(0x1000, AccessKind::Load);
        assert_eq!(h1, HitLevel::Memory);
        assert_eq!(l1, 400);
        let (h2, l2) = c.access(0x1000, AccessKind::Load);
        assert_eq!(h2, HitLevel::Level(0));
        assert_eq!(l2, 40);
    }

    #[test]
    fn lru_round_robin_misses_on_overcommitted_set() {
        // Pen-and-paper trace for a 4-way set visited by 5 conflicting lines:
        // with LRU, every access in the cyclic pattern misses.
        let mut c = small_cache(64 * 4, 4, Replacement::Lru); // exactly one set
        let addrs: Vec<u64> = (0..5u64).map(|i| i * 64).collect();
        for &a in &addrs {
            c.access(a, AccessKind::Load);
        }
        for _round in 0..3 {
            for &a in &addrs {
                let (hit, _) = c.access(a, AccessKind::Load);
                assert_eq!(hit, HitLevel::Memory);
            }
        }
    }

    #[test]
    fn trash_with_twice_llc_evicts_everything() {
        let mut c = two_level(1 << 12, 1 << 16);
        for i in 0..32u64 {
            c.access(0x9000 + i * 64, AccessKind::Load);
        }
        trash_cache(&mut c, 2 * (1 << 16)).unwrap();
        for i in 0..32u64 {
            assert_eq!(c.probe(0x9000 + i * 64), HitLevel::Memory);
        }
    }

    #[test]
    fn trash_one_line_disturbs_one_set() {
        let mut c = small_cache(1 << 12, 4, Replacement::Lru);
        let n = trash_cache(&mut c, 64).unwrap();
        assert_eq!(n, 1);
        let valid: usize = c.levels[0].ways.iter().filter(|w| w.valid).count();
        assert_eq!(valid, 1);
    }

    #[test]
    fn exact_footprint_random_replacement_leaves_residents() {
        // With random replacement and a trash footprint equal to capacity,
        // some victims repeat, so prior lines survive with probability > 0.
        let mut survivors = 0;
        for seed in 0..1000 {
            let mut c = CacheState::new(CacheConfig {
                line: 64,
                levels: vec![LevelConfig {
                    size: 1 << 12,
                    assoc: 4,
                    hit_latency: 40,
                    replacement: Replacement::Random,
                }],
                memory_latency: 400,
                seed,
            });
            c.access(0x5000, AccessKind::Load);
            trash_cache(&mut c, 1 << 12).unwrap();
            if c.probe(0x5000).is_hit() {
                survivors += 1;
            }
        }
        assert!(survivors > 0, "residual hit probability should be positive");
    }

    #[test]
    fn inclusion_holds_after_outer_eviction() {
        let mut c = two_level(1 << 12, 1 << 14);
        // Overflow the LLC so evictions back-invalidate the inner level.
        for i in 0..(4 * (1 << 14) / 64) as u64 {
            c.access(i * 64, AccessKind::Load);
        }
        for lvl in 0..c.levels.len() {
            let inner = &c.levels[lvl];
            for (i, w) in inner.ways.iter().enumerate() {
                if !w.valid {
                    continue;
                }
                let set = (i / inner.assoc as usize) as u64;
                let line = w.tag * inner.nsets + set;
                for outer in lvl + 1..c.levels.len() {
                    assert!(
                        c.levels[outer].find(line).is_some(),
                        "line present at L{} missing from L{}",
                        lvl + 1,
                        outer + 1
                    );
                }
            }
        }
    }

    #[test]
    fn observe_is_identity_without_jitter_or_quantization() {
        let mut t = TimerState::new(TimerModel::default()).unwrap();
        for v in [0u64, 1, 40, 400, 12345] {
            assert_eq!(observe(v, &mut t), v);
        }
    }

    #[test]
    fn observe_floors_to_granularity() {
        let mut t =
            TimerState::new(TimerModel { granularity: 5, jitter_stddev: 0.0, seed: 0 }).unwrap();
        assert_eq!(observe(43, &mut t), 40);
        assert_eq!(observe(40, &mut t), 40);
        assert_eq!(observe(4, &mut t), 0);
    }

    #[test]
    fn classify_uses_strict_threshold() {
        assert_eq!(classify(40, 101), HitClass::Hit);
        assert_eq!(classify(400, 101), HitClass::Miss);
        assert_eq!(classify(101, 101), HitClass::Miss);
    }

    #[test]
    fn flat_table_has_no_knee() {
        let table = LatencyTable {
            rows: (1..5)
                .map(|i| LatencyRow { array_size: i * 4096, mean_latency: 40.0, samples: 10 })
                .collect(),
        };
        assert!(matches!(estimate_llc_size(&table), Err(SimError::NoKnee)));
    }

    #[test]
    fn sweep_recovers_configured_llc_exactly() {
        // Desk-scale config: 4 KiB L1, 64 KiB LLC.
        let mut c = two_level(1 << 12, 1 << 16);
        let mut t = TimerState::new(TimerModel::default()).unwrap();
        let sizes: Vec<u64> = vec![
            4 << 10,
            8 << 10,
            16 << 10,
            32 << 10,
            64 << 10,
            128 << 10,
            256 << 10,
        ];
        let table = sweep_latency(&mut c, &mut t, &sizes, 1, 4096, 1 << 30).unwrap();
        assert_eq!(estimate_llc_size(&table).unwrap(), 64 << 10);
    }

    #[test]
    fn sub_l1_sweep_is_flat_at_l1_latency() {
        let mut c = two_level(1 << 14, 1 << 18);
        let mut t = TimerState::new(TimerModel::default()).unwrap();
        let table = sweep_latency(&mut c, &mut t, &[4 << 10], 1, 4096, 1 << 30).unwrap();
        assert_eq!(table.rows[0].mean_latency, 40.0);
    }

    #[test]
    fn smaller_l1_knee_is_ignored_by_plateau_midpoint() {
        let mut c = two_level(32 << 10, 4 << 20);
        let mut t = TimerState::new(TimerModel::default()).unwrap();
        let sizes: Vec<u64> =
            vec![4 << 10, 8 << 10, 16 << 10, 32 << 10, 64 << 10, 1 << 20, 2 << 20, 4 << 20, 8 << 20, 16 << 20];
        let table = sweep_latency(&mut c, &mut t, &sizes, 1, 4096, 1 << 30).unwrap();
        assert_eq!(estimate_llc_size(&table).unwrap(), 4 << 20);
    }

    #[test]
    fn oversized_sweep_reports_capacity() {
        let mut c = two_level(1 << 12, 1 << 16);
        let mut t = TimerState::new(TimerModel::default()).unwrap();
        let err = sweep_latency(&mut c, &mut t, &[1 << 20], 1, 4096, 1 << 16).unwrap_err();
        assert!(matches!(err, SimError::Capacity { .. }));
    }
}
