//! End-to-end attack scenarios: covert-channel encode/decode plus the leak
//! experiments and their mitigation variants.
//!
//! Every leak scenario follows the same shape per secret byte: train, evict
//! the cache, run the armed gadget, then reload-decode the encode array. The
//! decoder discounts the lines the victim touches architecturally (the
//! attacker knows the gadget, so that footprint is public knowledge); it is
//! computed once from a scalar-oracle run of the armed program. Architectural
//! results never depend on the secret: only speculative cache state does.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SimError};
use crate::isa::{layout_memory, parse_gadget, GadgetProgram, LayoutConfig, Memory};
use crate::memhier::{
    classify, observe, trash_cache, CacheConfig, CacheState, HitClass, TimerModel, TimerState,
};
use crate::pipeline::{
    execute, CoreConfig, ExecResult, GuardedRunner, MachineEnv, Mitigation, NoSink, Strategy,
};

/// Default secret fixture (42 bytes).
pub const POC_SECRET: &[u8] = b"XXThe Magic Words are Squeamish Ossifrage.";

/// A 256-entry probe array: one symbol per cache line.
#[derive(Debug, Clone)]
pub struct CovertChannel {
    pub encode_array: String,
    /// Bytes between consecutive symbols; a multiple of the line size.
    pub stride: u64,
    /// Hit/miss boundary in observed ticks.
    pub threshold: u64,
}

pub const CHANNEL_SYMBOLS: usize = 256;

impl Default for CovertChannel {
    fn default() -> Self {
        CovertChannel { encode_array: "encode".into(), stride: 64, threshold: 101 }
    }
}

impl CovertChannel {
    pub fn validate(&self, line: u64) -> Result<()> {
        if self.stride < line || !self.stride.is_multiple_of(line) {
            return Err(SimError::Config(format!(
                "channel stride {} must be a positive multiple of the line size {line}",
                self.stride
            )));
        }
        if self.threshold == 0 {
            return Err(SimError::Config("channel threshold must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    SrvLeak,
    SpectreStl,
    SpectreV1,
    EvictTime,
    ReplayAmplification,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::SrvLeak => "srv_leak",
            ScenarioKind::SpectreStl => "spectre_stl",
            ScenarioKind::SpectreV1 => "spectre_v1",
            ScenarioKind::EvictTime => "evict_time",
            ScenarioKind::ReplayAmplification => "replay_amplification",
        }
    }

    pub fn parse(s: &str) -> Result<ScenarioKind> {
        [
            ScenarioKind::SrvLeak,
            ScenarioKind::SpectreStl,
            ScenarioKind::SpectreV1,
            ScenarioKind::EvictTime,
            ScenarioKind::ReplayAmplification,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| SimError::Config(format!("unknown scenario kind '{s}'")))
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    pub program: GadgetProgram,
    pub training_iterations: u32,
    pub secret: Vec<u8>,
    pub channel: CovertChannel,
    pub core: CoreConfig,
    pub cache: CacheConfig,
    pub timer: TimerModel,
    pub layout: LayoutConfig,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.program.validate()?;
        self.core.validate()?;
        self.cache.validate()?;
        self.channel.validate(self.cache.line)?;
        if self.secret.is_empty() {
            return Err(SimError::Config("secret must be nonempty".into()));
        }
        let enc = self
            .program
            .array(&self.channel.encode_array)
            .ok_or_else(|| SimError::Config(format!("no array '{}'", self.channel.encode_array)))?;
        if enc.byte_len() < CHANNEL_SYMBOLS as u64 * self.channel.stride {
            return Err(SimError::Config("encode array too small for 256 symbols".into()));
        }
        Ok(())
    }

    /// Fresh machine state for one trial. The timer stream is salted per
    /// trial so repeated decodes see independent jitter.
    pub fn build_env(&self, trial: u64) -> Result<MachineEnv> {
        let layout = LayoutConfig { seed: self.seed, ..self.layout.clone() };
        let cache = CacheConfig { seed: self.seed ^ 0x5ca1_ab1e, ..self.cache.clone() };
        let timer = TimerModel {
            seed: self.seed.wrapping_add(trial.wrapping_mul(0x9e37_79b9)),
            ..self.timer.clone()
        };
        let mut env = MachineEnv::build(&self.program, &layout, cache, timer)?;
        if let Some(id) = env.memory.id("secret") {
            env.memory.write_bytes(id, &self.secret);
        }
        Ok(env)
    }

    /// Element index into the anchor array that lands on byte `i` of the
    /// linked secret region.
    pub fn malicious_index(&self, i: usize) -> Result<i64> {
        for a in &self.program.arrays {
            if let Some(link) = &a.link {
                let anchor = self.program.array(&link.anchor).expect("validated");
                let off = link.byte_offset / anchor.elem_size as u64;
                return Ok((off + i as u64) as i64);
            }
        }
        Err(SimError::Config("program declares no linked region".into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecodeOutcome {
    Symbol { value: u8, ambiguous: bool },
    NoSymbol,
}

/// Probes all 256 channel entries through the coarse timer and classifies
/// each against the threshold. A unique hit decodes directly; multiple hits
/// decode to the fastest and set the ambiguity flag.
pub fn reload_decode(
    cache: &mut CacheState,
    timer: &mut TimerState,
    channel: &CovertChannel,
    encode_base: u64,
) -> (DecodeOutcome, Vec<u64>) {
    reload_decode_excluding(cache, timer, channel, encode_base, &[])
}

/// Decode with a set of discounted symbols: lines the attacker knows the
/// victim touches architecturally regardless of the secret.
pub fn reload_decode_excluding(
    cache: &mut CacheState,
    timer: &mut TimerState,
    channel: &CovertChannel,
    encode_base: u64,
    exclude: &[u8],
) -> (DecodeOutcome, Vec<u64>) {
    let mut observations = Vec::with_capacity(CHANNEL_SYMBOLS);
    let mut hits: Vec<(u8, u64)> = Vec::new();
    for s in 0..CHANNEL_SYMBOLS {
        let addr = encode_base + s as u64 * channel.stride;
        let (_, latency) = cache.access(addr, crate::isa::AccessKind::Load);
        let observed = observe(latency, timer);
        observations.push(observed);
        if classify(observed, channel.threshold) == HitClass::Hit && !exclude.contains(&(s as u8)) {
            hits.push((s as u8, observed));
        }
    }
    let outcome = match hits.len() {
        0 => DecodeOutcome::NoSymbol,
        1 => DecodeOutcome::Symbol { value: hits[0].0, ambiguous: false },
        _ => {
            let best = hits.iter().min_by_key(|(s, obs)| (*obs, *s)).unwrap();
            DecodeOutcome::Symbol { value: best.0, ambiguous: true }
        }
    };
    (outcome, observations)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LeakResult {
    pub recovered: Vec<u8>,
    pub per_byte_correct: Vec<bool>,
    pub accuracy: f64,
    pub replay_counts: Vec<u32>,
    /// Observed probe latencies, 256 per secret byte.
    pub hit_latencies: Vec<Vec<u64>>,
    pub ambiguous: u32,
    pub no_symbol: u32,
    pub squashes: u32,
}

impl LeakResult {
    fn push_byte(&mut self, expect: u8, outcome: DecodeOutcome, observations: Vec<u64>) {
        let (value, ambiguous) = match outcome {
            DecodeOutcome::Symbol { value, ambiguous } => (Some(value), ambiguous),
            DecodeOutcome::NoSymbol => (None, false),
        };
        if ambiguous {
            self.ambiguous += 1;
        }
        if value.is_none() {
            self.no_symbol += 1;
        }
        self.recovered.push(value.unwrap_or(0));
        self.per_byte_correct.push(value == Some(expect));
        self.hit_latencies.push(observations);
    }

    fn finalize(&mut self) {
        let total = self.per_byte_correct.len().max(1);
        let ok = self.per_byte_correct.iter().filter(|&&b| b).count();
        self.accuracy = ok as f64 / total as f64;
    }

    pub fn recovered_string(&self) -> String {
        self.recovered.iter().map(|&b| if b.is_ascii_graphic() || b == b' ' { b as char } else { '.' }).collect()
    }
}

/// Encode-array symbols touched by the architectural (scalar-order) execution
/// of the armed program: the decoder's exclusion set.
fn architectural_footprint(scenario: &Scenario, armed: &dyn Fn(&mut Memory)) -> Result<Vec<u8>> {
    let layout = LayoutConfig { seed: scenario.seed, ..scenario.layout.clone() };
    let map = layout_memory(&scenario.program, &layout)?;
    let mut mem = Memory::build(&scenario.program, &map);
    if let Some(id) = mem.id("secret") {
        mem.write_bytes(id, &scenario.secret);
    }
    armed(&mut mem);
    let enc = mem.id(&scenario.channel.encode_array).expect("validated");
    let base = mem.base(enc);
    let len = mem.length(enc) * mem.elem_size(enc) as u64;
    let mut symbols = Vec::new();
    for z in 0..scenario.program.trip_count {
        for ev in crate::isa::eval_scalar_iter(&scenario.program, z, &mut mem)? {
            if ev.addr >= base && ev.addr < base + len {
                let sym = (ev.addr - base) / scenario.channel.stride;
                if sym < CHANNEL_SYMBOLS as u64 && !symbols.contains(&(sym as u8)) {
                    symbols.push(sym as u8);
                }
            }
        }
    }
    Ok(symbols)
}

fn poke(mem: &mut Memory, array: &str, index: i64, value: i64) {
    let id = mem.id(array).expect("scenario array");
    mem.poke(id, index, value).expect("scenario arming write");
}

/// The speculative-vectorization leak: lane 0 stores over the malicious
/// index before lane 1 should read it in scalar order, but the merged gather
/// reads the stale value first and encodes the secret byte into the cache.
/// The replay repairs architectural state; the fill stays.
pub fn scenario_srv_leak(scenario: &Scenario) -> Result<LeakResult> {
    scenario.validate()?;
    if !scenario.core.strategy.is_vector() {
        return Err(SimError::Config("srv_leak expects a vector strategy".into()));
    }
    let exclusion = {
        let malicious = scenario.malicious_index(0)?;
        architectural_footprint(scenario, &move |mem| {
            poke(mem, "x", 0, 1);
            poke(mem, "x", 1, 0);
            poke(mem, "a", 1, malicious);
        })?
    };
    let mut leak = LeakResult::default();
    for (i, &byte) in scenario.secret.iter().enumerate() {
        let mut env = scenario.build_env(i as u64)?;
        for _ in 0..scenario.training_iterations {
            execute(&scenario.program, &mut env, &scenario.core, &mut NoSink)?;
        }
        trash_cache(&mut env.cache, 2 * scenario.cache.llc_size())?;
        // Arm: introduce the cross-lane dependency and the malicious index.
        poke(&mut env.memory, "x", 0, 1);
        poke(&mut env.memory, "x", 1, 0);
        poke(&mut env.memory, "a", 1, scenario.malicious_index(i)?);
        let result = execute(&scenario.program, &mut env, &scenario.core, &mut NoSink)?;
        leak.replay_counts.extend(result.replay_counts.iter().copied());
        leak.squashes += result.squash_count;
        let enc = env.memory.id(&scenario.channel.encode_array).expect("validated");
        let base = env.memory.base(enc);
        let (outcome, obs) = reload_decode_excluding(
            &mut env.cache,
            &mut env.timer,
            &scenario.channel,
            base,
            &exclusion,
        );
        leak.push_byte(byte, outcome, obs);
    }
    leak.finalize();
    Ok(leak)
}

/// Spectre-STL baseline: a store and a younger load alias only on the final
/// iteration, after the dependence predictor has learned to let the load run
/// ahead. Same train/arm/decode shape.
pub fn scenario_spectre_stl(scenario: &Scenario) -> Result<LeakResult> {
    scenario.validate()?;
    if scenario.core.strategy != Strategy::ScalarOoo {
        return Err(SimError::Config("spectre_stl expects the scalar_ooo strategy".into()));
    }
    let slot = scenario.program.trip_count as i64;
    let exclusion = {
        let malicious = scenario.malicious_index(0)?;
        architectural_footprint(scenario, &move |mem| {
            poke(mem, "a", slot, malicious);
        })?
    };
    let mut leak = LeakResult::default();
    for (i, &byte) in scenario.secret.iter().enumerate() {
        let mut env = scenario.build_env(i as u64)?;
        for _ in 0..scenario.training_iterations {
            execute(&scenario.program, &mut env, &scenario.core, &mut NoSink)?;
        }
        trash_cache(&mut env.cache, 2 * scenario.cache.llc_size())?;
        poke(&mut env.memory, "a", slot, scenario.malicious_index(i)?);
        let result = execute(&scenario.program, &mut env, &scenario.core, &mut NoSink)?;
        leak.squashes += result.squash_count;
        let enc = env.memory.id(&scenario.channel.encode_array).expect("validated");
        let base = env.memory.base(enc);
        let (outcome, obs) = reload_decode_excluding(
            &mut env.cache,
            &mut env.timer,
            &scenario.channel,
            base,
            &exclusion,
        );
        leak.push_byte(byte, outcome, obs);
    }
    leak.finalize();
    Ok(leak)
}

/// Classic bounds-check variant: train the branch taken, then supply an
/// out-of-bounds input under a stale taken prediction.
pub fn scenario_spectre_v1(scenario: &Scenario) -> Result<LeakResult> {
    scenario.validate()?;
    let mut leak = LeakResult::default();
    let bound = 256i64;
    for (i, &byte) in scenario.secret.iter().enumerate() {
        let mut env = scenario.build_env(i as u64)?;
        let mut runner = GuardedRunner::new(0x4000);
        for t in 0..scenario.training_iterations {
            let benign = (t % 16) as i64;
            poke(&mut env.memory, "xin", 0, benign);
            debug_assert!(benign < bound);
            runner.step(&scenario.program, &mut env, &scenario.core, &mut NoSink, true)?;
        }
        trash_cache(&mut env.cache, 2 * scenario.cache.llc_size())?;
        let malicious = scenario.malicious_index(i)?;
        poke(&mut env.memory, "xin", 0, malicious);
        // Out of bounds: the check resolves untaken.
        runner.step(&scenario.program, &mut env, &scenario.core, &mut NoSink, false)?;
        leak.squashes += runner.squash_count;
        let enc = env.memory.id(&scenario.channel.encode_array).expect("validated");
        let base = env.memory.base(enc);
        let (outcome, obs) =
            reload_decode_excluding(&mut env.cache, &mut env.timer, &scenario.channel, base, &[]);
        leak.push_byte(byte, outcome, obs);
    }
    leak.finalize();
    Ok(leak)
}

/// Dispatch by scenario kind; evict-time and amplification have their own
/// report types and entry points.
pub fn run_leak_scenario(scenario: &Scenario) -> Result<LeakResult> {
    match scenario.kind {
        ScenarioKind::SrvLeak => scenario_srv_leak(scenario),
        ScenarioKind::SpectreStl => scenario_spectre_stl(scenario),
        ScenarioKind::SpectreV1 => scenario_spectre_v1(scenario),
        other => Err(SimError::Config(format!(
            "scenario kind {} does not produce a leak result",
            other.name()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvictTimeReport {
    pub dependent_path_ticks: u64,
    pub independent_path_ticks: u64,
    pub post_region_variance: f64,
}

/// Ticks between a pre-block probe and a post-block probe when the block is
/// the vector region (secret bit set) or the scalar else-path (bit clear).
/// `evict` makes the region's accesses miss.
pub fn evict_time_trial(
    scenario: &Scenario,
    secret_bit: bool,
    evict: bool,
    seed: u64,
) -> Result<u64> {
    let mut env = scenario.build_env(seed)?;
    // Warm everything, then optionally evict.
    execute(&scenario.program, &mut env, &scenario.core, &mut NoSink)?;
    if evict {
        trash_cache(&mut env.cache, 2 * scenario.cache.llc_size())?;
    }
    let pre = env.cache.access(1 << 46, crate::isa::AccessKind::Load).1;
    let block = if secret_bit {
        execute(&scenario.program, &mut env, &scenario.core, &mut NoSink)?.cycles
    } else {
        // Non-vectorizable else path: a handful of ALU ticks.
        scenario.program.body.len() as u64 * scenario.program.trip_count
    };
    let post = env.cache.access(1 << 46, crate::isa::AccessKind::Load).1;
    let serialized = scenario.core.strategy.is_vector();
    if serialized {
        // The region-end marker serializes: the post probe starts at commit.
        Ok(pre + block + post)
    } else {
        // Without a serializing region end the post probe may overlap the
        // block; its issue point varies run to run.
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ seed);
        let offset = rng.random_range(0..=block);
        Ok(pre + block.max(offset + post))
    }
}

pub fn scenario_evict_time(scenario: &Scenario) -> Result<EvictTimeReport> {
    let dependent = evict_time_trial(scenario, true, true, 0)?;
    let independent = evict_time_trial(scenario, false, true, 0)?;
    let samples: Vec<u64> =
        (0..100).map(|s| evict_time_trial(scenario, true, false, s)).collect::<Result<_>>()?;
    let mean = samples.iter().sum::<u64>() as f64 / samples.len() as f64;
    let var = samples.iter().map(|&s| (s as f64 - mean).powi(2)).sum::<f64>()
        / samples.len() as f64;
    Ok(EvictTimeReport {
        dependent_path_ticks: dependent,
        independent_path_ticks: independent,
        post_region_variance: var,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmplificationPoint {
    pub replays: u32,
    /// Transmissions of the secret line: one per pass.
    pub observations: u32,
    pub analytic: f64,
    pub empirical: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AmplificationReport {
    pub points: Vec<AmplificationPoint>,
}

/// Runs the chained-dependence gadget at the requested replay count and
/// checks the detection probability against 1 - p^passes, where each pass
/// re-executes the transmitting load and each observation independently
/// survives the noisy channel with probability 1 - p.
pub fn scenario_replay_amplification(
    scenario: &Scenario,
    channel_noise_p: f64,
    target_replays: &[u32],
    trials: u32,
) -> Result<AmplificationReport> {
    if !(0.0..=1.0).contains(&channel_noise_p) {
        return Err(SimError::Config("noise probability must be in [0,1]".into()));
    }
    let width = scenario.core.width;
    let mut report = AmplificationReport::default();
    for &replays in target_replays {
        if replays > width - 1 {
            return Err(SimError::Config(format!(
                "cannot request {replays} replays at width {width}"
            )));
        }
        let program = fixtures::amplify_program(width, replays)?;
        let mut sc = scenario.clone();
        sc.program = program;
        let mut env = sc.build_env(replays as u64)?;
        poke(&mut env.memory, "a", (width - 1) as i64, sc.malicious_index(0)?);
        trash_cache(&mut env.cache, 2 * sc.cache.llc_size())?;
        let result = execute(&sc.program, &mut env, &sc.core, &mut NoSink)?;
        let got = result.replay_counts.first().copied().unwrap_or(0);
        if got != replays {
            return Err(SimError::Config(format!(
                "crafted index vector produced {got} replays, wanted {replays}"
            )));
        }
        let observations = transmissions(&sc, &env, &result);
        debug_assert_eq!(observations, replays + 1);
        let analytic = 1.0 - channel_noise_p.powi(observations as i32);
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ (replays as u64) << 32);
        let mut detected = 0u32;
        for _ in 0..trials {
            let seen = (0..observations).any(|_| rng.random_bool(1.0 - channel_noise_p));
            if seen {
                detected += 1;
            }
        }
        report.points.push(AmplificationPoint {
            replays,
            observations,
            analytic,
            empirical: detected as f64 / trials.max(1) as f64,
        });
    }
    Ok(report)
}

/// Loads of the secret-indexed encode line performed by the transmit lane.
fn transmissions(scenario: &Scenario, env: &MachineEnv, result: &ExecResult) -> u32 {
    let enc = env.memory.id(&scenario.channel.encode_array).expect("validated");
    let base = env.memory.base(enc);
    let len = env.memory.length(enc);
    let secret_line = scenario.secret[0] as u64 * scenario.channel.stride;
    result
        .trace
        .iter()
        .filter(|e| match e {
            crate::pipeline::TraceEvent::MemAccess { kind, addr, .. } => {
                *kind == crate::isa::AccessKind::Load
                    && *addr >= base
                    && *addr < base + len
                    && (*addr - base) == secret_line
            }
            _ => false,
        })
        .count() as u32
}

#[derive(Debug, Clone)]
pub struct MatrixReport {
    pub mitigations: Vec<Mitigation>,
    /// (scenario name, accuracy per mitigation).
    pub rows: Vec<(String, Vec<f64>)>,
}

/// Runs every scenario under every mitigation and collects the accuracies.
pub fn run_matrix(scenarios: &[Scenario], mitigations: &[Mitigation]) -> Result<MatrixReport> {
    let mut rows = Vec::new();
    for sc in scenarios {
        let mut cells = Vec::new();
        for &m in mitigations {
            let mut variant = sc.clone();
            variant.core.mitigation = m;
            let leak = run_leak_scenario(&variant)?;
            cells.push(leak.accuracy);
        }
        rows.push((sc.name.clone(), cells));
    }
    Ok(MatrixReport { mitigations: mitigations.to_vec(), rows })
}

/// Canonical gadget sources and scenario builders.
pub mod fixtures {
    use super::*;

    /// Single-statement scatter gadget with the cross-lane read-after-write:
    /// `a[x[z]] = encode[secret_val[a[z]] * stride]`.
    pub fn srv_leak_gadget_source() -> String {
        let mut src = String::from(
            "array a 4 16\narray x 4 16\narray secret_val 1 256\n\
             array secret 1 64 linked secret_val 4096\narray encode 1 16384\n",
        );
        for i in 0..16 {
            src.push_str(&format!("init x[{i}] = {i}\n"));
        }
        src.push_str("loop 16:\n  a[x[z]] = encode[secret_val[a[z]] * 64]\n");
        src
    }

    /// Store through an index vector followed by a load at `a[z+1]`: the
    /// pair aliases only on the last iteration (w[15] = 16), after the
    /// dependence predictor has trained up. Slot a[16] carries the malicious
    /// index and is never written until that final store.
    pub fn spectre_stl_gadget_source() -> String {
        let mut src = String::from(
            "array a 4 17\narray w 4 16\narray out 4 16\narray secret_val 1 256\n\
             array secret 1 64 linked secret_val 4096\narray encode 1 16384\n",
        );
        for i in 0..16u64 {
            let wv = if i == 15 { 16 } else { i };
            src.push_str(&format!("init w[{i}] = {wv}\n"));
        }
        src.push_str("loop 16:\n  a[w[z]] = 0\n  out[z] = encode[secret_val[a[z + 1]] * 64]\n");
        src
    }

    /// Bounds-checked dependent load chain driven by the guarded runner.
    pub fn spectre_v1_gadget_source() -> String {
        String::from(
            "array xin 4 1\narray out 4 1\narray secret_val 1 256\n\
             array secret 1 64 linked secret_val 4096\narray encode 1 16384\n\
             loop 1:\n  out[0] = encode[secret_val[xin[0]] * 64]\n",
        )
    }

    /// Chained-dependence gadget: statement one carries a dependency chain
    /// over the last `replays`+1 lanes, statement two transmits through an
    /// index array that is never stored to.
    pub fn amplify_gadget_source(width: u32, replays: u32) -> String {
        let n = width as u64;
        let mut src = format!(
            "array d 4 {n}\narray y 4 {n}\narray a 4 {n}\narray out 4 {n}\n\
             array secret_val 1 256\narray secret 1 64 linked secret_val 4096\n\
             array encode 1 16384\n"
        );
        let first_chained = n - 1 - replays as u64;
        for i in 0..n {
            let v = if i >= first_chained && i < n - 1 { i + 1 } else { i };
            src.push_str(&format!("init y[{i}] = {v}\n"));
        }
        src.push_str(&format!(
            "loop {n}:\n  d[y[z]] = d[z]\n  out[z] = encode[secret_val[a[z]] * 64]\n"
        ));
        src
    }

    pub fn amplify_program(width: u32, replays: u32) -> Result<GadgetProgram> {
        parse_gadget(&amplify_gadget_source(width, replays))
    }

    fn base_scenario(name: &str, kind: ScenarioKind, src: &str, core: CoreConfig) -> Scenario {
        Scenario {
            name: name.into(),
            kind,
            program: parse_gadget(src).expect("fixture parses"),
            training_iterations: 62,
            secret: POC_SECRET.to_vec(),
            channel: CovertChannel::default(),
            core,
            cache: CacheConfig::default(),
            timer: TimerModel::default(),
            layout: LayoutConfig::default(),
            seed: 1,
        }
    }

    pub fn srv_leak_scenario() -> Scenario {
        base_scenario(
            "srv_leak",
            ScenarioKind::SrvLeak,
            &srv_leak_gadget_source(),
            CoreConfig { strategy: Strategy::Srv, ..CoreConfig::default() },
        )
    }

    /// The fallback comparison: same gadget, run under a translator that
    /// abandons vectorization after the first violation.
    pub fn srv_fallback_scenario() -> Scenario {
        let mut sc = base_scenario(
            "srv_leak_fallback",
            ScenarioKind::SrvLeak,
            &srv_leak_gadget_source(),
            CoreConfig { strategy: Strategy::ScalarFallback, ..CoreConfig::default() },
        );
        sc.name = "srv_leak_fallback".into();
        sc
    }

    pub fn spectre_stl_scenario() -> Scenario {
        base_scenario(
            "spectre_stl",
            ScenarioKind::SpectreStl,
            &spectre_stl_gadget_source(),
            CoreConfig { strategy: Strategy::ScalarOoo, ..CoreConfig::default() },
        )
    }

    pub fn spectre_v1_scenario() -> Scenario {
        let mut sc = base_scenario(
            "spectre_v1",
            ScenarioKind::SpectreV1,
            &spectre_v1_gadget_source(),
            CoreConfig { strategy: Strategy::ScalarInOrder, ..CoreConfig::default() },
        );
        sc.training_iterations = 3;
        sc
    }

    pub fn evict_time_scenario() -> Scenario {
        let mut sc = base_scenario(
            "evict_time",
            ScenarioKind::EvictTime,
            &srv_leak_gadget_source(),
            CoreConfig { strategy: Strategy::Srv, ..CoreConfig::default() },
        );
        sc.name = "evict_time".into();
        sc
    }

    pub fn amplification_scenario() -> Scenario {
        let mut sc = base_scenario(
            "replay_amplification",
            ScenarioKind::ReplayAmplification,
            &amplify_gadget_source(16, 15),
            CoreConfig { strategy: Strategy::Srv, ..CoreConfig::default() },
        );
        sc.secret = vec![0x58];
        sc
    }

    /// The four default matrix rows.
    pub fn default_matrix_scenarios() -> Vec<Scenario> {
        vec![
            srv_leak_scenario(),
            srv_fallback_scenario(),
            spectre_stl_scenario(),
            spectre_v1_scenario(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::memhier::LevelConfig;

    /// Small cache so per-test trashing stays cheap.
    pub(crate) fn desk_cache() -> CacheConfig {
        CacheConfig {
            line: 64,
            levels: vec![
                LevelConfig {
                    size: 16 << 10,
                    assoc: 8,
                    hit_latency: 40,
                    replacement: crate::memhier::Replacement::Lru,
                },
                LevelConfig {
                    size: 256 << 10,
                    assoc: 16,
                    hit_latency: 150,
                    replacement: crate::memhier::Replacement::Lru,
                },
            ],
            memory_latency: 400,
            seed: 0,
        }
    }

    fn quick(mut sc: Scenario, n_bytes: usize) -> Scenario {
        sc.cache = desk_cache();
        sc.secret.truncate(n_bytes);
        sc.training_iterations = 4;
        sc
    }

    #[test]
    fn decode_finds_a_seeded_entry() {
        let sc = quick(srv_leak_scenario(), 1);
        let mut env = sc.build_env(0).unwrap();
        let enc = env.memory.id("encode").unwrap();
        let base = env.memory.base(enc);
        trash_cache(&mut env.cache, 2 * sc.cache.llc_size()).unwrap();
        env.cache.access(base + 0x58 * 64, crate::isa::AccessKind::Load);
        let (outcome, _) = reload_decode(&mut env.cache, &mut env.timer, &sc.channel, base);
        assert_eq!(outcome, DecodeOutcome::Symbol { value: 0x58, ambiguous: false });
    }

    #[test]
    fn decode_cold_cache_is_no_symbol() {
        let sc = quick(srv_leak_scenario(), 1);
        let mut env = sc.build_env(0).unwrap();
        let enc = env.memory.id("encode").unwrap();
        let base = env.memory.base(enc);
        trash_cache(&mut env.cache, 2 * sc.cache.llc_size()).unwrap();
        let (outcome, _) = reload_decode(&mut env.cache, &mut env.timer, &sc.channel, base);
        assert_eq!(outcome, DecodeOutcome::NoSymbol);
    }

    #[test]
    fn srv_leak_recovers_bytes_noise_free() {
        let sc = quick(srv_leak_scenario(), 6);
        let leak = scenario_srv_leak(&sc).unwrap();
        assert_eq!(leak.accuracy, 1.0, "recovered: {}", leak.recovered_string());
        assert_eq!(&leak.recovered, b"XXThe ");
        assert!(leak.replay_counts.contains(&1));
    }

    #[test]
    fn srv_leak_without_training_still_leaks() {
        let mut sc = quick(srv_leak_scenario(), 3);
        sc.training_iterations = 0;
        let leak = scenario_srv_leak(&sc).unwrap();
        assert_eq!(leak.accuracy, 1.0);
    }

    #[test]
    fn srv_leak_survives_fences_but_not_vfence() {
        let mut fenced = quick(srv_leak_scenario(), 3);
        fenced.core.mitigation = Mitigation::MemFence;
        assert_eq!(scenario_srv_leak(&fenced).unwrap().accuracy, 1.0);

        let mut vfenced = quick(srv_leak_scenario(), 3);
        vfenced.core.mitigation = Mitigation::Vfence;
        let leak = scenario_srv_leak(&vfenced).unwrap();
        assert_eq!(leak.accuracy, 0.0);
        assert_eq!(leak.no_symbol, 3);
    }

    #[test]
    fn stl_leaks_bare_and_dies_under_fence() {
        let sc = quick(spectre_stl_scenario(), 4);
        let leak = scenario_spectre_stl(&sc).unwrap();
        assert_eq!(leak.accuracy, 1.0, "recovered: {}", leak.recovered_string());
        assert_eq!(leak.squashes, 4);

        let mut fenced = quick(spectre_stl_scenario(), 4);
        fenced.core.mitigation = Mitigation::MemFence;
        let leak = scenario_spectre_stl(&fenced).unwrap();
        assert_eq!(leak.accuracy, 0.0);
    }

    #[test]
    fn v1_needs_training_to_open_the_window() {
        let sc = quick(spectre_v1_scenario(), 3);
        let leak = scenario_spectre_v1(&sc).unwrap();
        assert_eq!(leak.accuracy, 1.0, "recovered: {}", leak.recovered_string());

        let mut cold = quick(spectre_v1_scenario(), 3);
        cold.training_iterations = 0;
        let leak = scenario_spectre_v1(&cold).unwrap();
        assert_eq!(leak.accuracy, 0.0);
        assert_eq!(leak.no_symbol, 3);
    }

    #[test]
    fn fallback_leaks_once_per_run() {
        let sc = quick(srv_fallback_scenario(), 3);
        let leak = run_leak_scenario(&sc).unwrap();
        assert_eq!(leak.accuracy, 1.0);
        assert_eq!(leak.squashes, 3, "one fallback squash per armed run");
    }

    #[test]
    fn amplification_counts_match_request() {
        let mut sc = amplification_scenario();
        sc.cache = desk_cache();
        let report = scenario_replay_amplification(&sc, 0.0, &[0, 3, 15], 100).unwrap();
        for pt in &report.points {
            assert_eq!(pt.observations, pt.replays + 1);
            assert_eq!(pt.empirical, 1.0, "p=0 detects at one pass");
        }
    }

    #[test]
    fn armed_run_preserves_architectural_memory() {
        // The attack never breaks functional correctness: the armed gadget
        // commits exactly what the scalar oracle computes.
        let sc = quick(srv_leak_scenario(), 1);
        let arm = |env: &mut crate::pipeline::MachineEnv| {
            poke(&mut env.memory, "x", 0, 1);
            poke(&mut env.memory, "x", 1, 0);
            poke(&mut env.memory, "a", 1, sc.malicious_index(0).unwrap());
        };
        let mut vector_env = sc.build_env(0).unwrap();
        arm(&mut vector_env);
        let vector = execute(&sc.program, &mut vector_env, &sc.core, &mut NoSink).unwrap();
        let mut scalar_env = sc.build_env(0).unwrap();
        arm(&mut scalar_env);
        let scalar = crate::pipeline::run_scalar(
            &sc.program,
            &mut scalar_env,
            &sc.core,
            &mut NoSink,
        )
        .unwrap();
        assert_eq!(vector.final_memory, scalar.final_memory);
        // And yet the speculative pass fetched the secret line.
        let enc = vector_env.memory.id("encode").unwrap();
        let base = vector_env.memory.base(enc);
        let line = base + sc.secret[0] as u64 * 64;
        assert!(vector_env.cache.probe(line).is_hit(), "secret-indexed fill persists");
        assert!(!scalar_env.cache.probe(line).is_hit(), "oracle never touches it");
    }

    #[test]
    fn decode_survives_timer_jitter() {
        // Hit 40 / miss 400 against threshold 101 with sigma = 10: the
        // decoder stays essentially perfect.
        let mut sc = quick(srv_leak_scenario(), 1);
        sc.timer.jitter_stddev = 10.0;
        let mut correct = 0u32;
        let trials = 10_000u32;
        let mut env = sc.build_env(0).unwrap();
        let enc = env.memory.id("encode").unwrap();
        let base = env.memory.base(enc);
        for t in 0..trials {
            trash_cache(&mut env.cache, 2 * sc.cache.llc_size()).unwrap();
            let symbol = (t % 256) as u8;
            env.cache.access(base + symbol as u64 * 64, crate::isa::AccessKind::Load);
            let (outcome, _) = reload_decode(&mut env.cache, &mut env.timer, &sc.channel, base);
            if outcome == (DecodeOutcome::Symbol { value: symbol, ambiguous: false }) {
                correct += 1;
            }
        }
        let accuracy = correct as f64 / trials as f64;
        assert!(accuracy >= 0.99, "decode accuracy {accuracy}");
    }

    #[test]
    fn leakage_is_monotone_in_channel_fidelity() {
        let mut accuracies = Vec::new();
        for sigma in [0.0f64, 10.0, 300.0] {
            let mut sc = quick(srv_leak_scenario(), 8);
            sc.timer.jitter_stddev = sigma;
            accuracies.push(scenario_srv_leak(&sc).unwrap().accuracy);
        }
        assert!(accuracies[0] >= accuracies[1] && accuracies[1] >= accuracies[2]);
        assert_eq!(accuracies[0], 1.0);
    }

    #[test]
    fn region_miss_costs_at_least_the_latency_gap() {
        let mut sc = evict_time_scenario();
        sc.cache = desk_cache();
        let cold = evict_time_trial(&sc, true, true, 0).unwrap();
        let warm = evict_time_trial(&sc, true, false, 0).unwrap();
        let gap = sc.cache.memory_latency - sc.cache.levels[0].hit_latency;
        assert!(cold - warm >= gap, "cold {cold} vs warm {warm}, gap {gap}");
    }

    #[test]
    fn default_matrix_is_four_by_seven() {
        let mut scenarios = default_matrix_scenarios();
        for sc in &mut scenarios {
            sc.cache = desk_cache();
            sc.secret.truncate(2);
            sc.training_iterations = 6;
        }
        let report = run_matrix(&scenarios, &Mitigation::ALL).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert!(report.rows.iter().all(|(_, cells)| cells.len() == 7));
        // The headline cells, at a glance.
        let row = |name: &str| {
            report
                .rows
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, cells)| cells.clone())
                .unwrap()
        };
        let srv = row("srv_leak");
        assert_eq!(srv[0], 1.0, "srv_leak under none");
        assert_eq!(srv[1], 1.0, "srv_leak under mem_fence");
        let stl = row("spectre_stl");
        assert_eq!(stl[0], 1.0, "stl under none");
        assert_eq!(stl[1], 0.0, "stl under mem_fence");
    }

    #[test]
    fn evict_time_serializes_under_srv() {
        let mut sc = evict_time_scenario();
        sc.cache = desk_cache();
        let report = scenario_evict_time(&sc).unwrap();
        assert_eq!(report.post_region_variance, 0.0);
        assert!(report.dependent_path_ticks > report.independent_path_ticks);

        let mut ooo = sc.clone();
        ooo.core.strategy = Strategy::ScalarOoo;
        let report = scenario_evict_time(&ooo).unwrap();
        assert!(report.post_region_variance > 0.0);
    }
}
