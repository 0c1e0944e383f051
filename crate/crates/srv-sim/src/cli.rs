//! Scenario runner: structured-text scenario configs, command-line
//! overrides, and artifact emission. Exit status reflects tool health, never
//! the leak outcome.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::attacks::{
    self, fixtures, run_leak_scenario, run_matrix, scenario_evict_time,
    scenario_replay_amplification, CovertChannel, LeakResult, Scenario, ScenarioKind,
};
use crate::error::{Result, SimError};
use crate::isa::{parse_gadget, LayoutConfig};
use crate::memhier::{
    estimate_llc_size, sweep_latency, CacheConfig, CacheState, LevelConfig, Replacement,
    TimerModel, TimerState,
};
use crate::mld::{builtin_predicates, MldEngine, MldReport};
use crate::pipeline::{execute, CoreConfig, Mitigation, ReplayPolicy, Strategy, TraceEvent};
use crate::trace::{
    write_matrix_csv, write_matrix_report, write_mld_report, write_sweep_csv, write_trace,
};

/// Deterministic simulator of speculative vectorization with selective
/// replay, with a leakage-assertion engine and an attack-scenario suite.
#[derive(Parser)]
#[command(name = "srv-sim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its report and artifacts.
    Run(RunArgs),
    /// Run the scenario x mitigation grid and write the matrix CSV.
    Matrix(MatrixArgs),
    /// Working-set latency sweep with knee detection.
    Sweep(SweepArgs),
    /// List the builtin scenarios.
    ListScenarios,
}

#[derive(Args)]
struct RunArgs {
    /// Builtin scenario name or path to a scenario .toml file.
    scenario: String,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    mitigation: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Timer jitter standard deviation override.
    #[arg(long)]
    jitter: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated artifact list: report,csv,trace,mld.
    #[arg(long, default_value = "report,csv")]
    emit: String,
}

#[derive(Args)]
struct MatrixArgs {
    /// Scenario names or .toml paths; defaults to the builtin set.
    #[arg(long)]
    scenarios: Option<String>,
    /// Mitigation subset, comma separated; defaults to all seven.
    #[arg(long)]
    mitigations: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use each scenario's full cache config instead of the fast desk-scale
    /// hierarchy.
    #[arg(long)]
    full_cache: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated ascending sizes in bytes; defaults to the 4KiB..128MiB grid.
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long, default_value_t = 1)]
    reps: u32,
    #[arg(long, default_value_t = 4096)]
    page: u64,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Last-level cache size in bytes.
    #[arg(long)]
    llc: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// A resolved run request: scenario source plus overrides and emission flags.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: String,
    pub width: Option<u32>,
    pub mitigation: Option<Mitigation>,
    pub seed: Option<u64>,
    pub jitter: Option<f64>,
    pub out_dir: PathBuf,
    pub emit_trace: bool,
    pub emit_mld: bool,
    pub emit_csv: bool,
    pub emit_report: bool,
}

fn default_seed() -> u64 {
    std::env::var("SRV_SIM_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(1)
}

pub fn builtin_scenarios() -> Vec<(&'static str, &'static str)> {
    vec![
        ("srv_leak", "speculative-vectorization leak, selective replay"),
        ("srv_leak_fallback", "same gadget under a fall-back-to-scalar translator"),
        ("spectre_stl", "store-to-load bypass baseline"),
        ("spectre_v1", "bounds-check branch variant"),
        ("evict_time", "region-end serialization timing probe"),
        ("replay_amplification", "chained replays against a noisy channel"),
    ]
}

fn builtin_scenario(name: &str) -> Option<Scenario> {
    match name {
        "srv_leak" => Some(fixtures::srv_leak_scenario()),
        "srv_leak_fallback" => Some(fixtures::srv_fallback_scenario()),
        "spectre_stl" => Some(fixtures::spectre_stl_scenario()),
        "spectre_v1" => Some(fixtures::spectre_v1_scenario()),
        "evict_time" => Some(fixtures::evict_time_scenario()),
        "replay_amplification" => Some(fixtures::amplification_scenario()),
        _ => None,
    }
}

// Scenario file schema (TOML, key = value sections).

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    scenario: ScenarioSection,
    #[serde(default)]
    core: CoreSection,
    #[serde(default)]
    cache: Option<CacheSection>,
    #[serde(default)]
    timer: TimerSection,
    #[serde(default)]
    channel: ChannelSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioSection {
    name: Option<String>,
    kind: String,
    /// Path to the .gadget file, relative to this config.
    gadget: String,
    secret: Option<String>,
    training_iterations: Option<u32>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CoreSection {
    width: Option<u32>,
    strategy: Option<String>,
    mitigation: Option<String>,
    replay_policy: Option<String>,
    replay_limit: Option<u32>,
    mdp_threshold: Option<u32>,
    flexvec_check_overhead: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CacheSection {
    line: Option<u64>,
    memory_latency: Option<u64>,
    levels: Vec<LevelSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelSection {
    size: u64,
    assoc: u32,
    hit_latency: u64,
    replacement: Option<String>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TimerSection {
    granularity: Option<u64>,
    jitter_stddev: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ChannelSection {
    encode_array: Option<String>,
    stride: Option<u64>,
    threshold: Option<u64>,
}

fn parse_strategy(s: &str) -> Result<Strategy> {
    match s {
        "scalar" => Ok(Strategy::ScalarInOrder),
        "scalar_ooo" => Ok(Strategy::ScalarOoo),
        "srv" => Ok(Strategy::Srv),
        "flexvec" => Ok(Strategy::FlexVec),
        "scalar_fallback" => Ok(Strategy::ScalarFallback),
        "vfenced_srv" => Ok(Strategy::VfencedSrv),
        other => Err(SimError::Config(format!(
            "unknown strategy '{other}', valid: scalar, scalar_ooo, srv, flexvec, scalar_fallback, vfenced_srv"
        ))),
    }
}

fn parse_replacement(s: &str) -> Result<Replacement> {
    match s {
        "lru" => Ok(Replacement::Lru),
        "random" => Ok(Replacement::Random),
        other => Err(SimError::Config(format!("unknown replacement '{other}'"))),
    }
}

/// Loads a scenario from a structured-text config file.
pub fn load_scenario_file(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path)?;
    let file: ScenarioFile =
        toml::from_str(&text).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let gadget_path = dir.join(&file.scenario.gadget);
    let gadget_text = fs::read_to_string(&gadget_path)?;
    let program = parse_gadget(&gadget_text)?;

    let kind = ScenarioKind::parse(&file.scenario.kind)?;
    let mut core = CoreConfig::default();
    if let Some(w) = file.core.width {
        core.width = w;
    }
    if let Some(s) = &file.core.strategy {
        core.strategy = parse_strategy(s)?;
    }
    if let Some(m) = &file.core.mitigation {
        core.mitigation = Mitigation::parse(m)?;
    }
    if let Some(p) = &file.core.replay_policy {
        core.replay_policy = match p.as_str() {
            "erroneous_only" => ReplayPolicy::ErroneousOnly,
            "erroneous_and_later" => ReplayPolicy::ErroneousAndLater,
            other => return Err(SimError::Config(format!("unknown replay policy '{other}'"))),
        };
    }
    if file.core.replay_limit.is_some() {
        core.replay_limit = file.core.replay_limit;
    }
    if let Some(t) = file.core.mdp_threshold {
        core.mdp_threshold = t;
    }
    if let Some(o) = file.core.flexvec_check_overhead {
        core.flexvec_check_overhead = o;
    }

    let cache = match file.cache {
        None => CacheConfig::default(),
        Some(cs) => {
            let defaults = CacheConfig::default();
            CacheConfig {
                line: cs.line.unwrap_or(defaults.line),
                memory_latency: cs.memory_latency.unwrap_or(defaults.memory_latency),
                levels: cs
                    .levels
                    .iter()
                    .map(|l| {
                        Ok(LevelConfig {
                            size: l.size,
                            assoc: l.assoc,
                            hit_latency: l.hit_latency,
                            replacement: match &l.replacement {
                                Some(r) => parse_replacement(r)?,
                                None => Replacement::Lru,
                            },
                        })
                    })
                    .collect::<Result<_>>()?,
                seed: 0,
            }
        }
    };

    let timer = TimerModel {
        granularity: file.timer.granularity.unwrap_or(1),
        jitter_stddev: file.timer.jitter_stddev.unwrap_or(0.0),
        seed: 0,
    };
    let channel = CovertChannel {
        encode_array: file.channel.encode_array.unwrap_or_else(|| "encode".into()),
        stride: file.channel.stride.unwrap_or(64),
        threshold: file.channel.threshold.unwrap_or(101),
    };

    let scenario = Scenario {
        name: file.scenario.name.unwrap_or_else(|| file.scenario.kind.clone()),
        kind,
        program,
        training_iterations: file.scenario.training_iterations.unwrap_or(62),
        secret: file
            .scenario
            .secret
            .map(|s| s.into_bytes())
            .unwrap_or_else(|| attacks::POC_SECRET.to_vec()),
        channel,
        core,
        cache,
        timer,
        layout: LayoutConfig::default(),
        seed: file.scenario.seed.unwrap_or_else(default_seed),
    };
    scenario.validate()?;
    Ok(scenario)
}

fn resolve_scenario(name_or_path: &str) -> Result<Scenario> {
    if let Some(sc) = builtin_scenario(name_or_path) {
        return Ok(sc);
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        return load_scenario_file(path);
    }
    let names: Vec<&str> = builtin_scenarios().iter().map(|(n, _)| *n).collect();
    Err(SimError::Config(format!(
        "no scenario '{name_or_path}': not a file, and builtins are {}",
        names.join(", ")
    )))
}

fn apply_overrides(sc: &mut Scenario, cfg: &RunConfig) {
    if let Some(w) = cfg.width {
        sc.core.width = w;
    }
    if let Some(m) = cfg.mitigation {
        sc.core.mitigation = m;
    }
    if let Some(seed) = cfg.seed {
        sc.seed = seed;
    }
    if let Some(j) = cfg.jitter {
        sc.timer.jitter_stddev = j;
    }
}

/// One representative armed execution with the builtin predicates attached,
/// for trace and report emission.
fn armed_trace(sc: &Scenario) -> Result<(Vec<TraceEvent>, MldReport)> {
    let mut env = sc.build_env(0)?;
    match sc.kind {
        ScenarioKind::SrvLeak | ScenarioKind::EvictTime | ScenarioKind::ReplayAmplification => {
            let malicious = sc.malicious_index(0)?;
            let a = env.memory.id("a").expect("fixture array");
            if let Some(x) = env.memory.id("x") {
                env.memory.poke(x, 0, 1).ok();
                env.memory.poke(x, 1, 0).ok();
            }
            env.memory.poke(a, 1, malicious).ok();
        }
        ScenarioKind::SpectreStl => {
            let malicious = sc.malicious_index(0)?;
            let a = env.memory.id("a").expect("fixture array");
            env.memory.poke(a, sc.program.trip_count as i64, malicious).ok();
        }
        ScenarioKind::SpectreV1 => {}
    }
    let mut engine = MldEngine::new(builtin_predicates());
    let result = execute(&sc.program, &mut env, &sc.core, &mut engine)?;
    Ok((result.trace, engine.into_report()))
}

fn write_leak_csv(path: &Path, sc: &Scenario, leak: &LeakResult) -> Result<()> {
    let mut out = String::from("leak_v1\nbyte_index,expected,recovered,correct\n");
    for (i, &b) in leak.recovered.iter().enumerate() {
        out.push_str(&format!(
            "{i},{:#04x},{:#04x},{}\n",
            sc.secret[i], b, leak.per_byte_correct[i] as u8
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

fn leak_report_text(sc: &Scenario, leak: &LeakResult) -> String {
    let mut s = String::from("report_v1\n");
    s.push_str(&format!("scenario: {}\n", sc.name));
    s.push_str(&format!("kind: {}\n", sc.kind.name()));
    s.push_str(&format!("strategy: {}\n", sc.core.strategy.name()));
    s.push_str(&format!("mitigation: {}\n", sc.core.mitigation.name()));
    s.push_str(&format!("width: {}\n", sc.core.width));
    s.push_str(&format!("seed: {}\n", sc.seed));
    s.push_str(&format!("secret bytes: {}\n", sc.secret.len()));
    s.push_str(&format!("accuracy: {:.4}\n", leak.accuracy));
    s.push_str(&format!("recovered: {}\n", leak.recovered_string()));
    s.push_str(&format!("ambiguous decodes: {}\n", leak.ambiguous));
    s.push_str(&format!("no-symbol decodes: {}\n", leak.no_symbol));
    s.push_str(&format!("squashes: {}\n", leak.squashes));
    let replayed: u32 = leak.replay_counts.iter().sum();
    s.push_str(&format!("total replays: {replayed}\n"));
    s
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let mitigation = args.mitigation.as_deref().map(Mitigation::parse).transpose()?;
    let cfg = RunConfig {
        scenario: args.scenario.clone(),
        width: args.width,
        mitigation,
        seed: args.seed.or_else(|| std::env::var("SRV_SIM_SEED").ok().and_then(|s| s.parse().ok())),
        jitter: args.jitter,
        out_dir: args.out.clone(),
        emit_trace: args.emit.split(',').any(|e| e == "trace"),
        emit_mld: args.emit.split(',').any(|e| e == "mld"),
        emit_csv: args.emit.split(',').any(|e| e == "csv"),
        emit_report: args.emit.split(',').any(|e| e == "report"),
    };
    let mut sc = resolve_scenario(&cfg.scenario)?;
    apply_overrides(&mut sc, &cfg);
    sc.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;

    match sc.kind {
        ScenarioKind::SrvLeak | ScenarioKind::SpectreStl | ScenarioKind::SpectreV1 => {
            let leak = run_leak_scenario(&sc)?;
            println!(
                "{}: accuracy {:.4} over {} bytes ({})",
                sc.name,
                leak.accuracy,
                sc.secret.len(),
                leak.recovered_string()
            );
            if cfg.emit_report {
                fs::write(cfg.out_dir.join("report.txt"), leak_report_text(&sc, &leak))?;
            }
            if cfg.emit_csv {
                write_leak_csv(&cfg.out_dir.join("results.csv"), &sc, &leak)?;
            }
        }
        ScenarioKind::EvictTime => {
            let report = scenario_evict_time(&sc)?;
            println!(
                "{}: dependent {} ticks, independent {} ticks, post-region variance {:.3}",
                sc.name,
                report.dependent_path_ticks,
                report.independent_path_ticks,
                report.post_region_variance
            );
            if cfg.emit_report {
                let text = format!(
                    "report_v1\nscenario: {}\ndependent_path_ticks: {}\nindependent_path_ticks: {}\npost_region_variance: {:.6}\n",
                    sc.name,
                    report.dependent_path_ticks,
                    report.independent_path_ticks,
                    report.post_region_variance
                );
                fs::write(cfg.out_dir.join("report.txt"), text)?;
            }
        }
        ScenarioKind::ReplayAmplification => {
            let targets: Vec<u32> = (0..sc.core.width).collect();
            let report = scenario_replay_amplification(&sc, 0.5, &targets, 10_000)?;
            println!("{}: {} curve points at p=0.5", sc.name, report.points.len());
            let mut csv = String::from("amplify_v1\nreplays,observations,analytic,empirical\n");
            for pt in &report.points {
                csv.push_str(&format!(
                    "{},{},{:.4},{:.4}\n",
                    pt.replays, pt.observations, pt.analytic, pt.empirical
                ));
            }
            if cfg.emit_csv {
                fs::write(cfg.out_dir.join("results.csv"), csv)?;
            }
            if cfg.emit_report {
                let mut text = format!("report_v1\nscenario: {}\n", sc.name);
                for pt in &report.points {
                    text.push_str(&format!(
                        "replays {:2}: detection {:.4} (analytic {:.4})\n",
                        pt.replays, pt.empirical, pt.analytic
                    ));
                }
                fs::write(cfg.out_dir.join("report.txt"), text)?;
            }
        }
    }

    if cfg.emit_trace || cfg.emit_mld {
        let (events, mld) = armed_trace(&sc)?;
        if cfg.emit_trace {
            let mut buf = Vec::new();
            write_trace(&mut buf, &events)?;
            fs::write(cfg.out_dir.join("trace.log"), buf)?;
        }
        if cfg.emit_mld {
            let mut buf = Vec::new();
            write_mld_report(&mut buf, &mld)?;
            fs::write(cfg.out_dir.join("mld.log"), buf)?;
        }
    }
    Ok(())
}

/// Small two-level hierarchy so matrix cells stay cheap to evict.
fn desk_cache() -> CacheConfig {
    CacheConfig {
        line: 64,
        levels: vec![
            LevelConfig { size: 16 << 10, assoc: 8, hit_latency: 40, replacement: Replacement::Lru },
            LevelConfig {
                size: 256 << 10,
                assoc: 16,
                hit_latency: 150,
                replacement: Replacement::Lru,
            },
        ],
        memory_latency: 400,
        seed: 0,
    }
}

fn cmd_matrix(args: &MatrixArgs) -> Result<()> {
    let mut scenarios = match &args.scenarios {
        None => fixtures::default_matrix_scenarios(),
        Some(list) => list.split(',').map(resolve_scenario).collect::<Result<Vec<_>>>()?,
    };
    for sc in &mut scenarios {
        if let Some(seed) = args.seed {
            sc.seed = seed;
        }
        if !args.full_cache {
            sc.cache = desk_cache();
        }
    }
    let mitigations: Vec<Mitigation> = match &args.mitigations {
        None => Mitigation::ALL.to_vec(),
        Some(list) => list.split(',').map(Mitigation::parse).collect::<Result<_>>()?,
    };
    let report = run_matrix(&scenarios, &mitigations)?;
    fs::create_dir_all(&args.out)?;
    let names: Vec<&str> = report.mitigations.iter().map(|m| m.name()).collect();
    let mut csv = Vec::new();
    write_matrix_csv(&mut csv, &names, &report.rows)?;
    fs::write(args.out.join("matrix.csv"), &csv)?;
    let mut txt = Vec::new();
    write_matrix_report(&mut txt, &names, &report.rows, 3.0 / 256.0)?;
    fs::write(args.out.join("matrix_report.txt"), &txt)?;
    print!("{}", String::from_utf8_lossy(&txt));
    Ok(())
}

/// The sweep grid used to reverse-engineer the last-level capacity: 4 KiB up
/// to 128 MiB.
pub fn default_sweep_sizes() -> Vec<u64> {
    [
        4u64, 8, 16, 32, 64, 128, 256, 512, 1024, 2048, 3072, 4096, 6144, 8192, 12288, 16384,
        24576, 32768, 49152, 57344, 65536, 98304, 131072,
    ]
    .iter()
    .map(|kb| kb * 1024)
    .collect()
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let sizes: Vec<u64> = match &args.sizes {
        None => default_sweep_sizes(),
        Some(list) => list
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| SimError::Config(format!("bad size '{s}'"))))
            .collect::<Result<_>>()?,
    };
    if sizes.is_empty() {
        return Err(SimError::Config("sweep needs at least one size".into()));
    }
    let mut cache_cfg = CacheConfig::default();
    if let Some(llc) = args.llc {
        cache_cfg.levels.last_mut().unwrap().size = llc;
    }
    cache_cfg.seed = args.seed.unwrap_or_else(default_seed);
    cache_cfg.validate()?;
    let timer = TimerModel {
        granularity: 1,
        jitter_stddev: args.jitter.unwrap_or(0.0),
        seed: args.seed.unwrap_or_else(default_seed),
    };
    let mut cache = CacheState::new(cache_cfg);
    let mut timer = TimerState::new(timer)?;
    let table = sweep_latency(&mut cache, &mut timer, &sizes, args.reps, args.page, 1 << 30)?;
    fs::create_dir_all(&args.out)?;
    let mut csv = Vec::new();
    write_sweep_csv(&mut csv, &table)?;
    fs::write(args.out.join("sweep.csv"), &csv)?;
    match estimate_llc_size(&table) {
        Ok(est) => println!("estimated LLC size: {est} bytes ({} MiB)", est >> 20),
        Err(SimError::NoKnee) => println!("no knee detected in the latency table"),
        Err(e) => return Err(e),
    }
    Ok(())
}

fn cmd_list() -> Result<()> {
    for (name, desc) in builtin_scenarios() {
        println!("{name:24} {desc}");
    }
    Ok(())
}

/// Entry point for the `srv-sim` binary. Returns the process exit code:
/// 0 on completion, 2 on configuration or validation failure.
pub fn run_cli() -> i32 {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Matrix(args) => cmd_matrix(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::ListScenarios => cmd_list(),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
