//! Leakage descriptors in action: run the worked replay example with the
//! three builtin predicates attached and print every firing. Attaching them
//! changes nothing about the run itself.

use srv_sim::isa::{parse_gadget, LayoutConfig};
use srv_sim::memhier::{CacheConfig, TimerModel};
use srv_sim::mld::{builtin_predicates, run_with_mlds};
use srv_sim::pipeline::{execute, CoreConfig, MachineEnv, NoSink, Strategy};
use srv_sim::trace::write_mld_report;

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/replay_example.gadget");
    let program = parse_gadget(&std::fs::read_to_string(path).unwrap()).unwrap();
    let env = || {
        MachineEnv::build(
            &program,
            &LayoutConfig::default(),
            CacheConfig::default(),
            TimerModel::default(),
        )
        .unwrap()
    };
    let cfg = CoreConfig { strategy: Strategy::Srv, ..CoreConfig::default() };

    let plain = execute(&program, &mut env(), &cfg, &mut NoSink).unwrap();
    let (observed, report) =
        run_with_mlds(&program, &mut env(), &cfg, builtin_predicates()).unwrap();
    assert_eq!(plain, observed, "descriptors must not perturb the run");

    let srv_firings = report.count_for("speculative_vectorization");
    println!(
        "{} firings total; {} from the vectorization descriptor (one per marked lane)\n",
        report.firings.len(),
        srv_firings
    );
    let mut out = Vec::new();
    write_mld_report(&mut out, &report).unwrap();
    let text = String::from_utf8(out).unwrap();
    for line in text.lines().take(12) {
        println!("{line}");
    }
    println!("...");
    for line in text.lines().filter(|l| l.contains("speculative_vectorization")) {
        println!("{line}");
    }
}
