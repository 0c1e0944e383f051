//! The selective-replay worked example: a loop with cross-iteration
//! dependences executes all 16 lanes at once, the tracker marks the four
//! lanes that read stale data, and one replay pass repairs them.

use srv_sim::isa::{parse_gadget, LayoutConfig};
use srv_sim::memhier::{CacheConfig, TimerModel};
use srv_sim::pipeline::{execute, run_scalar, CoreConfig, MachineEnv, NoSink, Strategy};
use srv_sim::vectorize::{vectorize_loop, VectorStrategy};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/replay_example.gadget");
    let program = parse_gadget(&std::fs::read_to_string(path).unwrap()).unwrap();
    println!("a[x[z]] = a[z] + 2 with x = {{3,0,1,2,7,4,5,6,11,8,9,10,15,12,13,14}}\n");

    let env = || {
        MachineEnv::build(
            &program,
            &LayoutConfig::default(),
            CacheConfig::default(),
            TimerModel::default(),
        )
        .unwrap()
    };

    let vp = vectorize_loop(&program, 16, VectorStrategy::Srv).unwrap();
    println!("{}", vp.disassemble());

    let cfg = CoreConfig { strategy: Strategy::Srv, width: 16, ..CoreConfig::default() };
    let vector = execute(&program, &mut env(), &cfg, &mut NoSink).unwrap();
    let scalar = run_scalar(&program, &mut env(), &cfg, &mut NoSink).unwrap();

    for (chunk, passes) in vector.replay_log.iter().enumerate() {
        for (p, info) in passes.passes.iter().enumerate() {
            println!(
                "chunk {chunk} pass {p}: active {} -> taint {}",
                info.active, info.taint
            );
        }
    }
    println!("replays per chunk: {:?}", vector.replay_counts);

    let a = vector.final_memory.id("a").unwrap();
    print!("final a[] (vector): ");
    for i in 0..16 {
        print!("{} ", vector.final_memory.peek(a, i).unwrap());
    }
    println!();
    assert_eq!(vector.final_memory, scalar.final_memory);
    println!("matches the scalar oracle: yes");
}
