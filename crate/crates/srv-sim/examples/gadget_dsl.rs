//! Tour of the gadget DSL: parse a program, print it back, lay out memory,
//! and walk the scalar reference semantics.

use srv_sim::isa::{
    eval_scalar_iter, layout_memory, parse_gadget, pretty_print, LayoutConfig, Memory,
};

fn main() {
    let src = "\
array a 4 8
array x 4 8
init x[0] = 3
init a[0] = 10
loop 8:
  a[x[z]] = a[z] + 2
probe a[3]
";
    let program = parse_gadget(src).expect("valid program");
    println!("canonical form:\n{}", pretty_print(&program));

    let map = layout_memory(&program, &LayoutConfig::default()).expect("fits");
    for (i, a) in program.arrays.iter().enumerate() {
        println!("{:8} @ {:#x} ({} x {} bytes)", a.name, map.bases[i], a.length, a.elem_size);
    }

    let mut mem = Memory::build(&program, &map);
    println!("\niteration 0 access trace:");
    for ev in eval_scalar_iter(&program, 0, &mut mem).expect("in bounds") {
        println!("  {:?} {:#x} size {} value {}", ev.kind, ev.addr, ev.size, ev.value);
    }

    // The complete end-to-end attack program parses too: one loop statement
    // and a 256-entry reload epilogue.
    let poc_path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/full_attack.gadget");
    let poc = parse_gadget(&std::fs::read_to_string(poc_path).unwrap()).unwrap();
    println!(
        "\nfull_attack.gadget: {} arrays, {} init writes, {} statement(s), {} probes",
        poc.arrays.len(),
        poc.prologue.len(),
        poc.body.len(),
        poc.epilogue.len()
    );
}
