//! The region-end marker is a serializing instruction: nothing after the
//! region starts before it commits. That makes evict+time measurements
//! noise-free, which is itself exploitable.

use srv_sim::attacks::{fixtures, scenario_evict_time};
use srv_sim::pipeline::Strategy;

fn main() {
    let sc = fixtures::evict_time_scenario();
    let srv = scenario_evict_time(&sc).expect("scenario runs");
    println!("vector region with serializing end:");
    println!("  dependent path (region, evicted): {} ticks", srv.dependent_path_ticks);
    println!("  independent path (scalar else):   {} ticks", srv.independent_path_ticks);
    println!("  post-region variance over 100 seeds: {:.3}", srv.post_region_variance);

    let mut ooo = sc.clone();
    ooo.core.strategy = Strategy::ScalarOoo;
    let report = scenario_evict_time(&ooo).expect("scenario runs");
    println!("\nout-of-order baseline (no serializing end):");
    println!("  post-region variance over 100 seeds: {:.3}", report.post_region_variance);
}
