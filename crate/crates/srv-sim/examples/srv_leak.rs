//! The headline experiment: recover a 42-byte secret through the replayed
//! vector region, one byte per armed run, with zero timer jitter.

use srv_sim::attacks::{fixtures, scenario_srv_leak};

fn main() {
    let scenario = fixtures::srv_leak_scenario();
    println!(
        "scenario {}: width {}, {} training runs per byte, LLC {} MiB",
        scenario.name,
        scenario.core.width,
        scenario.training_iterations,
        scenario.cache.llc_size() >> 20
    );
    let leak = scenario_srv_leak(&scenario).expect("scenario runs");
    println!("recovered : {}", leak.recovered_string());
    println!("expected  : {}", String::from_utf8_lossy(&scenario.secret));
    println!("accuracy  : {:.4}", leak.accuracy);
    println!(
        "replays   : {} armed chunks replayed exactly once: {}",
        leak.replay_counts.len(),
        leak.replay_counts.iter().filter(|&&r| r == 1).count()
    );
}
