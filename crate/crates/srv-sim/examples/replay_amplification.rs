//! Noise amplification: a chained dependence vector forces up to width-1
//! replays, and every pass re-executes the transmitting load. Detection over
//! a noisy channel follows 1 - p^passes.

use srv_sim::attacks::{fixtures, scenario_replay_amplification};

fn main() {
    let sc = fixtures::amplification_scenario();
    let p = 0.5;
    let targets: Vec<u32> = (0..16).collect();
    let report = scenario_replay_amplification(&sc, p, &targets, 10_000).expect("scenario runs");
    println!("channel miss probability p = {p}\n");
    println!("{:>8}  {:>13}  {:>9}  {:>9}", "replays", "transmissions", "analytic", "measured");
    for pt in &report.points {
        println!(
            "{:>8}  {:>13}  {:>9.4}  {:>9.4}",
            pt.replays, pt.observations, pt.analytic, pt.empirical
        );
    }
}
