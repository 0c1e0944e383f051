//! Reverse-engineering the last-level capacity: sweep working sets from
//! 4 KiB to 128 MiB, reload one address per page, and find the latency knee.

use srv_sim::cli::default_sweep_sizes;
use srv_sim::memhier::{
    estimate_llc_size, sweep_latency, CacheConfig, CacheState, TimerModel, TimerState,
};

fn main() {
    let cfg = CacheConfig::default();
    println!("configured LLC: {} MiB (to be recovered from timing alone)\n", cfg.llc_size() >> 20);
    let mut cache = CacheState::new(cfg);
    let mut timer =
        TimerState::new(TimerModel { granularity: 1, jitter_stddev: 10.0, seed: 7 }).unwrap();
    let sizes = default_sweep_sizes();
    let table = sweep_latency(&mut cache, &mut timer, &sizes, 1, 4096, 1 << 30).unwrap();
    println!("{:>12}  {:>10}  {:>8}", "size", "mean", "samples");
    for row in &table.rows {
        let bar = "#".repeat((row.mean_latency / 12.0) as usize);
        println!(
            "{:>12}  {:>10.1}  {:>8}  {bar}",
            format!("{} KiB", row.array_size >> 10),
            row.mean_latency,
            row.samples
        );
    }
    match estimate_llc_size(&table) {
        Ok(est) => println!("\nestimated LLC size: {} MiB", est >> 20),
        Err(e) => println!("\nestimate failed: {e}"),
    }
}
