//! The full scenario x mitigation grid. Fences and in-order execution stop
//! the store-to-load baseline but not the vector leak; only mitigations that
//! gate speculative cache visibility (or remove the vectorization) close it.

use srv_sim::attacks::{fixtures, run_matrix};
use srv_sim::memhier::{CacheConfig, LevelConfig, Replacement};
use srv_sim::pipeline::Mitigation;
use srv_sim::trace::write_matrix_report;

fn main() {
    let mut scenarios = fixtures::default_matrix_scenarios();
    for sc in &mut scenarios {
        // Desk-scale hierarchy keeps the eviction phase quick.
        sc.cache = CacheConfig {
            line: 64,
            levels: vec![
                LevelConfig {
                    size: 16 << 10,
                    assoc: 8,
                    hit_latency: 40,
                    replacement: Replacement::Lru,
                },
                LevelConfig {
                    size: 256 << 10,
                    assoc: 16,
                    hit_latency: 150,
                    replacement: Replacement::Lru,
                },
            ],
            memory_latency: 400,
            seed: 0,
        };
        sc.secret.truncate(8);
        sc.training_iterations = 8;
    }
    let report = run_matrix(&scenarios, &Mitigation::ALL).expect("matrix runs");
    let names: Vec<&str> = report.mitigations.iter().map(|m| m.name()).collect();
    let mut out = Vec::new();
    write_matrix_report(&mut out, &names, &report.rows, 3.0 / 256.0).unwrap();
    print!("{}", String::from_utf8_lossy(&out));
}
