//! Bounds-check variant: train the branch taken, then hand it an
//! out-of-bounds input. A cold predictor never opens the window.

use srv_sim::attacks::{fixtures, scenario_spectre_v1};

fn main() {
    for k in [0u32, 1, 3, 8] {
        let mut sc = fixtures::spectre_v1_scenario();
        sc.secret.truncate(8);
        sc.training_iterations = k;
        let leak = scenario_spectre_v1(&sc).expect("scenario runs");
        println!(
            "k = {k}: accuracy {:.4}, no-symbol decodes {}, recovered: {}",
            leak.accuracy,
            leak.no_symbol,
            leak.recovered_string()
        );
    }
}
