//! Store-to-load baseline: the dependence predictor lets a load run ahead of
//! an aliasing store, the stale value walks the secret into the cache, and a
//! memory fence is enough to stop it. The contrast with the vector leak is
//! the point: this variant dies under the classic mitigations.

use srv_sim::attacks::{fixtures, scenario_spectre_stl};
use srv_sim::pipeline::Mitigation;

fn main() {
    for mitigation in [Mitigation::None, Mitigation::MemFence, Mitigation::InOrder] {
        let mut sc = fixtures::spectre_stl_scenario();
        sc.secret.truncate(16);
        sc.core.mitigation = mitigation;
        let leak = scenario_spectre_stl(&sc).expect("scenario runs");
        println!(
            "mitigation {:24} accuracy {:.4}  squashes {:3}  recovered: {}",
            mitigation.name(),
            leak.accuracy,
            leak.squashes,
            leak.recovered_string()
        );
    }
}
