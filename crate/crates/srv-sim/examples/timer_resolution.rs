//! How coarse may the helper-thread timer get before hit and miss blur
//! together? Classification accuracy against granularity, 100k draws each.

use srv_sim::memhier::{classify, observe, HitClass, TimerModel, TimerState};

fn main() {
    let hit = 40u64;
    let miss = 400u64;
    let threshold = 101u64;
    println!("hit {hit} ticks, miss {miss} ticks, threshold {threshold}, jitter stddev 10\n");
    println!("{:>12}  {:>9}", "granularity", "accuracy");
    for granularity in [1u64, 5, 25, 100, 250, 500, 1000] {
        let mut timer = TimerState::new(TimerModel {
            granularity,
            jitter_stddev: 10.0,
            seed: 10,
        })
        .unwrap();
        let draws = 100_000;
        let mut correct = 0u64;
        for i in 0..draws {
            let (latency, expect) =
                if i % 2 == 0 { (hit, HitClass::Hit) } else { (miss, HitClass::Miss) };
            if classify(observe(latency, &mut timer), threshold) == expect {
                correct += 1;
            }
        }
        println!("{granularity:>12}  {:>8.2}%", 100.0 * correct as f64 / draws as f64);
    }
    println!("\npast the miss latency the counter stops resolving anything");
}
