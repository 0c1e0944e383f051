//! Property tests over the structural invariants.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use srv_sim::gen::random_program;
use srv_sim::isa::{parse_gadget, pretty_print, AccessKind};
use srv_sim::lsu::{analyze_region, is_older, mark_replay, LsqEntry};
use srv_sim::memhier::{classify, observe, HitClass, TimerModel, TimerState};
use srv_sim::vectorize::{flexvec_partition, vectorize_loop, VectorStrategy};

/// Speculation must never change architectural results, under any mitigation
/// and any strategy.
#[test]
fn mitigations_preserve_final_memory() {
    use srv_sim::isa::LayoutConfig;
    use srv_sim::memhier::{CacheConfig, LevelConfig, Replacement, TimerModel};
    use srv_sim::pipeline::{
        execute, run_scalar, CoreConfig, MachineEnv, Mitigation, NoSink, Strategy,
    };
    let cache = CacheConfig {
        line: 64,
        levels: vec![LevelConfig {
            size: 1 << 14,
            assoc: 4,
            hit_latency: 40,
            replacement: Replacement::Lru,
        }],
        memory_latency: 400,
        seed: 0,
    };
    let env_for = |program: &srv_sim::isa::GadgetProgram| {
        MachineEnv::build(program, &LayoutConfig::default(), cache.clone(), TimerModel::default())
            .unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0xAB);
    for _ in 0..40 {
        let program = random_program(&mut rng, 16);
        let oracle = run_scalar(&program, &mut env_for(&program), &CoreConfig::default(), &mut NoSink)
            .unwrap()
            .final_memory;
        for strategy in [Strategy::Srv, Strategy::ScalarOoo, Strategy::FlexVec] {
            for mitigation in Mitigation::ALL {
                let cfg = CoreConfig { strategy, mitigation, ..CoreConfig::default() };
                let got = execute(&program, &mut env_for(&program), &cfg, &mut NoSink).unwrap();
                assert_eq!(
                    got.final_memory,
                    oracle,
                    "{} under {}",
                    strategy.name(),
                    mitigation.name()
                );
            }
        }
    }
}

proptest! {
    /// Parsing the canonical rendering reproduces the program.
    #[test]
    fn parse_pretty_print_identity(seed in any::<u64>(), trip in 2u64..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let program = random_program(&mut rng, trip);
        let printed = pretty_print(&program);
        prop_assert_eq!(parse_gadget(&printed).unwrap(), program);
    }

    /// Lane groups always form a consecutive, order-preserving partition.
    #[test]
    fn flexvec_partition_is_a_partition(
        width_pick in 0usize..5,
        raw in proptest::collection::vec((0u32..32, 0u32..32), 0..24),
    ) {
        let width = [2u32, 4, 8, 16, 32][width_pick];
        let deps: Vec<(u32, u32)> = raw
            .into_iter()
            .map(|(w, r)| (w % width, r % width))
            .filter(|&(w, r)| w < r)
            .collect();
        let groups = flexvec_partition(&deps, width);
        let mut next = 0u32;
        for g in &groups {
            prop_assert_eq!(*g.start(), next);
            prop_assert!(g.end() >= g.start());
            next = g.end() + 1;
        }
        prop_assert_eq!(next, width);
    }

    /// Active lanes over all chunks sum to the trip count, for every strategy.
    #[test]
    fn chunk_lanes_cover_trip_count(
        seed in any::<u64>(),
        trip in 2u64..70,
        width_pick in 0usize..3,
        strategy_pick in 0usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let program = random_program(&mut rng, trip);
        let width = [4u32, 8, 16][width_pick];
        let strategy = [
            VectorStrategy::Srv,
            VectorStrategy::FlexVec,
            VectorStrategy::ScalarFallback,
            VectorStrategy::Srv,
        ][strategy_pick];
        let vp = vectorize_loop(&program, width, strategy).unwrap();
        prop_assert_eq!(vp.active_lane_total(), trip);
        let vf = if strategy == VectorStrategy::Srv {
            srv_sim::vectorize::vfence_transform(&vp).unwrap()
        } else {
            vp
        };
        prop_assert_eq!(vf.active_lane_total(), trip);
    }

    /// The two-dimensional age relation is a strict total order.
    #[test]
    fn is_older_is_a_strict_total_order(
        a in (0u32..8, 0u32..8),
        b in (0u32..8, 0u32..8),
        c in (0u32..8, 0u32..8),
    ) {
        prop_assert!(!is_older(a, a));
        if a != b {
            prop_assert!(is_older(a, b) != is_older(b, a));
        }
        if is_older(a, b) && is_older(b, c) {
            prop_assert!(is_older(a, c));
        }
    }

    /// Horizontal masks are always contained in vertical masks, and lane 0
    /// never ends up in the replay register.
    #[test]
    fn hob_subset_and_lane_zero_clean(
        raw in proptest::collection::vec((0u32..6, 0u32..8, any::<bool>(), 0u64..8, 0usize..3), 2..30),
    ) {
        let sizes = [1u8, 4, 8];
        let mut region: Vec<LsqEntry> = raw
            .into_iter()
            .map(|(seq, lane, is_load, slot, size_pick)| {
                let size = sizes[size_pick];
                let addr = 0x9000 + slot * size as u64;
                let kind = if is_load { AccessKind::Load } else { AccessKind::Store };
                LsqEntry::new(seq, lane, kind, addr, size)
            })
            .collect();
        region.sort_by_key(|e| (e.instr_seq, e.lane));
        region.dedup_by_key(|e| (e.instr_seq, e.lane));
        analyze_region(&mut region);
        for e in &region {
            prop_assert!(e.vob.contains(e.hob));
        }
        prop_assert!(!mark_replay(&region).contains(0));
    }

    /// Quantization floors and never goes below zero.
    #[test]
    fn observe_respects_granularity(latency in 0u64..10_000, granularity in 1u64..600) {
        let mut t = TimerState::new(TimerModel { granularity, jitter_stddev: 0.0, seed: 0 })
            .unwrap();
        let got = observe(latency, &mut t);
        prop_assert_eq!(got, latency / granularity * granularity);
        prop_assert!(got <= latency);
    }

    /// The classifier boundary is strict.
    #[test]
    fn classify_boundary(observed in 0u64..1000, threshold in 1u64..1000) {
        let c = classify(observed, threshold);
        prop_assert_eq!(c == HitClass::Hit, observed < threshold);
    }
}
