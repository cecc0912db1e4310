//! Property tests across modules, each against an oracle written here.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weightfix::bgp_prefs::MandatedPreferences;
use weightfix::netmodel::{random_demands, NetworkInstance, NodeId};
use weightfix::paths::RoutePath;
use weightfix::pspp::{build_path_digraph, is_safe, validate_witness, weight_safety, Safety};
use weightfix::repair::{build_system, solve_min_change, total_cost, verify_solution, RepairConfig, Stage};
use weightfix::scenario::{inject_med_conflicts, planted_preferences, random_connected, two_prefix_med};
use weightfix::search::{search, SearchConfig};
use weightfix::sim::{simulate, weights_to_pspp, Schedule};
use weightfix::te::{best_of, solve_flow, JointConfig, JointContext, TeCostModel};

fn dijkstra(inst: &NetworkInstance, src: NodeId, w: &[u32]) -> Vec<u64> {
    let mut dist = vec![u64::MAX; inst.node_count()];
    let mut heap = BinaryHeap::from([Reverse((0u64, src))]);
    dist[src] = 0;
    while let Some(Reverse((d, v))) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &(u, l) in inst.neighbors(v) {
            if d + (w[l] as u64) < dist[u] {
                dist[u] = d + w[l] as u64;
                heap.push(Reverse((dist[u], u)));
            }
        }
    }
    dist
}

fn path_weight(inst: &NetworkInstance, p: &RoutePath, w: &[u32]) -> u64 {
    p.nodes().windows(2).map(|e| w[inst.link_between(e[0], e[1]).unwrap()] as u64).sum()
}

/// A small instance with MED-derived preferences that its own weights may
/// or may not satisfy.
fn med_instance(seed: u64) -> (NetworkInstance, MandatedPreferences) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..=9usize);
    let inst = random_connected(n, rng.random_range(1..=n), 10, seed);
    let (_, prefs) = inject_med_conflicts(&inst, 1 + (seed as usize % 2), seed).unwrap();
    (inst, prefs)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn flow_routing_cost_matches_dijkstra(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=15usize);
        let inst = random_connected(n, rng.random_range(0..=n), rng.random_range(1..=8u32), seed);
        let demands = random_demands(&inst, 0.5, 20.0, seed);
        let w = inst.known_weights().unwrap();
        let flow = solve_flow(&inst, &demands, &w).unwrap();
        let want: f64 = demands.iter().map(|(s, d, x)| x * dijkstra(&inst, s, &w)[d] as f64).sum();
        prop_assert!((flow.routing_cost - want).abs() <= 1e-9 * want.max(1.0));
        prop_assert!(flow.conservation_error(&inst, &demands) <= 1e-9 * demands.total().max(1.0));
    }

    #[test]
    fn exact_repairs_verify_and_beat_sampled_feasible_vectors(seed in 0u64..10_000) {
        let (inst, prefs) = med_instance(seed);
        let sys = build_system(&inst, &prefs).unwrap();
        let mut cfg = RepairConfig::for_instance(&inst);
        cfg.min_weight = 1;
        let initial = inst.initial_weights();
        let sol = solve_min_change(&sys, &initial, &cfg).unwrap();
        prop_assert!(sol.proven_optimal);
        prop_assert!(verify_solution(&inst, &prefs, &sol.weights).all_ok());
        prop_assert!(weight_safety(&inst, &prefs, &sol.weights).unwrap().iter().all(|(_, s)| s.is_safe()));
        prop_assert_eq!(sol.objective, total_cost(&initial, &sol.weights, &cfg));
        // Every mandated pair, checked with weights summed here.
        for (_, better, worse) in prefs.iter_pairs() {
            prop_assert!(path_weight(&inst, better, &sol.weights) < path_weight(&inst, worse, &sol.weights));
        }
        // No sampled feasible vector is cheaper.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        for _ in 0..300 {
            let w: Vec<u32> = (0..inst.link_count()).map(|_| rng.random_range(1..=inst.w_max())).collect();
            if sys.verify(&w).all_ok() {
                prop_assert!(total_cost(&initial, &w, &cfg) >= sol.objective);
            }
        }
    }

    #[test]
    fn satisfied_preferences_need_no_change(seed in 0u64..10_000) {
        let inst = random_connected(7, 4, 12, seed);
        // Preferences planted and then made true by construction: keep only
        // pairs the shipped weights already order strictly.
        let planted = planted_preferences(&inst, 6, 4, seed);
        let w = inst.known_weights().unwrap();
        let mut prefs = MandatedPreferences::new();
        for (name, better, worse) in planted.iter_pairs() {
            let (b, q) = (path_weight(&inst, better, &w), path_weight(&inst, worse, &w));
            if b < q && q - b <= inst.w_max() as u64 {
                prefs.add_pair(name, better.clone(), worse.clone()).unwrap();
            }
        }
        let prefs = prefs.close_suffixes();
        let sys = build_system(&inst, &prefs).unwrap();
        let sol = solve_min_change(&sys, &inst.initial_weights(), &RepairConfig::for_instance(&inst)).unwrap();
        prop_assert_eq!(sol.objective, 0);
        prop_assert!(sol.changes.is_empty());
    }

    #[test]
    fn safe_ranked_instances_converge_under_random_schedules(seed in 0u64..10_000) {
        let sc = two_prefix_med();
        let prefs = sc.preferences().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<u32> = (0..sc.inst.link_count()).map(|_| rng.random_range(1..=sc.inst.w_max())).collect();
        for name in prefs.prefixes.keys() {
            let ranked = weights_to_pspp(&sc.inst, &prefs, &w, name, sc.hop_bound).unwrap();
            let dg = build_path_digraph(&ranked.to_pspp(&sc.inst).unwrap());
            if let Safety::Safe { ranks } = is_safe(&dg) {
                prop_assert!(validate_witness(&dg, &ranks));
                for k in 0..10 {
                    let sched = Schedule::RandomPermutations { seed: seed * 16 + k };
                    prop_assert!(simulate(&ranked, &sched, 100_000).is_converged());
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn joint_pool_verifies_and_selection_is_no_worse_than_exact(seed in 0u64..10_000) {
        let (inst, prefs) = med_instance(seed);
        let demands = random_demands(&inst, 0.4, 5.0, seed);
        let w_e = inst.known_weights().unwrap();
        let jcfg = JointConfig { gamma: 5.0, ..JointConfig::default() };
        let ctx = JointContext::new(&inst, &demands, &prefs, &w_e, &RepairConfig::for_instance(&inst), &jcfg).unwrap();
        let pool = ctx.candidates(None).unwrap();
        prop_assert!(!pool.is_empty());
        for c in &pool {
            prop_assert!(verify_solution(&inst, &prefs, &c.weights).all_ok());
            prop_assert!(c.weights.iter().all(|&x| (1..=inst.w_max()).contains(&x)));
        }
        let best = best_of(&pool).unwrap();
        if let Some(exact) = pool.iter().find(|c| c.stage == Stage::Exact) {
            prop_assert!(best.objective <= exact.objective);
        }
        let sol = ctx.into_solution(best).unwrap();
        prop_assert!(sol.realized.all_ok());
    }

    #[test]
    fn search_incumbent_never_gets_worse(seed in 0u64..10_000) {
        let (inst, prefs) = med_instance(seed);
        let demands = random_demands(&inst, 0.5, 8.0, seed);
        let sys = build_system(&inst, &prefs).unwrap();
        let mut cfg = RepairConfig::for_instance(&inst);
        cfg.min_weight = 1;
        let start = solve_min_change(&sys, &inst.initial_weights(), &cfg).unwrap().weights;
        let scfg = SearchConfig { gamma: 0.0, max_iterations: 25, seed, record_progress: true, ..SearchConfig::default() };
        let out = search(&inst, &demands, &prefs, &start, &scfg, &TeCostModel::default()).unwrap();
        prop_assert!(out.progress.windows(2).all(|p| p[1].cost <= p[0].cost + 1e-9));
        prop_assert!(out.solution.realized.all_ok());
        prop_assert!(verify_solution(&inst, &prefs, &out.solution.weights).all_ok());
    }
}
