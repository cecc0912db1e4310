//! The shipped MED scenarios from detection through repair.

use weightfix::pspp::{build_path_digraph, is_safe};
use weightfix::repair::{build_system, solve_min_change, RepairConfig};
use weightfix::scenario::{med_gadget, two_prefix_med, MedScenario};
use weightfix::sim::{any_oscillation, find_fair_oscillation, simulate, weights_to_pspp, Schedule};

fn safe_with(sc: &MedScenario, w: &[u32]) -> bool {
    let prefs = sc.preferences().unwrap();
    prefs.prefixes.keys().all(|name| {
        let ranked = weights_to_pspp(&sc.inst, &prefs, w, name, sc.hop_bound).unwrap();
        is_safe(&build_path_digraph(&ranked.to_pspp(&sc.inst).unwrap())).is_safe()
    })
}

#[test]
fn gadget_oscillates_until_repaired() {
    let sc = med_gadget();
    let prefs = sc.preferences().unwrap();
    let w = sc.inst.known_weights().unwrap();
    assert!(!safe_with(&sc, &w));
    let ranked = weights_to_pspp(&sc.inst, &prefs, &w, "p", sc.hop_bound).unwrap();
    let lasso = find_fair_oscillation(&ranked, 100_000).unwrap().expect("a fair oscillation");
    assert!(simulate(&ranked, &lasso, 10_000).is_oscillating());

    let sys = build_system(&sc.inst, &prefs).unwrap();
    let mut cfg = RepairConfig::for_instance(&sc.inst);
    cfg.min_weight = 1;
    let sol = solve_min_change(&sys, &sc.inst.initial_weights(), &cfg).unwrap();
    assert!(!sol.changes.is_empty());
    assert!(safe_with(&sc, &sol.weights));
    let fixed = weights_to_pspp(&sc.inst, &prefs, &sol.weights, "p", sc.hop_bound).unwrap();
    assert!(!any_oscillation(&fixed, 200, 1));
    assert_eq!(find_fair_oscillation(&fixed, 100_000), Ok(None));
    for seed in 0..20 {
        assert!(simulate(&fixed, &Schedule::RandomPermutations { seed }, 10_000).is_converged());
    }
}

#[test]
fn two_prefix_repair_covers_both_prefixes() {
    let sc = two_prefix_med();
    let prefs = sc.preferences().unwrap();
    assert_eq!(prefs.prefixes.len(), 2);
    let sys = build_system(&sc.inst, &prefs).unwrap();
    // A state where both prefixes prefer the high-MED egress at X.
    let w = vec![1, 2, 1, 8, 3, 3];
    assert!(!safe_with(&sc, &w));
    let initial: Vec<Option<u32>> = w.iter().map(|&x| Some(x)).collect();
    let mut cfg = RepairConfig::for_instance(&sc.inst);
    cfg.min_weight = 1;
    let sol = solve_min_change(&sys, &initial, &cfg).unwrap();
    assert!(sol.proven_optimal);
    assert!(sol.realized.all_ok());
    assert!(safe_with(&sc, &sol.weights));
}
