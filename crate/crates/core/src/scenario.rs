//! Ready-made instances and random generators used by tests, benchmarks and
//! the command line.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bgp_prefs::{derive_med_preferences, ExternalRoute, MandatedPreferences};
use crate::error::{Error, Result};
use crate::netmodel::{random_demands, DemandMatrix, Link, NetworkInstance, NodeId};
use crate::paths::{known_path_weight, RoutePath};
use crate::repair::{build_system, is_feasible, RepairConfig};
use crate::te::solve_flow;

/// An instance with external routes and the hop bound for candidate paths.
#[derive(Debug, Clone)]
pub struct MedScenario {
    pub inst: NetworkInstance,
    pub routes: Vec<ExternalRoute>,
    pub hop_bound: usize,
}

impl MedScenario {
    pub fn preferences(&self) -> Result<MandatedPreferences> {
        derive_med_preferences(&self.inst, &self.routes, self.hop_bound)
    }
}

fn build(names: &[&str], links: &[(usize, usize, u32)], w_max: u32, capacity: f64) -> NetworkInstance {
    let links = links
        .iter()
        .map(|&(a, b, w)| Link { a, b, weight: Some(w), capacity })
        .collect();
    NetworkInstance::new(names.iter().map(|s| s.to_string()).collect(), links, w_max)
        .expect("built-in topology is valid")
}

fn route(prefix: &str, egress: NodeId, neighbor_as: u32, med: u32) -> ExternalRoute {
    ExternalRoute { prefix: prefix.into(), egress, neighbor_as, med }
}

/// Five routers R, S, A, B, C. A and B learn the prefix from the same
/// neighbor AS (B with the lower MED), C from a second AS. With the shipped
/// weights R ranks A over C over its route via S to B, while S ranks its
/// route via R to C over its own B route, and the system oscillates.
pub fn med_gadget() -> MedScenario {
    let inst = build(
        &["R", "S", "A", "B", "C"],
        &[(0, 2, 1), (0, 4, 2), (0, 1, 1), (1, 3, 4)],
        10,
        100.0,
    );
    MedScenario {
        inst,
        routes: vec![route("p", 2, 100, 1), route("p", 3, 100, 0), route("p", 4, 200, 0)],
        hop_bound: 3,
    }
}

/// Six routers and two prefixes. `p1` is the gadget pattern on X, Y, A, B,
/// C; `p2` shares the MED pair on A and B but its second AS enters at D.
pub fn two_prefix_med() -> MedScenario {
    let inst = build(
        &["X", "Y", "A", "B", "C", "D"],
        &[(0, 2, 1), (0, 4, 2), (0, 1, 1), (1, 3, 4), (0, 5, 3), (4, 5, 3)],
        10,
        100.0,
    );
    MedScenario {
        inst,
        routes: vec![
            route("p1", 2, 100, 1),
            route("p1", 3, 100, 0),
            route("p1", 4, 200, 0),
            route("p2", 2, 300, 1),
            route("p2", 3, 300, 0),
            route("p2", 5, 400, 0),
        ],
        hop_bound: 3,
    }
}

/// Four nodes s, a, b, t with the short side through a. The returned
/// preference puts `[s,b,t]` before `[s,a,t]`.
pub fn diamond() -> (NetworkInstance, MandatedPreferences) {
    let inst = build(&["s", "a", "b", "t"], &[(0, 1, 1), (1, 3, 1), (0, 2, 2), (2, 3, 2)], 8, 10.0);
    let mut prefs = MandatedPreferences::new();
    prefs
        .add_pair("t", RoutePath::new(vec![0, 2, 3]), RoutePath::new(vec![0, 1, 3]))
        .expect("valid pair");
    (inst, prefs.close_suffixes())
}

/// A connected random graph: a random spanning tree plus `extra` further
/// links, weights uniform in `[1, w_max]`, capacities uniform in `[5, 20)`.
pub fn random_connected(n: usize, extra: usize, w_max: u32, seed: u64) -> NetworkInstance {
    assert!(n >= 2, "need at least two nodes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        pairs.push((u, v));
    }
    let max_links = n * (n - 1) / 2;
    let target = (n - 1 + extra).min(max_links);
    while pairs.len() < target {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let (a, b) = (a.min(b), a.max(b));
        if a != b && !pairs.contains(&(a, b)) {
            pairs.push((a, b));
        }
    }
    let links = pairs
        .into_iter()
        .map(|(a, b)| Link {
            a,
            b,
            weight: Some(rng.random_range(1..=w_max)),
            capacity: rng.random_range(5.0..20.0),
        })
        .collect();
    NetworkInstance::new((0..n).map(|i| format!("v{i}")).collect(), links, w_max).expect("generated graph is valid")
}

/// A simple path from `s` of up to `hops` links, walking to random
/// unvisited neighbors.
fn random_walk(inst: &NetworkInstance, s: NodeId, hops: usize, rng: &mut ChaCha8Rng) -> RoutePath {
    let mut nodes = vec![s];
    while nodes.len() <= hops {
        let head = *nodes.last().unwrap();
        let next: Vec<NodeId> = inst
            .neighbors(head)
            .iter()
            .map(|&(v, _)| v)
            .filter(|v| !nodes.contains(v))
            .collect();
        if next.is_empty() {
            break;
        }
        nodes.push(next[rng.random_range(0..next.len())]);
    }
    RoutePath::new(nodes)
}

/// Random mandated pairs in one prefix `planted`. Each pair joins two random
/// walks from a common random source; its direction follows a hidden
/// uniformly random weight vector, so the result is always satisfiable.
pub fn planted_preferences(inst: &NetworkInstance, pairs: usize, max_hops: usize, seed: u64) -> MandatedPreferences {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_max = inst.w_max().max(1);
    let hidden: Vec<u32> = (0..inst.link_count()).map(|_| rng.random_range(1..=w_max)).collect();
    let mut prefs = MandatedPreferences::new();
    let mut attempts = pairs * 500 + 100;
    while prefs.pair_count() < pairs && attempts > 0 {
        attempts -= 1;
        let s = rng.random_range(0..inst.node_count());
        let p = random_walk(inst, s, rng.random_range(1..=max_hops.max(1)), &mut rng);
        let q = random_walk(inst, s, rng.random_range(1..=max_hops.max(1)), &mut rng);
        if p == q || p.is_empty() || q.is_empty() {
            continue;
        }
        let (wp, wq) = (known_path_weight(inst, &p, &hidden), known_path_weight(inst, &q, &hidden));
        if wp == wq || wp.abs_diff(wq) > w_max as u64 {
            continue;
        }
        let (better, worse) = if wp < wq { (p, q) } else { (q, p) };
        let _ = prefs.add_pair("planted", better, worse);
    }
    prefs.close_suffixes()
}

/// Hop bound used for injected MED patterns.
pub const MED_HOP_BOUND: usize = 2;

/// Attaches `count` MED patterns to random routers: two egresses learn a
/// prefix from one AS with different MEDs, a third from another AS. Draws
/// are repeated until each pattern mandates at least one pair and the
/// combined preferences are satisfiable.
pub fn inject_med_conflicts(
    inst: &NetworkInstance,
    count: usize,
    seed: u64,
) -> Result<(Vec<ExternalRoute>, MandatedPreferences)> {
    if inst.node_count() < 3 {
        return Err(Error::Validation("MED patterns need at least three routers".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut routes: Vec<ExternalRoute> = Vec::new();
    for i in 0..count {
        let mut placed = false;
        for _ in 0..500 {
            let mut picks: Vec<NodeId> = Vec::new();
            while picks.len() < 3 {
                let v = rng.random_range(0..inst.node_count());
                if !picks.contains(&v) {
                    picks.push(v);
                }
            }
            let prefix = format!("m{i}");
            let base_as = 65_000 + 2 * i as u32;
            let mut trial = routes.clone();
            trial.push(route(&prefix, picks[0], base_as, 1));
            trial.push(route(&prefix, picks[1], base_as, 0));
            trial.push(route(&prefix, picks[2], base_as + 1, 0));
            let prefs = derive_med_preferences(inst, &trial, MED_HOP_BOUND)?;
            if prefs.prefixes.get(&prefix).is_none_or(|p| p.pairs.is_empty()) {
                continue;
            }
            let sys = build_system(inst, &prefs)?;
            let mut cfg = RepairConfig::for_system(&sys);
            cfg.min_weight = 1;
            cfg.node_budget = 200_000;
            if is_feasible(&sys, &cfg).unwrap_or(false) {
                routes = trial;
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Validation(format!("could not place MED pattern {i}")));
        }
    }
    let prefs = derive_med_preferences(inst, &routes, MED_HOP_BOUND)?;
    Ok((routes, prefs))
}

/// Random demands scaled so the busiest arc under equal splitting with the
/// instance weights runs at `peak_utilization`.
pub fn scaled_demands(inst: &NetworkInstance, density: f64, peak_utilization: f64, seed: u64) -> Result<DemandMatrix> {
    let raw = random_demands(inst, density, 1.0, seed);
    let flow = solve_flow(inst, &raw, &inst.known_weights()?)?;
    let peak = flow
        .arc_loads
        .iter()
        .zip(&flow.capacities)
        .map(|(x, c)| x / c)
        .fold(0.0, f64::max);
    if peak <= 0.0 {
        return Ok(raw);
    }
    let mut out = DemandMatrix::new();
    for (s, d, x) in raw.iter() {
        out.insert(inst, s, d, x * peak_utilization / peak)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pspp::{build_path_digraph, check_preferences, find_cycle};
    use crate::sim::{find_fair_oscillation, weights_to_pspp};

    #[test]
    fn gadget_weights_oscillate() {
        let sc = med_gadget();
        let prefs = sc.preferences().unwrap();
        // the mandated pairs alone are consistent; the weights close the cycle
        assert!(check_preferences(&sc.inst, &prefs).unwrap().is_none());
        let w = sc.inst.known_weights().unwrap();
        let ranked = weights_to_pspp(&sc.inst, &prefs, &w, "p", sc.hop_bound).unwrap();
        assert!(find_cycle(&build_path_digraph(&ranked.to_pspp(&sc.inst).unwrap())).is_some());
        assert!(find_fair_oscillation(&ranked, 100_000).unwrap().is_some());
    }

    #[test]
    fn two_prefix_instance_has_pairs_in_both_prefixes() {
        let sc = two_prefix_med();
        let prefs = sc.preferences().unwrap();
        assert_eq!(prefs.prefixes.len(), 2);
        assert!(prefs.prefixes.values().all(|p| !p.pairs.is_empty()));
    }

    #[test]
    fn random_connected_is_deterministic_and_sized() {
        let a = random_connected(8, 4, 6, 3);
        let b = random_connected(8, 4, 6, 3);
        assert_eq!(a, b);
        assert_eq!(a.link_count(), 11);
    }

    #[test]
    fn planted_preferences_are_satisfiable_by_construction() {
        let inst = random_connected(12, 10, 10, 5);
        let prefs = planted_preferences(&inst, 15, 4, 9);
        assert_eq!(prefs.pair_count(), 15);
        let sys = build_system(&inst, &prefs).unwrap();
        let cfg = RepairConfig::for_system(&sys);
        assert!(is_feasible(&sys, &cfg).unwrap());
    }

    #[test]
    fn scaled_demands_hit_the_requested_peak() {
        let inst = random_connected(10, 8, 10, 2);
        let d = scaled_demands(&inst, 0.4, 0.8, 2).unwrap();
        let flow = solve_flow(&inst, &d, &inst.known_weights().unwrap()).unwrap();
        let peak = flow.arc_loads.iter().zip(&flow.capacities).map(|(x, c)| x / c).fold(0.0, f64::max);
        assert!((peak - 0.8).abs() < 1e-9);
    }

    #[test]
    fn injected_patterns_each_mandate_pairs() {
        let inst = random_connected(15, 12, 20, 1);
        let (routes, prefs) = inject_med_conflicts(&inst, 3, 4).unwrap();
        assert_eq!(routes.len(), 9);
        assert_eq!(prefs.prefixes.len(), 3);
    }
}
