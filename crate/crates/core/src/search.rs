//! Local search over single-link weight changes for equal splitting, with a
//! feasibility filter on the mandated pairs, early stop at the TE tolerance,
//! and a multi-start driver.

use std::collections::{HashSet, VecDeque};
use std::io::Write;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bgp_prefs::MandatedPreferences;
use crate::error::{Error, Result};
use crate::netmodel::{DemandMatrix, LinkId, NetworkInstance};
use crate::repair::{build_system, solve_min_change, FeasibilitySystem, RepairConfig, RepairSolution, Stage};
use crate::te::{best_of, solve_flow, te_cost, Candidate, JointContext, TeCostModel};

/// TE cost with ties split equally at every ECMP branch.
pub fn ecmp_cost(inst: &NetworkInstance, demands: &DemandMatrix, w: &[u32], model: &TeCostModel) -> Result<f64> {
    Ok(te_cost(&solve_flow(inst, demands, w)?, model))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// Allowed ECMP cost increase over the baseline, in percent.
    pub gamma: f64,
    pub max_iterations: usize,
    /// Share of the neighborhood sampled in the first round.
    pub initial_fraction: f64,
    pub min_fraction: f64,
    /// Rounds without improvement before the sample doubles.
    pub stagnation_rounds: usize,
    /// Visited vectors remembered before the oldest are evicted.
    pub visited_cap: usize,
    pub seed: u64,
    /// Worker threads of [`parallel_search`].
    pub threads: usize,
    pub record_progress: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            gamma: 10.0,
            max_iterations: 200,
            initial_fraction: 0.2,
            min_fraction: 0.05,
            stagnation_rounds: 3,
            visited_cap: 100_000,
            seed: 0,
            threads: 4,
            record_progress: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Validation("gamma must be non-negative".into()));
        }
        let ok = |f: f64| f > 0.0 && f <= 1.0;
        if !ok(self.initial_fraction) || !ok(self.min_fraction) || self.min_fraction > self.initial_fraction {
            return Err(Error::Validation("sampling fractions must lie in (0, 1]".into()));
        }
        if self.threads == 0 {
            return Err(Error::Validation("need at least one thread".into()));
        }
        Ok(())
    }
}

/// One line of the progress stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProgressRecord {
    pub iter: usize,
    pub cost: f64,
    pub feasible_neighbors: usize,
    pub action: &'static str,
}

/// Writes records as JSON lines.
pub fn write_progress(out: &mut impl Write, records: &[ProgressRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Current point of one search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    pub weights: Vec<u32>,
    /// `worse - better` path weight per pair row.
    pub slack: Vec<i64>,
    pub cost: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub solution: RepairSolution,
    pub cost: f64,
    pub baseline: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Stopped because the cost reached the tolerance.
    pub reached_target: bool,
    pub progress: Vec<ProgressRecord>,
}

impl SearchOutcome {
    pub fn normalized(&self) -> f64 {
        if self.baseline > 0.0 {
            self.cost / self.baseline
        } else {
            1.0
        }
    }
}

/// Immutable inputs shared by all searches on one instance.
pub struct SearchProblem<'a> {
    pub inst: &'a NetworkInstance,
    pub demands: &'a DemandMatrix,
    pub sys: FeasibilitySystem,
    pub model: TeCostModel,
    pub repair: RepairConfig,
    pub initial: Vec<Option<u32>>,
    /// ECMP cost of the instance's own weights.
    pub baseline: f64,
    link_rows: Vec<Vec<(usize, i64)>>,
}

impl<'a> SearchProblem<'a> {
    /// The instance weights are the reference point and must all be known.
    pub fn new(
        inst: &'a NetworkInstance,
        demands: &'a DemandMatrix,
        prefs: &MandatedPreferences,
        model: &TeCostModel,
        repair: &RepairConfig,
    ) -> Result<Self> {
        let w_e = inst.known_weights()?;
        let sys = if prefs.is_closed() {
            build_system(inst, prefs)?
        } else {
            build_system(inst, &prefs.close_suffixes())?
        };
        let mut link_rows = vec![Vec::new(); inst.link_count()];
        for (i, r) in sys.rows.iter().enumerate() {
            for &(l, c) in &r.coefs {
                link_rows[l].push((i, c as i64));
            }
        }
        let mut repair = repair.clone();
        repair.min_weight = repair.min_weight.max(1);
        Ok(SearchProblem {
            baseline: ecmp_cost(inst, demands, &w_e, model)?,
            inst,
            demands,
            sys,
            model: model.clone(),
            repair,
            initial: w_e.into_iter().map(Some).collect(),
            link_rows,
        })
    }

    pub fn target(&self, gamma: f64) -> f64 {
        self.baseline * (1.0 + gamma / 100.0)
    }

    pub fn is_feasible(&self, w: &[u32]) -> bool {
        w.len() == self.sys.link_count() && w.iter().all(|&x| x >= 1) && self.sys.verify(w).all_ok()
    }

    fn state(&self, w: Vec<u32>) -> Result<SearchState> {
        let slack = self
            .sys
            .rows
            .iter()
            .map(|r| r.coefs.iter().map(|&(l, c)| c as i64 * w[l] as i64).sum())
            .collect();
        Ok(SearchState { cost: ecmp_cost(self.inst, self.demands, &w, &self.model)?, weights: w, slack, iteration: 0 })
    }

    /// Whether moving `link` to `value` keeps every pair strict; only the
    /// rows touching the link are re-evaluated.
    fn move_keeps_pairs(&self, st: &SearchState, link: LinkId, value: u32) -> bool {
        let delta = value as i64 - st.weights[link] as i64;
        self.link_rows[link].iter().all(|&(row, c)| st.slack[row] + c * delta >= 1)
    }

    fn apply(&self, st: &mut SearchState, link: LinkId, value: u32, cost: f64) {
        let delta = value as i64 - st.weights[link] as i64;
        for &(row, c) in &self.link_rows[link] {
            st.slack[row] += c * delta;
        }
        st.weights[link] = value;
        st.cost = cost;
    }

    fn finish(&self, st: SearchState, evaluations: usize, reached: bool, progress: Vec<ProgressRecord>) -> Result<SearchOutcome> {
        Ok(SearchOutcome {
            solution: RepairSolution::assemble(&self.sys, &self.initial, st.weights, &self.repair, Stage::LocalSearch, false)?,
            cost: st.cost,
            baseline: self.baseline,
            iterations: st.iteration,
            evaluations,
            reached_target: reached,
            progress,
        })
    }

    pub fn run(&self, start: &[u32], cfg: &SearchConfig, stop: Option<&AtomicBool>) -> Result<SearchOutcome> {
        cfg.validate()?;
        if !self.is_feasible(start) {
            return Err(Error::InfeasibleStart);
        }
        let target = self.target(cfg.gamma);
        let mut st = self.state(start.to_vec())?;
        let mut progress = Vec::new();
        let mut evaluations = 1;
        if st.cost <= target {
            return self.finish(st, evaluations, true, progress);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let w_max = self.repair.weight_cap(&self.sys).max(1);
        let links = self.sys.link_count();
        let neighborhood = links * (w_max as usize - 1).max(1);
        let mut visited: HashSet<Vec<u32>> = HashSet::new();
        let mut order: VecDeque<Vec<u32>> = VecDeque::new();
        let mut remember = |w: Vec<u32>, visited: &mut HashSet<Vec<u32>>| {
            if visited.insert(w.clone()) {
                order.push_back(w);
                if order.len() > cfg.visited_cap {
                    if let Some(old) = order.pop_front() {
                        visited.remove(&old);
                    }
                }
            }
        };
        remember(st.weights.clone(), &mut visited);
        let mut fraction = cfg.initial_fraction;
        let mut stagnant = 0;
        let mut reached = false;
        while st.iteration < cfg.max_iterations {
            if stop.is_some_and(|s| s.load(Ordering::Relaxed)) {
                break;
            }
            st.iteration += 1;
            let samples = ((fraction * neighborhood as f64).ceil() as usize).max(1);
            let mut best: Option<(f64, LinkId, u32)> = None;
            let mut feasible = 0;
            let mut probe = st.weights.clone();
            for _ in 0..samples {
                let l = rng.random_range(0..links);
                let v = rng.random_range(1..=w_max);
                if v == st.weights[l] || !self.move_keeps_pairs(&st, l, v) {
                    continue;
                }
                probe[l] = v;
                if visited.contains(&probe) {
                    probe[l] = st.weights[l];
                    continue;
                }
                feasible += 1;
                let cost = ecmp_cost(self.inst, self.demands, &probe, &self.model)?;
                evaluations += 1;
                remember(probe.clone(), &mut visited);
                probe[l] = st.weights[l];
                if best.is_none_or(|(c, _, _)| cost < c) {
                    best = Some((cost, l, v));
                }
            }
            let action = match best {
                Some((cost, l, v)) if cost < st.cost => {
                    self.apply(&mut st, l, v, cost);
                    assert!(self.sys.verify(&st.weights).all_ok(), "incumbent violates a mandated pair");
                    fraction = (fraction / 2.0).max(cfg.min_fraction);
                    stagnant = 0;
                    "improve"
                }
                _ => {
                    stagnant += 1;
                    if stagnant >= cfg.stagnation_rounds {
                        fraction = (fraction * 2.0).min(1.0);
                        stagnant = 0;
                        "expand"
                    } else {
                        "stay"
                    }
                }
            };
            if cfg.record_progress {
                progress.push(ProgressRecord { iter: st.iteration, cost: st.cost, feasible_neighbors: feasible, action });
            }
            if st.cost <= target {
                reached = true;
                break;
            }
        }
        self.finish(st, evaluations, reached, progress)
    }
}

/// Local search from a feasible `start`; the instance weights are the
/// baseline.
pub fn search(
    inst: &NetworkInstance,
    demands: &DemandMatrix,
    prefs: &MandatedPreferences,
    start: &[u32],
    cfg: &SearchConfig,
    model: &TeCostModel,
) -> Result<SearchOutcome> {
    let problem = SearchProblem::new(inst, demands, prefs, model, &RepairConfig::for_instance(inst))?;
    problem.run(start, cfg, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartMode {
    /// Return the first search that reaches the tolerance; cancel the rest.
    FirstWins,
    /// Run all searches and return the cheapest.
    BestOf,
}

/// One search per start on up to `cfg.threads` threads; search `i` uses seed
/// `cfg.seed + i`. Infeasible starts are skipped.
pub fn parallel_search(
    problem: &SearchProblem,
    starts: &[Vec<u32>],
    cfg: &SearchConfig,
    mode: StartMode,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    let runnable: Vec<usize> = (0..starts.len()).filter(|&i| problem.is_feasible(&starts[i])).collect();
    if runnable.is_empty() {
        return Err(Error::NoFeasibleStart);
    }
    let stop = AtomicBool::new(false);
    let next = AtomicUsize::new(0);
    let winner: Mutex<Option<usize>> = Mutex::new(None);
    let results: Mutex<Vec<Option<Result<SearchOutcome>>>> = Mutex::new((0..starts.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..cfg.threads.min(runnable.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = runnable.get(k) else { break };
                if mode == StartMode::FirstWins && stop.load(Ordering::SeqCst) {
                    break;
                }
                let local = SearchConfig { seed: cfg.seed.wrapping_add(i as u64), ..cfg.clone() };
                let flag = (mode == StartMode::FirstWins).then_some(&stop);
                let out = problem.run(&starts[i], &local, flag);
                if mode == StartMode::FirstWins {
                    if let Ok(o) = &out {
                        if o.reached_target {
                            let mut w = winner.lock().expect("winner lock");
                            if w.is_none() {
                                *w = Some(i);
                                stop.store(true, Ordering::SeqCst);
                            }
                        }
                    }
                }
                results.lock().expect("results lock")[i] = Some(out);
            });
        }
    });
    let mut results = results.into_inner().expect("results lock");
    if let Some(i) = winner.into_inner().expect("winner lock") {
        return results[i].take().expect("winner stored its result");
    }
    let mut best: Option<SearchOutcome> = None;
    for r in results.into_iter().flatten() {
        let r = r?;
        if best.as_ref().is_none_or(|b| r.cost < b.cost) {
            best = Some(r);
        }
    }
    best.ok_or(Error::NoFeasibleStart)
}

/// Up to `k` distinct feasible starts. The first is the joint solution; the
/// rest are the next-best pool candidates, then re-solves with a randomized
/// objective that exclude vectors already returned, then feasible one-link
/// moves away from returned vectors.
pub fn generate_starts(ctx: &JointContext, k: usize, seed: u64) -> Result<Vec<Vec<u32>>> {
    starts_from_pool(ctx, ctx.candidates(None)?, k, seed)
}

/// [`generate_starts`] over an already computed candidate pool.
pub fn starts_from_pool(ctx: &JointContext, mut pool: Vec<Candidate>, k: usize, seed: u64) -> Result<Vec<Vec<u32>>> {
    if k == 0 {
        return Err(Error::Validation("need at least one start".into()));
    }
    let mut out: Vec<Vec<u32>> = Vec::new();
    let take_best = |pool: &mut Vec<Candidate>, out: &mut Vec<Vec<u32>>| {
        pool.retain(|c| !out.contains(&c.weights));
        if let Some(best) = best_of(pool).cloned() {
            out.push(best.weights);
            true
        } else {
            false
        }
    };
    while out.len() < k && take_best(&mut pool, &mut out) {}
    for round in 0..(2 * k) as u64 {
        if out.len() >= k {
            break;
        }
        let mut fresh = ctx.candidates(Some(seed.wrapping_add(round)))?;
        take_best(&mut fresh, &mut out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_max = ctx.cfg.weight_cap(&ctx.sys);
    let mut attempts = 1000 * k;
    while out.len() < k && attempts > 0 && !out.is_empty() {
        attempts -= 1;
        let mut w = out[rng.random_range(0..out.len())].clone();
        let l = rng.random_range(0..w.len());
        w[l] = rng.random_range(ctx.cfg.min_weight..=w_max);
        if !out.contains(&w) && ctx.sys.verify(&w).all_ok() {
            out.push(w);
        }
    }
    Ok(out)
}

/// A random feasible weight vector: uniform rejection sampling first, then
/// the minimal repair of a uniform random vector.
pub fn random_feasible_start(sys: &FeasibilitySystem, cfg: &RepairConfig, seed: u64) -> Result<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = cfg.min_weight.max(1);
    let hi = cfg.weight_cap(sys).max(lo);
    let draw = |rng: &mut ChaCha8Rng| (0..sys.link_count()).map(|_| rng.random_range(lo..=hi)).collect::<Vec<u32>>();
    for _ in 0..1000 {
        let w = draw(&mut rng);
        if sys.verify(&w).all_ok() {
            return Ok(w);
        }
    }
    let initial: Vec<Option<u32>> = draw(&mut rng).into_iter().map(Some).collect();
    let mut cfg = cfg.clone();
    cfg.min_weight = lo;
    Ok(solve_min_change(sys, &initial, &cfg)?.weights)
}
