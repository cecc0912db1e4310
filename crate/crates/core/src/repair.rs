//! Minimal-change repair of link weights.
//!
//! Every path in a prefix's closure carries a potential equal to its weight.
//! Extension rows tie a path to its immediate suffix through the first link,
//! pair rows force the worse path's potential above the better one by at
//! least 1 and at most the virtual weight cap, and anchors sit at 0. Because
//! potentials are sums of link weights, the solver eliminates them and works
//! on one row per mandated pair over the link weights directly. The
//! potential form is kept as the difference-constraint relaxation used for
//! pruning and for conflict reporting.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::bgp_prefs::MandatedPreferences;
use crate::error::{Error, Result};
use crate::netmodel::{LinkId, NetworkInstance};
use crate::paths::{known_path_weight, RoutePath};

/// A closure path extended by one link from its immediate suffix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extension {
    pub path: usize,
    pub suffix: usize,
    pub link: LinkId,
}

/// The potential system of one prefix.
#[derive(Debug, Clone)]
pub struct PrefixSystem {
    pub prefix: String,
    /// Closure paths in sorted order; the same order as the restricted
    /// instance of the pspp module.
    pub paths: Vec<RoutePath>,
    pub path_links: Vec<Vec<LinkId>>,
    /// Indices of the empty anchor paths.
    pub anchors: Vec<usize>,
    pub extensions: Vec<Extension>,
    /// Mandated pairs as `(better, worse)` path indices.
    pub pairs: Vec<(usize, usize)>,
}

/// One mandated pair with potentials eliminated:
/// `1 <= sum(coef * w) <= virtual cap`, the sum being the worse path's
/// weight minus the better path's.
#[derive(Debug, Clone)]
pub struct PairRow {
    pub prefix: usize,
    pub better: usize,
    pub worse: usize,
    pub coefs: Vec<(LinkId, i8)>,
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct FeasibilitySystem {
    pub prefixes: Vec<PrefixSystem>,
    pub rows: Vec<PairRow>,
    pub link_labels: Vec<String>,
    pub node_count: usize,
    pub w_max: u32,
}

pub fn build_system(inst: &NetworkInstance, prefs: &MandatedPreferences) -> Result<FeasibilitySystem> {
    if !prefs.is_closed() {
        return Err(Error::Validation("preferences must be suffix-closed before building the system".into()));
    }
    let mut prefixes = Vec::new();
    let mut rows = Vec::new();
    for (name, pp) in &prefs.prefixes {
        for path in &pp.closure {
            if !path.is_valid(inst) {
                return Err(Error::InvalidPath(format!("{path}")));
            }
        }
        let paths: Vec<RoutePath> = pp.closure.iter().cloned().collect();
        let index: HashMap<&RoutePath, usize> = paths.iter().enumerate().map(|(i, p)| (p, i)).collect();
        let path_links: Vec<Vec<LinkId>> = paths.iter().map(|p| p.links(inst)).collect();
        let mut anchors = Vec::new();
        let mut extensions = Vec::new();
        for (i, p) in paths.iter().enumerate() {
            match p.immediate_suffix() {
                None => anchors.push(i),
                Some(s) => {
                    let suffix = *index.get(&s).ok_or_else(|| {
                        Error::Validation(format!("closure of `{name}` misses suffix {}", s.display(inst)))
                    })?;
                    let link = p.first_link(inst).expect("non-empty path has a first link");
                    extensions.push(Extension { path: i, suffix, link });
                }
            }
        }
        let k = prefixes.len();
        let mut pairs = Vec::new();
        for (better, worse) in &pp.pairs {
            let (b, w) = match (index.get(better), index.get(worse)) {
                (Some(&b), Some(&w)) => (b, w),
                _ => return Err(Error::InvalidPath(format!("{better} / {worse} outside the closure"))),
            };
            pairs.push((b, w));
            let mut coef: BTreeMap<LinkId, i8> = BTreeMap::new();
            for &l in &path_links[w] {
                *coef.entry(l).or_default() += 1;
            }
            for &l in &path_links[b] {
                *coef.entry(l).or_default() -= 1;
            }
            rows.push(PairRow {
                prefix: k,
                better: b,
                worse: w,
                coefs: coef.into_iter().filter(|&(_, c)| c != 0).collect(),
                label: format!("{name}: {} before {}", better.display(inst), worse.display(inst)),
            });
        }
        prefixes.push(PrefixSystem {
            prefix: name.clone(),
            paths,
            path_links,
            anchors,
            extensions,
            pairs,
        });
    }
    Ok(FeasibilitySystem {
        prefixes,
        rows,
        link_labels: (0..inst.link_count()).map(|l| inst.link_label(l)).collect(),
        node_count: inst.node_count(),
        w_max: inst.w_max(),
    })
}

impl FeasibilitySystem {
    pub fn link_count(&self) -> usize {
        self.link_labels.len()
    }

    /// Extension rows plus pair rows plus anchor rows.
    pub fn constraint_count(&self) -> usize {
        self.prefixes
            .iter()
            .map(|p| p.extensions.len() + p.pairs.len() + p.anchors.len())
            .sum()
    }

    /// Upper bound on any potential.
    pub fn potential_bound(&self) -> u64 {
        self.node_count as u64 * self.w_max as u64
    }

    /// Potentials (path weights) of every closure path, per prefix.
    pub fn potentials(&self, weights: &[u32]) -> Vec<Vec<u64>> {
        self.prefixes
            .iter()
            .map(|p| {
                p.path_links
                    .iter()
                    .map(|links| links.iter().map(|&l| weights[l] as u64).sum())
                    .collect()
            })
            .collect()
    }

    /// Ranks for the restricted digraph of prefix `k` derived from the
    /// potentials. Hop count breaks ties so zero-weight links still give a
    /// strictly increasing rank along suffix arcs.
    pub fn rank_witness(&self, k: usize, weights: &[u32]) -> Vec<u64> {
        let scale = self.node_count as u64 + 1;
        let pot = &self.potentials(weights)[k];
        self.prefixes[k]
            .paths
            .iter()
            .zip(pot)
            .map(|(p, &l)| l * scale + p.hops() as u64)
            .collect()
    }

    /// Verification against the system's own path tables.
    pub fn verify(&self, weights: &[u32]) -> VerificationRecord {
        let pot = self.potentials(weights);
        let pairs = self
            .rows
            .iter()
            .map(|r| {
                let ps = &self.prefixes[r.prefix];
                let (bw, ww) = (pot[r.prefix][r.better], pot[r.prefix][r.worse]);
                PairCheck {
                    prefix: ps.prefix.clone(),
                    better: ps.paths[r.better].clone(),
                    worse: ps.paths[r.worse].clone(),
                    better_weight: bw,
                    worse_weight: ww,
                    ok: bw < ww,
                }
            })
            .collect();
        let suffix_monotone = self
            .prefixes
            .iter()
            .enumerate()
            .all(|(k, ps)| ps.extensions.iter().all(|e| pot[k][e.suffix] <= pot[k][e.path]));
        VerificationRecord { pairs, suffix_monotone }
    }

    /// The system in CPLEX LP text form with the quadratic change cost as
    /// objective (the cap of the cost function is not expressible there).
    pub fn to_lp(&self, initial: &[Option<u32>], cfg: &RepairConfig) -> String {
        let cap = cfg.weight_cap(self);
        let vmax = cfg.span_cap(self);
        let mut s = String::from("\\ link weight feasibility system\nMinimize\n obj:");
        let mut quad = Vec::new();
        for (l, w) in initial.iter().enumerate() {
            if let Some(a) = w {
                if *a > 0 {
                    let _ = write!(s, " - {} w{l}", 2 * *a as u64);
                }
                quad.push(format!("2 w{l} ^ 2"));
            }
        }
        if quad.is_empty() {
            s.push_str(" 0 w0");
        } else {
            let _ = write!(s, " + [ {} ] / 2", quad.join(" + "));
        }
        s.push_str("\nSubject To\n");
        let mut v = 0usize;
        for (k, ps) in self.prefixes.iter().enumerate() {
            for e in &ps.extensions {
                let _ = writeln!(s, " ext_{k}_{}: lam_{k}_{} - lam_{k}_{} - w{} = 0", e.path, e.path, e.suffix, e.link);
            }
            for &(b, w) in &ps.pairs {
                let _ = writeln!(s, " pair_{v}: lam_{k}_{w} - lam_{k}_{b} - v{v} = 0");
                v += 1;
            }
            for &a in &ps.anchors {
                let _ = writeln!(s, " anchor_{k}_{a}: lam_{k}_{a} = 0");
            }
        }
        s.push_str("Bounds\n");
        for l in 0..self.link_count() {
            let _ = writeln!(s, " {} <= w{l} <= {cap}", cfg.min_weight);
        }
        for i in 0..v {
            let _ = writeln!(s, " 1 <= v{i} <= {vmax}");
        }
        for (k, ps) in self.prefixes.iter().enumerate() {
            for i in 0..ps.paths.len() {
                let _ = writeln!(s, " 0 <= lam_{k}_{i} <= {}", self.potential_bound());
            }
        }
        s.push_str("General\n");
        for l in 0..self.link_count() {
            let _ = writeln!(s, " w{l}");
        }
        for i in 0..v {
            let _ = writeln!(s, " v{i}");
        }
        s.push_str("End\n");
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairConfig {
    /// Changes of this magnitude or more cost `big_m`.
    pub epsilon: u32,
    pub big_m: u64,
    /// Upper bound for repaired weights; the instance's `w_max` when unset.
    pub w_max: Option<u32>,
    /// Largest allowed gap between a worse and a better mandated path;
    /// the weight cap when unset.
    pub virtual_max: Option<u32>,
    pub min_weight: u32,
    pub node_budget: u64,
    pub time_budget: Option<Duration>,
}

impl RepairConfig {
    /// Defaults: `epsilon = w_max` and `big_m = w_max^2 * links + 1`.
    pub fn new(w_max: u32, link_count: usize) -> Self {
        RepairConfig {
            epsilon: w_max.max(1),
            big_m: (w_max as u64).pow(2) * link_count as u64 + 1,
            w_max: None,
            virtual_max: None,
            min_weight: 0,
            node_budget: 2_000_000,
            time_budget: None,
        }
    }

    pub fn for_instance(inst: &NetworkInstance) -> Self {
        Self::new(inst.w_max(), inst.link_count())
    }

    pub fn for_system(sys: &FeasibilitySystem) -> Self {
        Self::new(sys.w_max, sys.link_count())
    }

    /// Sets epsilon and raises `big_m` if needed to keep it dominant.
    pub fn with_epsilon(mut self, epsilon: u32, link_count: usize) -> Self {
        self.epsilon = epsilon;
        let floor = (epsilon as u64).pow(2) * link_count as u64 + 1;
        self.big_m = self.big_m.max(floor);
        self
    }

    pub fn validate(&self, link_count: usize) -> Result<()> {
        if self.epsilon < 1 {
            return Err(Error::Validation("epsilon must be at least 1".into()));
        }
        if self.big_m <= (self.epsilon as u64).pow(2) * link_count as u64 {
            return Err(Error::Validation(format!(
                "penalty {} must exceed epsilon^2 * links = {}",
                self.big_m,
                (self.epsilon as u64).pow(2) * link_count as u64
            )));
        }
        if self.virtual_max == Some(0) {
            return Err(Error::Validation("virtual weight cap must be at least 1".into()));
        }
        Ok(())
    }

    pub fn weight_cap(&self, sys: &FeasibilitySystem) -> u32 {
        self.w_max.unwrap_or(sys.w_max)
    }

    pub fn span_cap(&self, sys: &FeasibilitySystem) -> u32 {
        self.virtual_max.unwrap_or_else(|| self.weight_cap(sys))
    }
}

/// Change cost: `delta^2` below epsilon, `big_m` from epsilon on.
pub fn h_cost(delta: i64, cfg: &RepairConfig) -> u64 {
    if delta.unsigned_abs() < cfg.epsilon as u64 {
        (delta * delta) as u64
    } else {
        cfg.big_m
    }
}

/// Total change cost; links without an initial weight are free.
pub fn total_cost(initial: &[Option<u32>], weights: &[u32], cfg: &RepairConfig) -> u64 {
    initial
        .iter()
        .zip(weights)
        .filter_map(|(a, &w)| a.map(|a| h_cost(w as i64 - a as i64, cfg)))
        .sum()
}

pub fn change_count(initial: &[Option<u32>], weights: &[u32]) -> usize {
    initial.iter().zip(weights).filter(|(a, &w)| a.is_some_and(|a| a != w)).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairCheck {
    pub prefix: String,
    pub better: RoutePath,
    pub worse: RoutePath,
    pub better_weight: u64,
    pub worse_weight: u64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationRecord {
    pub pairs: Vec<PairCheck>,
    pub suffix_monotone: bool,
}

impl VerificationRecord {
    pub fn all_ok(&self) -> bool {
        self.suffix_monotone && self.pairs.iter().all(|p| p.ok)
    }

    pub fn violations(&self) -> impl Iterator<Item = &PairCheck> {
        self.pairs.iter().filter(|p| !p.ok)
    }
}

/// Checks every mandated pair strictly and suffix monotonicity over the
/// closure, computing path weights from the instance.
pub fn verify_solution(inst: &NetworkInstance, prefs: &MandatedPreferences, weights: &[u32]) -> VerificationRecord {
    let mut pairs = Vec::new();
    for (prefix, better, worse) in prefs.iter_pairs() {
        let bw = known_path_weight(inst, better, weights);
        let ww = known_path_weight(inst, worse, weights);
        pairs.push(PairCheck {
            prefix: prefix.to_string(),
            better: better.clone(),
            worse: worse.clone(),
            better_weight: bw,
            worse_weight: ww,
            ok: bw < ww,
        });
    }
    let closed;
    let prefs = if prefs.is_closed() {
        prefs
    } else {
        closed = prefs.close_suffixes();
        &closed
    };
    let suffix_monotone = prefs.prefixes.values().all(|pp| {
        pp.closure.iter().all(|p| match p.immediate_suffix() {
            None => true,
            Some(s) => {
                pp.closure.contains(&s) && known_path_weight(inst, &s, weights) <= known_path_weight(inst, p, weights)
            }
        })
    });
    VerificationRecord { pairs, suffix_monotone }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Exact,
    RelaxedRounded,
    LocalSearch,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Exact => "exact",
            Stage::RelaxedRounded => "relaxed+rounded",
            Stage::LocalSearch => "local-search",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightChange {
    pub link: LinkId,
    pub label: String,
    pub old: Option<u32>,
    pub new: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairSolution {
    pub weights: Vec<u32>,
    pub changes: Vec<WeightChange>,
    pub realized: VerificationRecord,
    pub objective: u64,
    pub stage: Stage,
    /// False when a budget stopped the exact search before it proved
    /// optimality.
    pub proven_optimal: bool,
}

impl RepairSolution {
    /// Packages `weights` after verifying them; unverified weights are
    /// rejected rather than returned.
    pub fn assemble(
        sys: &FeasibilitySystem,
        initial: &[Option<u32>],
        weights: Vec<u32>,
        cfg: &RepairConfig,
        stage: Stage,
        proven_optimal: bool,
    ) -> Result<Self> {
        let realized = sys.verify(&weights);
        if !realized.all_ok() {
            let bad: Vec<String> = realized
                .violations()
                .map(|p| format!("{}: {} ({}) vs {} ({})", p.prefix, p.better, p.better_weight, p.worse, p.worse_weight))
                .collect();
            return Err(Error::Validation(format!("weights fail verification: {}", bad.join("; "))));
        }
        let changes = initial
            .iter()
            .zip(&weights)
            .enumerate()
            .filter(|(_, (a, &w))| **a != Some(w))
            .map(|(l, (a, &w))| WeightChange {
                link: l,
                label: sys.link_labels[l].clone(),
                old: *a,
                new: w,
            })
            .collect();
        Ok(RepairSolution {
            objective: total_cost(initial, &weights, cfg),
            weights,
            changes,
            realized,
            stage,
            proven_optimal,
        })
    }

    /// Changed links that had a known weight before.
    pub fn changed_links(&self) -> usize {
        self.changes.iter().filter(|c| c.old.is_some()).count()
    }
}

/// Exact minimal-change repair by branch and bound. The optimum minimizes
/// total change cost, then the number of changed links, then the weight
/// vector lexicographically.
pub fn solve_min_change(sys: &FeasibilitySystem, w_initial: &[Option<u32>], cfg: &RepairConfig) -> Result<RepairSolution> {
    if w_initial.len() != sys.link_count() {
        return Err(Error::Validation(format!(
            "expected {} initial weights, got {}",
            sys.link_count(),
            w_initial.len()
        )));
    }
    cfg.validate(sys.link_count())?;
    let all = vec![true; sys.rows.len()];
    let mut solver = Solver::new(sys, w_initial, cfg, &all);
    let root = match solver.root() {
        Some(d) => d,
        None => return Err(Error::Infeasible { conflict: conflict_subset(sys, w_initial, cfg) }),
    };
    solver.limit = (u64::MAX, usize::MAX);
    solver.dfs(root.clone(), false);
    let phase1_aborted = solver.aborted;
    let Some(best) = solver.best.clone() else {
        if phase1_aborted {
            return Err(Error::Budget("no feasible weights found within the budget".into()));
        }
        return Err(Error::Infeasible { conflict: conflict_subset(sys, w_initial, cfg) });
    };
    let values = if phase1_aborted {
        best.2
    } else {
        solver.lex_refine(root, (best.0, best.1)).unwrap_or(best.2)
    };
    let weights = solver.expand(&values);
    RepairSolution::assemble(sys, w_initial, weights, cfg, Stage::Exact, !phase1_aborted)
}

/// Checks whether any weights satisfy the system, ignoring cost.
pub fn is_feasible(sys: &FeasibilitySystem, cfg: &RepairConfig) -> Result<bool> {
    let initial = vec![None; sys.link_count()];
    let all = vec![true; sys.rows.len()];
    match Solver::new(sys, &initial, cfg, &all).feasible() {
        Some(f) => Ok(f),
        None => Err(Error::Budget("feasibility check ran out of budget".into())),
    }
}

/// A conflicting subset of constraints: the rows of a negative cycle in the
/// potential relaxation when one exists, otherwise a deletion-filtered
/// irreducible set of pair rows.
fn conflict_subset(sys: &FeasibilitySystem, initial: &[Option<u32>], cfg: &RepairConfig) -> Vec<String> {
    let all = vec![true; sys.rows.len()];
    let solver = Solver::new(sys, initial, cfg, &all);
    let dom = solver.initial_domains();
    if let Some(cycle) = solver.negative_cycle(&dom) {
        return cycle;
    }
    let mut keep = all;
    for i in 0..sys.rows.len() {
        keep[i] = false;
        let still_infeasible = Solver::new(sys, initial, cfg, &keep).feasible() == Some(false);
        if !still_infeasible {
            keep[i] = true;
        }
    }
    sys.rows
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(r, _)| r.label.clone())
        .collect()
}

#[derive(Debug, Clone)]
struct Row {
    coefs: Vec<(usize, i64)>,
    lo: i64,
    hi: i64,
}

#[derive(Debug, Clone, Copy)]
enum EdgeBound {
    /// Extension over a link: upper uses the link's max, lower its min.
    Link { link: LinkId, upper: bool },
    Const(i64),
}

#[derive(Debug, Clone)]
struct DiffEdge {
    from: usize,
    to: usize,
    bound: EdgeBound,
    label: usize,
}

struct DiffGraph {
    vertices: usize,
    edges: Vec<DiffEdge>,
}

type Domains = Vec<(i64, i64)>;

struct Solver<'a> {
    cfg: &'a RepairConfig,
    lo: i64,
    hi: i64,
    vars: Vec<LinkId>,
    var_of: Vec<Option<usize>>,
    init: Vec<Option<i64>>,
    fixed: Vec<i64>,
    fixed_cost: u64,
    fixed_changes: usize,
    rows: Vec<Row>,
    var_rows: Vec<Vec<usize>>,
    graphs: Vec<DiffGraph>,
    edge_labels: Vec<String>,
    nodes: u64,
    deadline: Option<Instant>,
    aborted: bool,
    /// Exclusive bound on (cost, changes) for accepted solutions.
    limit: (u64, usize),
    stop_on_first: bool,
    best: Option<(u64, usize, Vec<i64>)>,
}

impl<'a> Solver<'a> {
    fn new(sys: &'a FeasibilitySystem, initial: &[Option<u32>], cfg: &'a RepairConfig, keep: &[bool]) -> Self {
        let lo = cfg.min_weight as i64;
        let hi = cfg.weight_cap(sys) as i64;
        let vmax = cfg.span_cap(sys) as i64;
        let n_links = sys.link_count();
        let mut active = vec![false; n_links];
        for (r, _) in sys.rows.iter().zip(keep).filter(|(_, &k)| k) {
            for &(l, _) in &r.coefs {
                active[l] = true;
            }
        }
        let vars: Vec<LinkId> = (0..n_links).filter(|&l| active[l]).collect();
        let mut var_of = vec![None; n_links];
        for (k, &l) in vars.iter().enumerate() {
            var_of[l] = Some(k);
        }
        let init: Vec<Option<i64>> = vars.iter().map(|&l| initial[l].map(|w| w as i64)).collect();
        // inactive links take the in-bounds value closest to their initial
        // weight; unknown ones the smallest allowed value
        let mut fixed = vec![0i64; n_links];
        let (mut fixed_cost, mut fixed_changes) = (0u64, 0usize);
        for l in 0..n_links {
            if active[l] {
                continue;
            }
            fixed[l] = match initial[l] {
                Some(a) => {
                    let v = (a as i64).clamp(lo, hi.max(lo));
                    if v != a as i64 {
                        fixed_cost += h_cost(v - a as i64, cfg);
                        fixed_changes += 1;
                    }
                    v
                }
                None => lo,
            };
        }
        let mut rows: Vec<Row> = Vec::new();
        let mut seen: HashMap<Vec<(usize, i64)>, usize> = HashMap::new();
        for (r, _) in sys.rows.iter().zip(keep).filter(|(_, &k)| k) {
            let coefs: Vec<(usize, i64)> = r.coefs.iter().map(|&(l, c)| (var_of[l].unwrap(), c as i64)).collect();
            if seen.contains_key(&coefs) {
                continue;
            }
            seen.insert(coefs.clone(), rows.len());
            rows.push(Row { coefs, lo: 1, hi: vmax });
        }
        let mut var_rows = vec![Vec::new(); vars.len()];
        for (i, r) in rows.iter().enumerate() {
            for &(v, _) in &r.coefs {
                var_rows[v].push(i);
            }
        }
        let mut edge_labels = Vec::new();
        let mut graphs = Vec::new();
        let mut row_idx = 0usize;
        let mut row_keep = keep.iter();
        for ps in &sys.prefixes {
            // vertex 0 joins the anchors; paths follow at index + 1
            let mut edges = Vec::new();
            for &a in &ps.anchors {
                let label = edge_labels.len();
                edge_labels.push(format!("{}: anchor {} at 0", ps.prefix, ps.paths[a]));
                edges.push(DiffEdge { from: 0, to: a + 1, bound: EdgeBound::Const(0), label });
                edges.push(DiffEdge { from: a + 1, to: 0, bound: EdgeBound::Const(0), label });
            }
            for e in &ps.extensions {
                let label = edge_labels.len();
                edge_labels.push(format!(
                    "{}: {} extends {} over {}",
                    ps.prefix, ps.paths[e.path], ps.paths[e.suffix], sys.link_labels[e.link]
                ));
                edges.push(DiffEdge {
                    from: e.suffix + 1,
                    to: e.path + 1,
                    bound: EdgeBound::Link { link: e.link, upper: true },
                    label,
                });
                edges.push(DiffEdge {
                    from: e.path + 1,
                    to: e.suffix + 1,
                    bound: EdgeBound::Link { link: e.link, upper: false },
                    label,
                });
            }
            for &(b, w) in &ps.pairs {
                let k = *row_keep.next().expect("one keep flag per row");
                let label = edge_labels.len();
                edge_labels.push(sys.rows[row_idx].label.clone());
                row_idx += 1;
                if !k {
                    continue;
                }
                edges.push(DiffEdge { from: b + 1, to: w + 1, bound: EdgeBound::Const(vmax), label });
                edges.push(DiffEdge { from: w + 1, to: b + 1, bound: EdgeBound::Const(-1), label });
            }
            graphs.push(DiffGraph { vertices: ps.paths.len() + 1, edges });
        }
        Solver {
            cfg,
            lo,
            hi,
            vars,
            var_of,
            init,
            fixed,
            fixed_cost,
            fixed_changes,
            rows,
            var_rows,
            graphs,
            edge_labels,
            nodes: 0,
            deadline: cfg.time_budget.map(|d| Instant::now() + d),
            aborted: false,
            limit: (u64::MAX, usize::MAX),
            stop_on_first: false,
            best: None,
        }
    }

    fn initial_domains(&self) -> Domains {
        vec![(self.lo, self.hi); self.vars.len()]
    }

    fn root(&mut self) -> Option<Domains> {
        let mut dom = self.initial_domains();
        if self.lo > self.hi || !self.propagate(&mut dom) || self.negative_cycle(&dom).is_some() {
            return None;
        }
        Some(dom)
    }

    /// `Some(true)` feasible, `Some(false)` infeasible, `None` out of budget.
    fn feasible(mut self) -> Option<bool> {
        let Some(root) = self.root() else { return Some(false) };
        self.limit = (u64::MAX, usize::MAX);
        self.stop_on_first = true;
        self.dfs(root, true);
        if self.best.is_some() {
            Some(true)
        } else if self.aborted {
            None
        } else {
            Some(false)
        }
    }

    fn cost(&self, k: usize, v: i64) -> u64 {
        self.init[k].map_or(0, |a| h_cost(v - a, self.cfg))
    }

    fn changed(&self, k: usize, v: i64) -> bool {
        self.init[k].is_some_and(|a| a != v)
    }

    /// The cheapest value in the domain, ties to the smaller value.
    fn best_point(&self, k: usize, (lo, hi): (i64, i64)) -> i64 {
        match self.init[k] {
            Some(a) => a.clamp(lo, hi),
            None => lo,
        }
    }

    fn link_range(&self, dom: &Domains, link: LinkId) -> (i64, i64) {
        match self.var_of[link] {
            Some(k) => dom[k],
            None => (self.fixed[link], self.fixed[link]),
        }
    }

    /// Bounds propagation over the pair rows.
    fn propagate(&self, dom: &mut Domains) -> bool {
        let mut queued = vec![true; self.rows.len()];
        let mut queue: VecDeque<usize> = (0..self.rows.len()).collect();
        while let Some(r) = queue.pop_front() {
            queued[r] = false;
            let row = &self.rows[r];
            let (mut min_s, mut max_s) = (0i64, 0i64);
            for &(v, c) in &row.coefs {
                let (lo, hi) = dom[v];
                if c > 0 {
                    min_s += c * lo;
                    max_s += c * hi;
                } else {
                    min_s += c * hi;
                    max_s += c * lo;
                }
            }
            if min_s > row.hi || max_s < row.lo {
                return false;
            }
            for &(v, c) in &row.coefs {
                let (lo, hi) = dom[v];
                let (own_min, own_max) = if c > 0 { (c * lo, c * hi) } else { (c * hi, c * lo) };
                // c * x must lie in [row.lo - (max_s - own_max), row.hi - (min_s - own_min)]
                let t_lo = row.lo - (max_s - own_max);
                let t_hi = row.hi - (min_s - own_min);
                let (nlo, nhi) = if c > 0 {
                    (lo.max(div_ceil(t_lo, c)), hi.min(div_floor(t_hi, c)))
                } else {
                    (lo.max(div_ceil(t_hi, c)), hi.min(div_floor(t_lo, c)))
                };
                if nlo > nhi {
                    return false;
                }
                if (nlo, nhi) != (lo, hi) {
                    dom[v] = (nlo, nhi);
                    for &r2 in &self.var_rows[v] {
                        if r2 != r && !queued[r2] {
                            queued[r2] = true;
                            queue.push_back(r2);
                        }
                    }
                }
            }
        }
        true
    }

    /// Bellman-Ford over the potential relaxation; returns the labels of
    /// a negative cycle's constraints.
    fn negative_cycle(&self, dom: &Domains) -> Option<Vec<String>> {
        for g in &self.graphs {
            let weight = |e: &DiffEdge| match e.bound {
                EdgeBound::Const(c) => c,
                EdgeBound::Link { link, upper } => {
                    let (lo, hi) = self.link_range(dom, link);
                    if upper {
                        hi
                    } else {
                        -lo
                    }
                }
            };
            let n = g.vertices;
            let mut dist = vec![0i64; n];
            let mut pred: Vec<Option<usize>> = vec![None; n];
            let mut last = None;
            for _ in 0..n {
                last = None;
                for (i, e) in g.edges.iter().enumerate() {
                    let nd = dist[e.from] + weight(e);
                    if nd < dist[e.to] {
                        dist[e.to] = nd;
                        pred[e.to] = Some(i);
                        last = Some(e.to);
                    }
                }
                if last.is_none() {
                    break;
                }
            }
            if let Some(mut v) = last {
                for _ in 0..n {
                    v = g.edges[pred[v].expect("relaxed vertex has a predecessor")].from;
                }
                let start = v;
                let mut labels = Vec::new();
                loop {
                    let e = &g.edges[pred[v].unwrap()];
                    labels.push(self.edge_labels[e.label].clone());
                    v = e.from;
                    if v == start {
                        break;
                    }
                }
                labels.reverse();
                labels.dedup();
                return Some(labels);
            }
        }
        None
    }

    fn tick(&mut self) -> bool {
        self.nodes += 1;
        if self.nodes > self.cfg.node_budget {
            self.aborted = true;
        }
        if self.nodes.is_multiple_of(256) && self.deadline.is_some_and(|d| Instant::now() > d) {
            self.aborted = true;
        }
        !self.aborted
    }

    fn dfs(&mut self, mut dom: Domains, skip_bf: bool) {
        if !self.tick() || (self.stop_on_first && self.best.is_some()) {
            return;
        }
        if !self.propagate(&mut dom) {
            return;
        }
        if !skip_bf && self.negative_cycle(&dom).is_some() {
            return;
        }
        let point: Vec<i64> = (0..self.vars.len()).map(|k| self.best_point(k, dom[k])).collect();
        let mut lb = self.fixed_cost;
        let mut changes = self.fixed_changes;
        for (k, &v) in point.iter().enumerate() {
            lb += self.cost(k, v);
            changes += self.changed(k, v) as usize;
        }
        // for each violated row, the cheapest unit move towards it
        let mut extra = 0u64;
        let mut branch: Option<(u64, i64, usize, usize, bool)> = None;
        for (r, row) in self.rows.iter().enumerate() {
            let s: i64 = row.coefs.iter().map(|&(v, c)| c * point[v]).sum();
            if s >= row.lo && s <= row.hi {
                continue;
            }
            let raise = s < row.lo;
            let violation = if raise { row.lo - s } else { s - row.hi };
            let mut cheapest: Option<(u64, usize, bool)> = None;
            for &(v, c) in &row.coefs {
                let up = (c > 0) == raise;
                let (lo, hi) = dom[v];
                let next = if up { point[v] + 1 } else { point[v] - 1 };
                if next < lo || next > hi {
                    continue;
                }
                let inc = self.cost(v, next) - self.cost(v, point[v]);
                if cheapest.is_none_or(|(ci, _, _)| inc < ci) {
                    cheapest = Some((inc, v, up));
                }
            }
            let Some((inc, v, up)) = cheapest else { return };
            extra = extra.max(inc);
            if branch.is_none_or(|(bi, bv, _, _, _)| (inc, violation) > (bi, bv)) {
                branch = Some((inc, violation, r, v, up));
            }
        }
        if (lb + extra, changes) >= self.limit {
            return;
        }
        let Some((_, _, _, v, up)) = branch else {
            self.limit = if self.stop_on_first { self.limit } else { (lb, changes) };
            self.best = Some((lb, changes, point));
            return;
        };
        let (lo, hi) = dom[v];
        let b = point[v];
        let mut children = Vec::with_capacity(3);
        if up {
            children.push((b + 1, hi));
        } else {
            children.push((lo, b - 1));
        }
        children.push((b, b));
        if up {
            children.push((lo, b - 1));
        } else {
            children.push((b + 1, hi));
        }
        for (clo, chi) in children {
            if clo > chi {
                continue;
            }
            let mut d = dom.clone();
            d[v] = (clo, chi);
            self.dfs(d, false);
            if self.aborted {
                return;
            }
        }
    }

    /// Among solutions with exactly `opt` cost and changes, the
    /// lexicographically smallest by link order.
    fn lex_refine(&mut self, mut dom: Domains, opt: (u64, usize)) -> Option<Vec<i64>> {
        for k in 0..self.vars.len() {
            let (lo, hi) = dom[k];
            let rest: u64 = (0..self.vars.len())
                .filter(|&j| j != k)
                .map(|j| self.cost(j, self.best_point(j, dom[j])))
                .sum::<u64>()
                + self.fixed_cost;
            let mut found = false;
            for v in lo..=hi {
                if rest + self.cost(k, v) > opt.0 {
                    continue;
                }
                let mut d = dom.clone();
                d[k] = (v, v);
                self.best = None;
                self.limit = (opt.0, opt.1 + 1);
                self.stop_on_first = true;
                self.dfs(d.clone(), false);
                if self.aborted {
                    return None;
                }
                if self.best.is_some() {
                    self.propagate(&mut d);
                    dom = d;
                    found = true;
                    break;
                }
            }
            if !found {
                return None;
            }
        }
        Some(dom.iter().map(|&(lo, _)| lo).collect())
    }

    fn expand(&self, values: &[i64]) -> Vec<u32> {
        let mut w: Vec<u32> = self.fixed.iter().map(|&v| v as u32).collect();
        for (k, &l) in self.vars.iter().enumerate() {
            w[l] = values[k] as u32;
        }
        w
    }
}

fn div_floor(a: i64, b: i64) -> i64 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

fn div_ceil(a: i64, b: i64) -> i64 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) == (b < 0)) {
        q + 1
    } else {
        q
    }
}
