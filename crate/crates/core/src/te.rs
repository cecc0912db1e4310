//! Traffic-engineering cost, shortest-path flows and the joint repair that
//! trades weight changes against TE cost.
//!
//! Loads are kept per directed arc: arc `2l` runs from `link.a` to `link.b`
//! and arc `2l + 1` the other way, both with the link's capacity.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::bgp_prefs::MandatedPreferences;
use crate::error::{Error, Result};
use crate::netmodel::{DemandMatrix, LinkId, NetworkInstance, NodeId};
use crate::paths::{build_ecmp_dag, EcmpDag};
use crate::repair::{
    build_system, change_count, solve_min_change, total_cost, FeasibilitySystem, RepairConfig, RepairSolution, Stage,
};

/// Convex piecewise-linear link cost over utilization.
#[derive(Debug, Clone, PartialEq)]
pub struct TeCostModel {
    /// Utilization values where the slope changes, increasing.
    breakpoints: Vec<f64>,
    /// One slope per segment; `slopes.len() == breakpoints.len() + 1`.
    slopes: Vec<f64>,
}

impl Default for TeCostModel {
    fn default() -> Self {
        TeCostModel::fortz_thorup()
    }
}

#[derive(Debug, Deserialize)]
struct SegmentRecord {
    from_utilization: f64,
    slope: f64,
}

impl TeCostModel {
    /// Slopes 1, 3, 10, 70, 500, 5000 changing at 1/3, 2/3, 9/10, 1, 11/10.
    pub fn fortz_thorup() -> Self {
        TeCostModel {
            breakpoints: vec![1.0 / 3.0, 2.0 / 3.0, 0.9, 1.0, 1.1],
            slopes: vec![1.0, 3.0, 10.0, 70.0, 500.0, 5000.0],
        }
    }

    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        if slopes.len() != breakpoints.len() + 1 {
            return Err(Error::Validation("need exactly one more slope than breakpoints".into()));
        }
        if breakpoints.iter().any(|&b| !(b > 0.0 && b.is_finite())) || breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("breakpoints must be positive and increasing".into()));
        }
        if slopes.iter().any(|&s| !(s >= 0.0 && s.is_finite())) || slopes.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Validation("slopes must be non-negative and nondecreasing".into()));
        }
        Ok(TeCostModel { breakpoints, slopes })
    }

    /// Reads `from_utilization,slope` rows; the first row starts at 0.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for rec in reader.deserialize::<SegmentRecord>() {
            rows.push(rec.map_err(|e| Error::Parse(format!("cost model: {e}")))?);
        }
        match rows.first() {
            None => return Err(Error::Parse("cost model has no segments".into())),
            Some(r) if r.from_utilization != 0.0 => {
                return Err(Error::Parse("first cost segment must start at utilization 0".into()))
            }
            _ => {}
        }
        TeCostModel::new(
            rows[1..].iter().map(|r| r.from_utilization).collect(),
            rows.iter().map(|r| r.slope).collect(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        TeCostModel::from_csv(&text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("from_utilization,slope\n");
        for (i, s) in self.slopes.iter().enumerate() {
            let from = if i == 0 { 0.0 } else { self.breakpoints[i - 1] };
            out.push_str(&format!("{from},{s}\n"));
        }
        out
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// Cost of carrying `load` over an arc of `capacity`.
    pub fn phi(&self, load: f64, capacity: f64) -> f64 {
        if load <= 0.0 {
            return 0.0;
        }
        if capacity <= 0.0 {
            return load * self.slopes[self.slopes.len() - 1];
        }
        let mut cost = 0.0;
        let mut start = 0.0;
        for (i, &slope) in self.slopes.iter().enumerate() {
            let end = self.breakpoints.get(i).map_or(f64::INFINITY, |b| b * capacity);
            if load <= start {
                break;
            }
            cost += slope * (load.min(end) - start);
            start = end;
        }
        cost
    }

    /// Right derivative of [`TeCostModel::phi`] at `load`.
    pub fn slope_at(&self, load: f64, capacity: f64) -> f64 {
        if capacity <= 0.0 {
            return self.slopes[self.slopes.len() - 1];
        }
        let u = load.max(0.0) / capacity;
        let seg = self.breakpoints.iter().take_while(|&&b| u >= b).count();
        self.slopes[seg]
    }
}

pub fn arc_index(inst: &NetworkInstance, link: LinkId, from: NodeId) -> usize {
    if inst.link(link).a == from {
        2 * link
    } else {
        2 * link + 1
    }
}

/// Flow of all demands along shortest paths.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    /// Load per directed arc.
    pub arc_loads: Vec<f64>,
    pub capacities: Vec<f64>,
    /// Arc loads of the traffic towards each destination.
    pub per_destination: BTreeMap<NodeId, Vec<f64>>,
    /// Sum over arcs of weight times load.
    pub routing_cost: f64,
}

impl FlowSolution {
    /// Largest conservation residual over all destinations and nodes.
    pub fn conservation_error(&self, inst: &NetworkInstance, demands: &DemandMatrix) -> f64 {
        let mut worst: f64 = 0.0;
        for (&d, loads) in &self.per_destination {
            let mut net = vec![0.0; inst.node_count()];
            for (l, link) in inst.links().iter().enumerate() {
                net[link.a] += loads[2 * l] - loads[2 * l + 1];
                net[link.b] += loads[2 * l + 1] - loads[2 * l];
            }
            for (v, out) in net.iter().enumerate() {
                let supply = if v == d {
                    -demands.iter().filter(|&(_, t, _)| t == d).map(|(_, _, x)| x).sum::<f64>()
                } else {
                    demands.get(v, d)
                };
                worst = worst.max((out - supply).abs());
            }
        }
        worst
    }
}

/// Split ratios per `(destination, node)` over that node's ECMP next hops
/// (in the DAG's order). Missing entries split equally.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitRatios {
    pub ratios: HashMap<(NodeId, NodeId), Vec<f64>>,
}

struct DestFlow {
    dag: EcmpDag,
    supply: Vec<f64>,
}

fn dest_flows(inst: &NetworkInstance, demands: &DemandMatrix, w: &[u32]) -> Result<Vec<DestFlow>> {
    let mut out = Vec::new();
    for d in demands.destinations() {
        let dag = build_ecmp_dag(inst, d, w)?;
        let mut supply = vec![0.0; inst.node_count()];
        for (s, t, x) in demands.iter() {
            if t != d {
                continue;
            }
            if dag.dist[s] == u64::MAX {
                return Err(Error::Unreachable {
                    from: inst.node_name(s).into(),
                    to: inst.node_name(d).into(),
                });
            }
            supply[s] += x;
        }
        out.push(DestFlow { dag, supply });
    }
    Ok(out)
}

/// Pushes supplies down the DAG; `choose` gives the fraction per next hop.
fn push_flow(
    inst: &NetworkInstance,
    df: &DestFlow,
    mut choose: impl FnMut(NodeId, &[(NodeId, LinkId)]) -> Vec<f64>,
) -> Vec<f64> {
    let mut loads = vec![0.0; 2 * inst.link_count()];
    let mut inflow = df.supply.clone();
    for &v in &df.dag.order {
        let f = inflow[v];
        if v == df.dag.dest || f == 0.0 {
            continue;
        }
        let hops = &df.dag.next_hops[v];
        for (&(u, l), r) in hops.iter().zip(choose(v, hops)) {
            if r == 0.0 {
                continue;
            }
            loads[arc_index(inst, l, v)] += f * r;
            inflow[u] += f * r;
        }
    }
    loads
}

fn assemble(inst: &NetworkInstance, w: &[u32], per: BTreeMap<NodeId, Vec<f64>>) -> FlowSolution {
    let mut arc_loads = vec![0.0; 2 * inst.link_count()];
    for loads in per.values() {
        for (a, x) in loads.iter().enumerate() {
            arc_loads[a] += x;
        }
    }
    let routing_cost = arc_loads.iter().enumerate().map(|(a, x)| w[a / 2] as f64 * x).sum();
    let capacities = (0..2 * inst.link_count()).map(|a| inst.link(a / 2).capacity).collect();
    FlowSolution { arc_loads, capacities, per_destination: per, routing_cost }
}

/// Shortest-path flow with ties split equally.
pub fn solve_flow(inst: &NetworkInstance, demands: &DemandMatrix, w: &[u32]) -> Result<FlowSolution> {
    solve_flow_split(inst, demands, w, &SplitRatios::default())
}

/// Shortest-path flow with ties split by `split`.
pub fn solve_flow_split(
    inst: &NetworkInstance,
    demands: &DemandMatrix,
    w: &[u32],
    split: &SplitRatios,
) -> Result<FlowSolution> {
    let mut per = BTreeMap::new();
    for df in dest_flows(inst, demands, w)? {
        let d = df.dag.dest;
        let mut bad = None;
        let loads = push_flow(inst, &df, |v, hops| match split.ratios.get(&(d, v)) {
            Some(r) if r.len() == hops.len() && r.iter().all(|&x| x >= 0.0) && r.iter().sum::<f64>() > 0.0 => {
                let total: f64 = r.iter().sum();
                r.iter().map(|x| x / total).collect()
            }
            Some(_) => {
                bad = Some(v);
                vec![1.0 / hops.len() as f64; hops.len()]
            }
            None => vec![1.0 / hops.len() as f64; hops.len()],
        });
        if let Some(v) = bad {
            return Err(Error::Validation(format!(
                "split ratios at {} towards {} do not match its next hops",
                inst.node_name(v),
                inst.node_name(d)
            )));
        }
        per.insert(d, loads);
    }
    Ok(assemble(inst, w, per))
}

/// Total cost of a flow: the sum of the arc costs.
pub fn te_cost(flow: &FlowSolution, model: &TeCostModel) -> f64 {
    flow.arc_loads
        .iter()
        .zip(&flow.capacities)
        .map(|(&x, &c)| model.phi(x, c))
        .sum()
}

fn cost_of(loads: &[f64], caps: &[f64], model: &TeCostModel) -> f64 {
    loads.iter().zip(caps).map(|(&x, &c)| model.phi(x, c)).sum()
}

/// The cheapest shortest-path flow when ties may be split in any ratio,
/// found by Frank-Wolfe from the equal split.
pub fn optimal_split_flow(
    inst: &NetworkInstance,
    demands: &DemandMatrix,
    w: &[u32],
    model: &TeCostModel,
    iterations: usize,
) -> Result<FlowSolution> {
    let flows = dest_flows(inst, demands, w)?;
    let caps: Vec<f64> = (0..2 * inst.link_count()).map(|a| inst.link(a / 2).capacity).collect();
    let mut per: Vec<Vec<f64>> = flows
        .iter()
        .map(|df| push_flow(inst, df, |_, hops| vec![1.0 / hops.len() as f64; hops.len()]))
        .collect();
    let mut total = vec![0.0; caps.len()];
    for loads in &per {
        for (a, x) in loads.iter().enumerate() {
            total[a] += x;
        }
    }
    let mut cost = cost_of(&total, &caps, model);
    for _ in 0..iterations {
        let marginal: Vec<f64> = total.iter().zip(&caps).map(|(&x, &c)| model.slope_at(x, c)).collect();
        // all-or-nothing on the cheapest DAG route per destination
        let targets: Vec<Vec<f64>> = flows
            .iter()
            .map(|df| {
                let n = inst.node_count();
                let mut best = vec![f64::INFINITY; n];
                let mut pick = vec![usize::MAX; n];
                best[df.dag.dest] = 0.0;
                for &v in df.dag.order.iter().rev() {
                    for (i, &(u, l)) in df.dag.next_hops[v].iter().enumerate() {
                        let c = marginal[arc_index(inst, l, v)] + best[u];
                        if c < best[v] {
                            best[v] = c;
                            pick[v] = i;
                        }
                    }
                }
                push_flow(inst, df, |v, hops| {
                    let mut r = vec![0.0; hops.len()];
                    r[pick[v]] = 1.0;
                    r
                })
            })
            .collect();
        let mut target_total = vec![0.0; caps.len()];
        for loads in &targets {
            for (a, x) in loads.iter().enumerate() {
                target_total[a] += x;
            }
        }
        let gap: f64 = (0..caps.len()).map(|a| marginal[a] * (total[a] - target_total[a])).sum();
        if gap <= 1e-9 * cost.max(1.0) {
            break;
        }
        let at = |s: f64| {
            let mixed: Vec<f64> = total.iter().zip(&target_total).map(|(x, y)| x + s * (y - x)).collect();
            cost_of(&mixed, &caps, model)
        };
        // golden-section search on the convex cost along the segment
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let (mut x1, mut x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
        let (mut f1, mut f2) = (at(x1), at(x2));
        for _ in 0..40 {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - g * (hi - lo);
                f1 = at(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + g * (hi - lo);
                f2 = at(x2);
            }
        }
        let step = (lo + hi) / 2.0;
        let new_cost = at(step);
        if new_cost >= cost {
            break;
        }
        for (loads, target) in per.iter_mut().zip(&targets) {
            for (x, y) in loads.iter_mut().zip(target) {
                *x += step * (y - *x);
            }
        }
        for (x, y) in total.iter_mut().zip(&target_total) {
            *x += step * (y - *x);
        }
        cost = new_cost;
    }
    let per = flows.iter().map(|df| df.dag.dest).zip(per).collect();
    Ok(assemble(inst, w, per))
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig {
    /// Allowed TE cost increase over the baseline, in percent.
    pub gamma: f64,
    /// Penalty per unit of normalized TE cost above the tolerance.
    pub m_prime: f64,
    /// Alternating relinearization rounds.
    pub iterations: usize,
    /// Largest weight move per relinearization round.
    pub trust_region: u32,
    /// Node budget of the exact solve kept in the candidate pool.
    pub exact_node_budget: u64,
    /// Frank-Wolfe iterations per TE evaluation.
    pub flow_iterations: usize,
    pub lp_time_limit: Duration,
    pub model: TeCostModel,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            gamma: 10.0,
            m_prime: 1000.0,
            iterations: 4,
            trust_region: 2,
            exact_node_budget: 20_000,
            flow_iterations: 30,
            lp_time_limit: Duration::from_secs(20),
            model: TeCostModel::default(),
        }
    }
}

impl JointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Validation("gamma must be non-negative".into()));
        }
        if !(self.m_prime > 0.0 && self.m_prime.is_finite()) {
            return Err(Error::Validation("TE penalty must be positive".into()));
        }
        Ok(())
    }

    pub fn tolerance(&self) -> f64 {
        1.0 + self.gamma / 100.0
    }
}

/// A scored weight vector from the joint solver.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub weights: Vec<u32>,
    /// Change cost plus TE penalty.
    pub objective: f64,
    pub change_cost: u64,
    pub changes: usize,
    /// Unequal-split TE cost.
    pub te: f64,
    pub stage: Stage,
}

impl Candidate {
    fn key(&self) -> (f64, u64, usize, &[u32]) {
        (self.objective, self.change_cost, self.changes, &self.weights)
    }

    fn better_than(&self, other: &Candidate) -> bool {
        self.key().partial_cmp(&other.key()) == Some(std::cmp::Ordering::Less)
    }
}

/// Shared state of one joint solve: the system, the baseline and a cache of
/// TE evaluations.
pub struct JointContext<'a> {
    pub inst: &'a NetworkInstance,
    pub demands: &'a DemandMatrix,
    pub prefs: &'a MandatedPreferences,
    pub sys: FeasibilitySystem,
    pub initial: Vec<Option<u32>>,
    pub w_e: Vec<u32>,
    pub cfg: RepairConfig,
    pub jcfg: JointConfig,
    /// Unequal-split TE cost of the initial weights.
    pub baseline: f64,
    cache: Mutex<HashMap<Vec<u32>, f64>>,
}

impl<'a> JointContext<'a> {
    /// Weights must be known and positive; `min_weight` is raised to 1.
    pub fn new(
        inst: &'a NetworkInstance,
        demands: &'a DemandMatrix,
        prefs: &'a MandatedPreferences,
        w_initial: &[u32],
        cfg: &RepairConfig,
        jcfg: &JointConfig,
    ) -> Result<Self> {
        jcfg.validate()?;
        cfg.validate(inst.link_count())?;
        let closed;
        let prefs_closed = if prefs.is_closed() {
            prefs
        } else {
            closed = prefs.close_suffixes();
            &closed
        };
        let sys = build_system(inst, prefs_closed)?;
        let mut cfg = cfg.clone();
        cfg.min_weight = cfg.min_weight.max(1);
        let ctx = JointContext {
            inst,
            demands,
            prefs,
            sys,
            initial: w_initial.iter().map(|&w| Some(w)).collect(),
            w_e: w_initial.to_vec(),
            cfg,
            jcfg: jcfg.clone(),
            baseline: 0.0,
            cache: Mutex::new(HashMap::new()),
        };
        let baseline = ctx.te(w_initial)?;
        Ok(JointContext { baseline, ..ctx })
    }

    /// Unequal-split TE cost of `w`, cached.
    pub fn te(&self, w: &[u32]) -> Result<f64> {
        if let Some(&c) = self.cache.lock().expect("cache lock").get(w) {
            return Ok(c);
        }
        let flow = optimal_split_flow(self.inst, self.demands, w, &self.jcfg.model, self.jcfg.flow_iterations)?;
        let c = te_cost(&flow, &self.jcfg.model);
        self.cache.lock().expect("cache lock").insert(w.to_vec(), c);
        Ok(c)
    }

    pub fn normalized(&self, te: f64) -> f64 {
        if self.baseline > 0.0 {
            te / self.baseline
        } else {
            1.0
        }
    }

    fn penalty(&self, te: f64) -> f64 {
        self.jcfg.m_prime * (self.normalized(te) - self.jcfg.tolerance()).max(0.0)
    }

    /// Scores `w`; `None` when it fails verification.
    pub fn score(&self, w: Vec<u32>, stage: Stage) -> Result<Option<Candidate>> {
        if !self.sys.verify(&w).all_ok() || w.iter().any(|&x| x < self.cfg.min_weight) {
            return Ok(None);
        }
        let te = self.te(&w)?;
        let change_cost = total_cost(&self.initial, &w, &self.cfg);
        Ok(Some(Candidate {
            objective: change_cost as f64 + self.penalty(te),
            change_cost,
            changes: change_count(&self.initial, &w),
            te,
            weights: w,
            stage,
        }))
    }

    fn active_links(&self) -> Vec<LinkId> {
        let mut active = vec![false; self.sys.link_count()];
        for r in &self.sys.rows {
            for &(l, _) in &r.coefs {
                active[l] = true;
            }
        }
        (0..active.len()).filter(|&l| active[l]).collect()
    }

    /// Rounded relaxation. Rows broken by rounding get their lower bound
    /// raised by one and the relaxation is solved again, a few times at most.
    /// `None` when the relaxation is infeasible.
    fn relax(&self, lin: Option<(&[u32], &HashMap<LinkId, f64>, f64)>, noise: &HashMap<LinkId, f64>) -> Result<Option<Vec<u32>>> {
        let mut lift = vec![0.0; self.sys.rows.len()];
        let mut last = None;
        for _ in 0..6 {
            let Some(w) = self.relax_once(lin, noise, &lift)? else {
                return Ok(last);
            };
            let check = self.sys.verify(&w);
            if check.all_ok() {
                return Ok(Some(w));
            }
            for (i, p) in check.pairs.iter().enumerate() {
                if !p.ok {
                    lift[i] += 1.0;
                }
            }
            last = Some(w);
        }
        Ok(last)
    }

    /// Continuous relaxation around an optional linearization point, rounded
    /// to integers. `noise` adds a per-link objective term and `lift` raises
    /// the lower bound of single pair rows.
    fn relax_once(
        &self,
        lin: Option<(&[u32], &HashMap<LinkId, f64>, f64)>,
        noise: &HashMap<LinkId, f64>,
        lift: &[f64],
    ) -> Result<Option<Vec<u32>>> {
        let active = self.active_links();
        let lo = self.cfg.min_weight as f64;
        let cap = self.cfg.weight_cap(&self.sys) as f64;
        let vmax = self.cfg.span_cap(&self.sys) as f64;
        let eps = self.cfg.epsilon as i64;
        let seg_cost = |j: i64| -> f64 {
            if j + 1 < eps {
                (2 * j + 1) as f64
            } else {
                self.cfg.big_m as f64 - ((eps - 1) * (eps - 1)) as f64
            }
        };
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        lp.set_time_limit(self.jcfg.lp_time_limit);
        let mut var = HashMap::new();
        for &l in &active {
            let (mut vlo, mut vhi) = (lo, cap);
            if let Some((center, _, _)) = lin {
                let r = self.jcfg.trust_region as f64;
                vlo = vlo.max(center[l] as f64 - r);
                vhi = vhi.min(center[l] as f64 + r);
            }
            let x = lp.add_var(noise.get(&l).copied().unwrap_or(0.0), (vlo, vhi));
            var.insert(l, x);
            let a = self.w_e[l] as i64;
            let mut terms = vec![(x, 1.0)];
            for j in 0..(cap as i64 - a).max(0) {
                terms.push((lp.add_var(seg_cost(j), (0.0, 1.0)), -1.0));
            }
            for j in 0..(a - lo as i64).max(0) {
                terms.push((lp.add_var(seg_cost(j), (0.0, 1.0)), 1.0));
            }
            lp.add_constraint(&terms[..], ComparisonOp::Eq, a as f64);
        }
        for (r, up) in self.sys.rows.iter().zip(lift) {
            let terms: Vec<_> = r.coefs.iter().map(|&(l, c)| (var[&l], c as f64)).collect();
            lp.add_constraint(&terms[..], ComparisonOp::Ge, (1.0 + up).min(vmax));
            lp.add_constraint(&terms[..], ComparisonOp::Le, vmax);
        }
        if let Some((center, sens, phi)) = lin {
            if self.baseline > 0.0 {
                let t = lp.add_var(self.jcfg.m_prime, (0.0, f64::INFINITY));
                let mut terms = vec![(t, 1.0)];
                let mut rhs = phi / self.baseline - self.jcfg.tolerance();
                for (&l, &s) in sens {
                    if let Some(&x) = var.get(&l) {
                        terms.push((x, -s / self.baseline));
                        rhs -= s * center[l] as f64 / self.baseline;
                    }
                }
                lp.add_constraint(&terms[..], ComparisonOp::Ge, rhs);
            }
        }
        let sol = match lp.solve() {
            Ok(outcome) => match outcome.into_solution() {
                Ok(s) => s,
                Err(_) => return Ok(None),
            },
            Err(microlp::Error::Infeasible) => return Ok(None),
            Err(e) => return Err(Error::Lp(e.to_string())),
        };
        let mut w = self.w_e.clone();
        for (&l, &x) in &var {
            w[l] = (sol.var_value(x).round().clamp(lo, cap)) as u32;
        }
        Ok(Some(w))
    }

    /// Central finite differences of the TE cost per active link.
    fn sensitivities(&self, w: &[u32]) -> Result<HashMap<LinkId, f64>> {
        let lo = self.cfg.min_weight;
        let cap = self.cfg.weight_cap(&self.sys);
        let base = self.te(w)?;
        let mut out = HashMap::new();
        for l in self.active_links() {
            let mut probe = w.to_vec();
            let up = if w[l] < cap {
                probe[l] = w[l] + 1;
                Some(self.te(&probe)?)
            } else {
                None
            };
            let down = if w[l] > lo {
                probe[l] = w[l] - 1;
                Some(self.te(&probe)?)
            } else {
                None
            };
            let s = match (up, down) {
                (Some(u), Some(d)) => (u - d) / 2.0,
                (Some(u), None) => u - base,
                (None, Some(d)) => base - d,
                (None, None) => 0.0,
            };
            out.insert(l, s);
        }
        Ok(out)
    }

    /// Candidate pool: rounded relaxation, budgeted exact solve, alternating
    /// TE-aware relaxations and a greedy revert of the best one.
    pub fn candidates(&self, noise_seed: Option<u64>) -> Result<Vec<Candidate>> {
        let noise: HashMap<LinkId, f64> = match noise_seed {
            None => HashMap::new(),
            Some(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                self.active_links().into_iter().map(|l| (l, rng.random_range(-2.0..2.0))).collect()
            }
        };
        let mut pool: Vec<Candidate> = Vec::new();
        let relaxed = self.relax(None, &noise)?;
        if relaxed.is_none() {
            // the relaxation is infeasible; the exact solver names the conflict
            let mut cfg = self.cfg.clone();
            cfg.node_budget = self.jcfg.exact_node_budget.max(1);
            solve_min_change(&self.sys, &self.initial, &cfg)?;
        }
        if let Some(w) = relaxed {
            pool.extend(self.score(w, Stage::RelaxedRounded)?);
        }
        if noise_seed.is_none() || pool.is_empty() {
            let mut cfg = self.cfg.clone();
            cfg.node_budget = self.jcfg.exact_node_budget.max(1);
            match solve_min_change(&self.sys, &self.initial, &cfg) {
                Ok(sol) => pool.extend(self.score(sol.weights, Stage::Exact)?),
                Err(Error::Budget(_)) => {}
                Err(e) => return Err(e),
            }
        }
        let Some(mut current) = best_of(&pool).cloned() else {
            return Ok(pool);
        };
        for _ in 0..self.jcfg.iterations {
            if self.penalty(current.te) == 0.0 {
                break;
            }
            let sens = self.sensitivities(&current.weights)?;
            let Some(w) = self.relax(Some((&current.weights, &sens, current.te)), &noise)? else {
                break;
            };
            if w == current.weights {
                break;
            }
            match self.score(w, Stage::RelaxedRounded)? {
                Some(c) => {
                    let improved = c.better_than(&current);
                    pool.push(c.clone());
                    if !improved {
                        break;
                    }
                    current = c;
                }
                None => break,
            }
        }
        if let Some(best) = best_of(&pool).cloned() {
            let reverted = self.greedy_revert(best)?;
            if !pool.contains(&reverted) {
                pool.push(reverted);
            }
        }
        Ok(pool)
    }

    /// Moves changed links back towards their initial weights while that
    /// keeps the vector verified and lowers the objective.
    fn greedy_revert(&self, mut best: Candidate) -> Result<Candidate> {
        loop {
            let mut improved = false;
            for l in 0..best.weights.len() {
                let (cur, orig) = (best.weights[l], self.w_e[l]);
                if cur == orig {
                    continue;
                }
                let step = if cur > orig { cur - 1 } else { cur + 1 };
                for target in [orig, step] {
                    let mut w = best.weights.clone();
                    w[l] = target;
                    if let Some(c) = self.score(w, best.stage)? {
                        if c.better_than(&best) {
                            best = c;
                            improved = true;
                            break;
                        }
                    }
                }
            }
            if !improved {
                return Ok(best);
            }
        }
    }

    pub fn into_solution(&self, c: &Candidate) -> Result<RepairSolution> {
        RepairSolution::assemble(&self.sys, &self.initial, c.weights.clone(), &self.cfg, c.stage, false)
    }
}

/// The candidate with the smallest objective, change cost, change count and
/// weight vector, in that order.
pub fn best_of(pool: &[Candidate]) -> Option<&Candidate> {
    pool.iter().reduce(|a, b| if b.better_than(a) { b } else { a })
}

/// Joint repair for unequal splitting: minimizes change cost plus a penalty
/// on normalized TE cost above `1 + gamma/100`, over a pool of rounded
/// relaxations and a budgeted exact solution.
pub fn solve_joint_unequal(
    inst: &NetworkInstance,
    demands: &DemandMatrix,
    prefs: &MandatedPreferences,
    w_initial: &[u32],
    cfg: &RepairConfig,
    jcfg: &JointConfig,
) -> Result<RepairSolution> {
    let ctx = JointContext::new(inst, demands, prefs, w_initial, cfg, jcfg)?;
    let pool = ctx.candidates(None)?;
    let best = best_of(&pool).ok_or_else(|| Error::Budget("no verified candidate found".into()))?;
    ctx.into_solution(best)
}
