//! Asynchronous path-vector dynamics over ranked path instances.
//!
//! Each node holds at most one selected path. An activated node considers
//! its permitted paths whose immediate suffix is the current selection of the
//! next hop (an egress always has its empty path), drops every candidate that
//! a mandated preference ranks below another available candidate, and takes
//! the remaining one with the best base rank. Advertisements are delivered
//! instantly, so a node's view of its neighbors is their current selection.
//!
//! The two-tier rule mirrors a decision process where MED decides between
//! some route pairs and IGP distance decides the rest. It is not a total
//! order when the tiers disagree; when the induced path digraph is acyclic
//! the rule picks the maximum of a linear extension, so safe instances
//! cannot oscillate.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bgp_prefs::{candidate_paths, MandatedPreferences};
use crate::error::{Error, Result};
use crate::netmodel::{NetworkInstance, NodeId};
use crate::paths::{known_path_weight, RoutePath};
use crate::pspp::PsppInstance;

#[derive(Debug, Clone)]
pub struct RankedPspp {
    label: String,
    node_count: usize,
    paths: Vec<RoutePath>,
    index: HashMap<RoutePath, usize>,
    by_source: Vec<Vec<usize>>,
    suffix: Vec<Option<usize>>,
    /// Lower is better; compared only between paths of one source.
    base: Vec<u64>,
    decisive: HashSet<(usize, usize)>,
    dominators: Vec<Vec<usize>>,
}

impl RankedPspp {
    /// `base[i]` ranks `paths[i]`; `decisive` holds `(better, worse)` pairs
    /// that override the base rank.
    pub fn new(
        label: impl Into<String>,
        node_count: usize,
        paths: Vec<RoutePath>,
        base: Vec<u64>,
        decisive: impl IntoIterator<Item = (RoutePath, RoutePath)>,
    ) -> Result<Self> {
        if paths.len() != base.len() {
            return Err(Error::Validation("one base rank per path is required".into()));
        }
        let mut order: Vec<usize> = (0..paths.len()).collect();
        order.sort_by(|&a, &b| paths[a].cmp(&paths[b]));
        let paths: Vec<RoutePath> = order.iter().map(|&i| paths[i].clone()).collect();
        let base: Vec<u64> = order.iter().map(|&i| base[i]).collect();
        if paths.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation("duplicate permitted path".into()));
        }
        if let Some(p) = paths.iter().find(|p| p.nodes().iter().any(|&v| v >= node_count)) {
            return Err(Error::InvalidPath(p.to_string()));
        }
        let index: HashMap<RoutePath, usize> = paths.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        let mut by_source = vec![Vec::new(); node_count];
        for (i, p) in paths.iter().enumerate() {
            by_source[p.source()].push(i);
        }
        let suffix = paths
            .iter()
            .map(|p| p.immediate_suffix().and_then(|s| index.get(&s).copied()))
            .collect();
        let mut set = HashSet::new();
        let mut dominators = vec![Vec::new(); paths.len()];
        for (p, q) in decisive {
            let (Some(&i), Some(&j)) = (index.get(&p), index.get(&q)) else {
                continue;
            };
            if p.source() != q.source() || i == j {
                return Err(Error::Validation(format!("bad decisive pair {p} / {q}")));
            }
            if set.insert((i, j)) {
                dominators[j].push(i);
            }
        }
        Ok(RankedPspp {
            label: label.into(),
            node_count,
            paths,
            index,
            by_source,
            suffix,
            base,
            decisive: set,
            dominators,
        })
    }

    /// Instance whose per-node orders are given as best-first lists.
    pub fn from_total_order(label: impl Into<String>, node_count: usize, lists: &[Vec<RoutePath>]) -> Result<Self> {
        let mut paths = Vec::new();
        let mut base = Vec::new();
        for list in lists {
            for (rank, p) in list.iter().enumerate() {
                paths.push(p.clone());
                base.push(rank as u64);
            }
        }
        RankedPspp::new(label, node_count, paths, base, [])
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn paths(&self) -> &[RoutePath] {
        &self.paths
    }

    pub fn path_index(&self, p: &RoutePath) -> Option<usize> {
        self.index.get(p).copied()
    }

    /// Pairwise winner at a common source: the mandated direction when one
    /// exists, the base rank otherwise (path order on equal base).
    pub fn beats(&self, a: usize, b: usize) -> bool {
        if self.decisive.contains(&(a, b)) {
            return true;
        }
        if self.decisive.contains(&(b, a)) {
            return false;
        }
        (self.base[a], &self.paths[a]) < (self.base[b], &self.paths[b])
    }

    /// The tournament as a partial stable paths instance: every pair of
    /// paths at a node is ordered by [`RankedPspp::beats`].
    pub fn to_pspp(&self, inst: &NetworkInstance) -> Result<PsppInstance> {
        let mut pairs = Vec::new();
        for list in &self.by_source {
            for (x, &a) in list.iter().enumerate() {
                for &b in &list[x + 1..] {
                    let (w, l) = if self.beats(a, b) { (a, b) } else { (b, a) };
                    pairs.push((self.paths[w].clone(), self.paths[l].clone()));
                }
            }
        }
        PsppInstance::new(inst, self.label.clone(), self.paths.iter().cloned(), pairs)
    }

    fn available(&self, p: usize, selected: &[Option<usize>]) -> bool {
        let path = &self.paths[p];
        if path.is_empty() {
            return true;
        }
        match self.suffix[p] {
            Some(s) => selected[path.nodes()[1]] == Some(s),
            None => false,
        }
    }

    /// The path `v` would select given the current selections.
    pub fn best_choice(&self, v: NodeId, selected: &[Option<usize>]) -> Option<usize> {
        let avail: Vec<usize> = self.by_source[v]
            .iter()
            .copied()
            .filter(|&p| self.available(p, selected))
            .collect();
        avail
            .iter()
            .copied()
            .filter(|&p| !self.dominators[p].iter().any(|d| avail.contains(d)))
            .min_by(|&a, &b| (self.base[a], &self.paths[a]).cmp(&(self.base[b], &self.paths[b])))
    }
}

/// Ranks paths by (weight, node sequence) and marks mandated pairs decisive.
pub fn weights_to_pspp(
    inst: &NetworkInstance,
    prefs: &MandatedPreferences,
    w: &[u32],
    prefix: &str,
    hop_bound: usize,
) -> Result<RankedPspp> {
    let pp = prefs
        .prefixes
        .get(prefix)
        .ok_or_else(|| Error::Validation(format!("unknown prefix `{prefix}`")))?;
    let paths = candidate_paths(inst, &pp.egresses, hop_bound);
    let weights: Vec<u64> = paths.iter().map(|p| known_path_weight(inst, p, w)).collect();
    let mut order: Vec<usize> = (0..paths.len()).collect();
    order.sort_by(|&a, &b| (weights[a], &paths[a]).cmp(&(weights[b], &paths[b])));
    let mut base = vec![0u64; paths.len()];
    for (pos, &i) in order.iter().enumerate() {
        base[i] = pos as u64;
    }
    RankedPspp::new(prefix, inst.node_count(), paths, base, pp.pairs.iter().cloned())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProtocolState {
    /// Selected path index per node.
    pub selected: Vec<Option<usize>>,
    pub steps: u64,
}

impl ProtocolState {
    pub fn initial(pspp: &RankedPspp) -> Self {
        ProtocolState {
            selected: vec![None; pspp.node_count()],
            steps: 0,
        }
    }

    pub fn is_fixed_point(&self, pspp: &RankedPspp) -> bool {
        (0..pspp.node_count()).all(|v| pspp.best_choice(v, &self.selected) == self.selected[v])
    }
}

/// Activates `node`; returns whether its selection changed.
pub fn step_in_place(state: &mut ProtocolState, node: NodeId, pspp: &RankedPspp) -> bool {
    state.steps += 1;
    let choice = pspp.best_choice(node, &state.selected);
    std::mem::replace(&mut state.selected[node], choice) != choice
}

pub fn step(state: &ProtocolState, node: NodeId, pspp: &RankedPspp) -> ProtocolState {
    let mut next = state.clone();
    step_in_place(&mut next, node, pspp);
    next
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Schedule {
    /// Nodes `0, 1, ..., n-1` repeated.
    RoundRobin,
    /// Consecutive blocks, each a fresh random permutation of all nodes.
    RandomPermutations { seed: u64 },
    /// The given sequence repeated. Fair only if it names every node.
    Fixed(Vec<NodeId>),
    /// `prefix` once, then `cycle` repeated.
    Lasso { prefix: Vec<NodeId>, cycle: Vec<NodeId> },
}

impl Schedule {
    /// Fairness window: every node activates within each aligned window of this length.
    pub fn window(&self, node_count: usize) -> usize {
        match self {
            Schedule::Fixed(seq) => seq.len().max(1),
            Schedule::Lasso { cycle, .. } => cycle.len().max(1),
            _ => node_count.max(1),
        }
    }

    pub fn activations(&self, node_count: usize) -> Box<dyn Iterator<Item = NodeId> + '_> {
        match self {
            Schedule::RoundRobin => Box::new((0..node_count).cycle()),
            Schedule::Fixed(seq) => Box::new(seq.iter().copied().cycle()),
            Schedule::Lasso { prefix, cycle } => Box::new(prefix.iter().copied().chain(cycle.iter().copied().cycle())),
            Schedule::RandomPermutations { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut block: Vec<NodeId> = (0..node_count).collect();
                Box::new(std::iter::repeat(()).flat_map(move |_| {
                    block.shuffle(&mut rng);
                    block.clone()
                }))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimOutcome {
    Converged { assignment: Vec<Option<usize>>, steps: u64 },
    /// Selection states from the first occurrence of the repeated state up
    /// to (excluding) its recurrence.
    Oscillating { cycle: Vec<Vec<Option<usize>>>, steps: u64 },
    Undetermined { steps: u64 },
}

impl SimOutcome {
    pub fn is_oscillating(&self) -> bool {
        matches!(self, SimOutcome::Oscillating { .. })
    }

    pub fn is_converged(&self) -> bool {
        matches!(self, SimOutcome::Converged { .. })
    }
}

/// Default step budget: `10 * window * |paths|`.
pub fn default_max_steps(pspp: &RankedPspp, schedule: &Schedule) -> u64 {
    10 * schedule.window(pspp.node_count()) as u64 * pspp.paths().len().max(1) as u64
}

pub fn simulate(pspp: &RankedPspp, schedule: &Schedule, max_steps: u64) -> SimOutcome {
    simulate_from(pspp, ProtocolState::initial(pspp), schedule, max_steps, None)
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    step: u64,
    node: NodeId,
    changed: bool,
    selections: Vec<Option<&'a str>>,
}

/// Runs from `state`. A global selection state seen before that recurs
/// after a change is reported as an oscillation; the history only records
/// states reached by a change. When `trace` is given, one JSON record per
/// activation is written to it.
pub fn simulate_from(
    pspp: &RankedPspp,
    mut state: ProtocolState,
    schedule: &Schedule,
    max_steps: u64,
    mut trace: Option<&mut dyn Write>,
) -> SimOutcome {
    if max_steps == 0 {
        return SimOutcome::Undetermined { steps: 0 };
    }
    let names: Vec<String> = pspp.paths().iter().map(|p| p.to_string()).collect();
    let mut seen: HashMap<Vec<Option<usize>>, usize> = HashMap::new();
    let mut history: Vec<Vec<Option<usize>>> = vec![state.selected.clone()];
    seen.insert(state.selected.clone(), 0);
    for node in schedule.activations(pspp.node_count()) {
        if state.steps >= max_steps {
            break;
        }
        let changed = step_in_place(&mut state, node, pspp);
        if let Some(out) = trace.as_mut() {
            let rec = TraceRecord {
                step: state.steps,
                node,
                changed,
                selections: state.selected.iter().map(|s| s.map(|i| names[i].as_str())).collect(),
            };
            let _ = writeln!(out, "{}", serde_json::to_string(&rec).expect("trace record serializes"));
        }
        if changed {
            if let Some(&first) = seen.get(&state.selected) {
                return SimOutcome::Oscillating {
                    cycle: history[first..].to_vec(),
                    steps: state.steps,
                };
            }
            seen.insert(state.selected.clone(), history.len());
            history.push(state.selected.clone());
        } else if state.is_fixed_point(pspp) {
            return SimOutcome::Converged {
                assignment: state.selected,
                steps: state.steps,
            };
        }
    }
    SimOutcome::Undetermined { steps: state.steps }
}

/// Runs `schedules` random-permutation schedules seeded `seed, seed+1, ...`
/// and reports whether any of them oscillates.
pub fn any_oscillation(pspp: &RankedPspp, schedules: u64, seed: u64) -> bool {
    (0..schedules).any(|k| {
        let sched = Schedule::RandomPermutations { seed: seed.wrapping_add(k) };
        let max = default_max_steps(pspp, &sched);
        simulate(pspp, &sched, max).is_oscillating()
    })
}

/// Exhaustive search of the activation graph reachable from the empty
/// state for a fair oscillation: a strongly connected set of states that
/// contains a selection change and in which every node has at least one
/// activation that stays inside the set. Returns a lasso schedule that
/// drives [`simulate`] into the oscillation, or `None` when no fair
/// oscillation exists. Gives up (returning `Err`) beyond `max_states`.
pub fn find_fair_oscillation(pspp: &RankedPspp, max_states: usize) -> std::result::Result<Option<Schedule>, usize> {
    let n = pspp.node_count();
    let start = vec![None; n];
    let mut ids: HashMap<Vec<Option<usize>>, usize> = HashMap::new();
    let mut states = vec![start.clone()];
    ids.insert(start, 0);
    // succ[s][v] = state reached by activating v in s
    let mut succ: Vec<Vec<usize>> = Vec::new();
    let mut k = 0;
    while k < states.len() {
        let mut row = Vec::with_capacity(n);
        for v in 0..n {
            let mut next = states[k].clone();
            next[v] = pspp.best_choice(v, &next);
            let id = match ids.get(&next) {
                Some(&id) => id,
                None => {
                    if states.len() >= max_states {
                        return Err(states.len());
                    }
                    ids.insert(next.clone(), states.len());
                    states.push(next);
                    states.len() - 1
                }
            };
            row.push(id);
        }
        succ.push(row);
        k += 1;
    }
    let comp = strongly_connected(&succ);
    let comps = comp.iter().copied().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); comps];
    for (s, &c) in comp.iter().enumerate() {
        members[c].push(s);
    }
    for group in &members {
        let c = comp[group[0]];
        let changes = group.iter().any(|&s| succ[s].iter().any(|&t| t != s && comp[t] == c));
        if !changes {
            continue;
        }
        // for each node, a member state where activating it stays in the group
        let mut stay = Vec::with_capacity(n);
        for v in 0..n {
            match group.iter().find(|&&s| comp[succ[s][v]] == c) {
                Some(&s) => stay.push(s),
                None => break,
            }
        }
        if stay.len() < n {
            continue;
        }
        let change_state = *group
            .iter()
            .find(|&&s| succ[s].iter().any(|&t| t != s && comp[t] == c))
            .expect("checked above");
        let change_node = (0..n)
            .find(|&v| succ[change_state][v] != change_state && comp[succ[change_state][v]] == c)
            .expect("checked above");
        let entry = group[0];
        let prefix = walk(&succ, 0, entry, |_| true).expect("every state is reachable from the start");
        let inside = |t: usize| comp[t] == c;
        let mut cycle = Vec::new();
        let mut at = entry;
        for (v, &s) in stay.iter().enumerate() {
            cycle.extend(walk(&succ, at, s, inside).expect("strongly connected"));
            cycle.push(v);
            at = succ[s][v];
        }
        cycle.extend(walk(&succ, at, change_state, inside).expect("strongly connected"));
        cycle.push(change_node);
        at = succ[change_state][change_node];
        cycle.extend(walk(&succ, at, entry, inside).expect("strongly connected"));
        return Ok(Some(Schedule::Lasso { prefix, cycle }));
    }
    Ok(None)
}

/// Shortest activation sequence from `from` to `to` through states accepted by `keep`.
fn walk(succ: &[Vec<usize>], from: usize, to: usize, keep: impl Fn(usize) -> bool) -> Option<Vec<NodeId>> {
    let mut prev: HashMap<usize, (usize, NodeId)> = HashMap::new();
    let mut queue = std::collections::VecDeque::from([from]);
    let mut seen = HashSet::from([from]);
    while let Some(s) = queue.pop_front() {
        if s == to {
            let mut seq = Vec::new();
            let mut at = s;
            while at != from {
                let (p, v) = prev[&at];
                seq.push(v);
                at = p;
            }
            seq.reverse();
            return Some(seq);
        }
        for (v, &t) in succ[s].iter().enumerate() {
            if keep(t) && seen.insert(t) {
                prev.insert(t, (s, v));
                queue.push_back(t);
            }
        }
    }
    None
}

/// Iterative Tarjan; returns a component id per vertex.
fn strongly_connected(succ: &[Vec<usize>]) -> Vec<usize> {
    let n = succ.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut comp = vec![usize::MAX; n];
    let mut stack = Vec::new();
    let mut next_index = 0;
    let mut next_comp = 0;
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut i)) = call.last_mut() {
            if *i < succ[v].len() {
                let w = succ[v][*i];
                *i += 1;
                if index[w] == usize::MAX {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(p, _)) = call.last() {
                    low[p] = low[p].min(low[v]);
                }
                if low[v] == index[v] {
                    loop {
                        let w = stack.pop().expect("non-empty");
                        on_stack[w] = false;
                        comp[w] = next_comp;
                        if w == v {
                            break;
                        }
                    }
                    next_comp += 1;
                }
            }
        }
    }
    comp
}

/// The classic three-node instance with a cyclic preference wheel around
/// destination 0: node `i` prefers going through its clockwise neighbor to
/// going direct. Needs a graph where 0 is joined to 1, 2, 3 and the three
/// form a ring.
pub fn bad_gadget() -> Result<RankedPspp> {
    let mut lists = vec![vec![RoutePath::empty(0)]];
    for i in 1..=3usize {
        let next = i % 3 + 1;
        lists.push(vec![RoutePath::new(vec![i, next, 0]), RoutePath::new(vec![i, 0])]);
    }
    RankedPspp::from_total_order("bad-gadget", 4, &lists)
}

/// Distinct paths selected at a fixed point, for reporting.
pub fn selected_paths(pspp: &RankedPspp, assignment: &[Option<usize>]) -> BTreeSet<RoutePath> {
    assignment.iter().flatten().map(|&i| pspp.paths()[i].clone()).collect()
}
