//! Partial stable paths instances, their path digraphs, safety checking and
//! rank witnesses.
//!
//! Preference pairs are stored as given: `(p, q)` means `p` is at least as
//! good as `q` at their common source. A pair produces a strict preference
//! arc unless the reverse pair is also present, which expresses equal
//! preference. Arcs always run from the better (or shorter) path to the worse
//! (or longer) one, so a rank witness increases along every arc.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};

use crate::bgp_prefs::MandatedPreferences;
use crate::error::{Error, Result};
use crate::netmodel::{LinkId, NetworkInstance, NodeId};
use crate::paths::{known_path_weight, RoutePath};

/// Identifies the graph an instance was built over.
pub fn graph_key(inst: &NetworkInstance) -> u64 {
    let mut h = DefaultHasher::new();
    inst.node_names().hash(&mut h);
    for l in inst.links() {
        (l.a, l.b).hash(&mut h);
    }
    h.finish()
}

#[derive(Debug, Clone)]
pub struct PsppInstance {
    label: String,
    graph_key: u64,
    paths: Vec<RoutePath>,
    index: HashMap<RoutePath, usize>,
    prefs: BTreeSet<(usize, usize)>,
}

impl PsppInstance {
    /// Builds an instance; paths are deduplicated and sorted.
    pub fn new(
        inst: &NetworkInstance,
        label: impl Into<String>,
        paths: impl IntoIterator<Item = RoutePath>,
        pairs: impl IntoIterator<Item = (RoutePath, RoutePath)>,
    ) -> Result<Self> {
        let set: BTreeSet<RoutePath> = paths.into_iter().collect();
        let paths: Vec<RoutePath> = set.into_iter().collect();
        if let Some(p) = paths.iter().find(|p| !p.is_valid(inst)) {
            return Err(Error::InvalidPath(p.to_string()));
        }
        let index: HashMap<RoutePath, usize> = paths.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        let mut prefs = BTreeSet::new();
        for (p, q) in pairs {
            let (Some(&i), Some(&j)) = (index.get(&p), index.get(&q)) else {
                return Err(Error::Validation(format!("preference {p} / {q} uses a path that is not permitted")));
            };
            if p.source() != q.source() {
                return Err(Error::Validation(format!("preference {p} / {q} crosses sources")));
            }
            if i != j {
                prefs.insert((i, j));
            }
        }
        Ok(PsppInstance {
            label: label.into(),
            graph_key: graph_key(inst),
            paths,
            index,
            prefs,
        })
    }

    /// The instance restricted to one prefix's closure and mandated pairs.
    pub fn restricted(inst: &NetworkInstance, prefs: &MandatedPreferences, prefix: &str) -> Result<Self> {
        let closed;
        let prefs = if prefs.is_closed() {
            prefs
        } else {
            closed = prefs.close_suffixes();
            &closed
        };
        let pp = prefs
            .prefixes
            .get(prefix)
            .ok_or_else(|| Error::Validation(format!("unknown prefix `{prefix}`")))?;
        PsppInstance::new(inst, prefix, pp.closure.iter().cloned(), pp.pairs.iter().cloned())
    }

    /// One restricted instance per prefix.
    pub fn restricted_all(inst: &NetworkInstance, prefs: &MandatedPreferences) -> Result<Vec<Self>> {
        let closed = prefs.close_suffixes();
        closed
            .prefixes
            .keys()
            .map(|name| PsppInstance::restricted(inst, &closed, name))
            .collect()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn paths(&self) -> &[RoutePath] {
        &self.paths
    }

    pub fn index_of(&self, p: &RoutePath) -> Option<usize> {
        self.index.get(p).copied()
    }

    /// Stored preference pairs as `(better, worse)` path indices.
    pub fn pairs(&self) -> &BTreeSet<(usize, usize)> {
        &self.prefs
    }

    /// Reflexive-transitive closure of the preference relation as index pairs.
    pub fn order_closure(&self) -> BTreeSet<(usize, usize)> {
        let mut succ: HashMap<usize, Vec<usize>> = HashMap::new();
        for &(a, b) in &self.prefs {
            succ.entry(a).or_default().push(b);
        }
        let mut out = BTreeSet::new();
        for start in 0..self.paths.len() {
            let mut seen = BTreeSet::from([start]);
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in succ.get(&u).into_iter().flatten() {
                    if seen.insert(v) {
                        queue.push_back(v);
                    }
                }
            }
            out.extend(seen.into_iter().map(|v| (start, v)));
        }
        out
    }

    /// Removes every path for which `drop` holds, with its preferences.
    pub fn without(&self, drop: impl Fn(&RoutePath) -> bool) -> PsppInstance {
        let keep: Vec<bool> = self.paths.iter().map(|p| !drop(p)).collect();
        let paths: Vec<RoutePath> = self.paths.iter().zip(&keep).filter(|(_, &k)| k).map(|(p, _)| p.clone()).collect();
        let index: HashMap<RoutePath, usize> = paths.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        let prefs = self
            .prefs
            .iter()
            .filter(|&&(a, b)| keep[a] && keep[b])
            .map(|&(a, b)| (index[&self.paths[a]], index[&self.paths[b]]))
            .collect();
        PsppInstance {
            label: self.label.clone(),
            graph_key: self.graph_key,
            paths,
            index,
            prefs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ArcKind {
    /// The source path is a suffix of the target path.
    Suffix,
    /// The source path is strictly preferred to the target path.
    Preference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Arc {
    pub from: usize,
    pub to: usize,
    pub kind: ArcKind,
}

#[derive(Debug, Clone)]
pub struct PathDigraph {
    pub label: String,
    pub paths: Vec<RoutePath>,
    pub arcs: Vec<Arc>,
    out: Vec<Vec<usize>>,
}

impl PathDigraph {
    /// Indices into `arcs` leaving vertex `v`, ordered by target.
    pub fn out_arcs(&self, v: usize) -> &[usize] {
        &self.out[v]
    }

    pub fn vertex_count(&self) -> usize {
        self.paths.len()
    }

    /// Graphviz rendering with path names as vertices.
    pub fn to_dot(&self, inst: &NetworkInstance) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "digraph \"{}\" {{", self.label.replace('"', "'"));
        for (i, p) in self.paths.iter().enumerate() {
            let _ = writeln!(s, "  p{i} [label=\"{}\"];", p.display(inst));
        }
        for a in &self.arcs {
            let style = match a.kind {
                ArcKind::Suffix => "label=\"suffix\"",
                ArcKind::Preference => "label=\"pref\", style=dashed",
            };
            let _ = writeln!(s, "  p{} -> p{} [{style}];", a.from, a.to);
        }
        s.push_str("}\n");
        s
    }
}

pub fn build_path_digraph(pspp: &PsppInstance) -> PathDigraph {
    let mut arcs = BTreeSet::new();
    for (i, p) in pspp.paths.iter().enumerate() {
        // nearest permitted proper suffix keeps reachability when the
        // permitted set is not suffix-closed
        if let Some(s) = p.suffixes().find_map(|s| pspp.index.get(&s).copied()) {
            arcs.insert(Arc {
                from: s,
                to: i,
                kind: ArcKind::Suffix,
            });
        }
    }
    for &(a, b) in &pspp.prefs {
        if !pspp.prefs.contains(&(b, a)) {
            arcs.insert(Arc {
                from: a,
                to: b,
                kind: ArcKind::Preference,
            });
        }
    }
    let arcs: Vec<Arc> = arcs.into_iter().collect();
    let mut out = vec![Vec::new(); pspp.paths.len()];
    for (k, a) in arcs.iter().enumerate() {
        out[a.from].push(k);
    }
    for o in &mut out {
        o.sort_by_key(|&k| (arcs[k].to, arcs[k].kind));
    }
    PathDigraph {
        label: pspp.label.clone(),
        paths: pspp.paths.clone(),
        arcs,
        out,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Safety {
    /// Acyclic; ranks increase along every arc.
    Safe { ranks: Vec<u64> },
    /// A directed cycle, as consecutive arcs.
    Unsafe { cycle: Vec<Arc> },
}

impl Safety {
    pub fn is_safe(&self) -> bool {
        matches!(self, Safety::Safe { .. })
    }
}

/// Depth-first cycle search with an explicit stack. The witness is the
/// first back edge found when vertices and arcs are visited in index order.
pub fn find_cycle(dg: &PathDigraph) -> Option<Vec<Arc>> {
    const WHITE: u8 = 0;
    const GREY: u8 = 1;
    const BLACK: u8 = 2;
    let n = dg.vertex_count();
    let mut color = vec![WHITE; n];
    // arc used to enter each vertex
    let mut via: Vec<Option<usize>> = vec![None; n];
    for root in 0..n {
        if color[root] != WHITE {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        color[root] = GREY;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if let Some(&k) = dg.out[v].get(*next) {
                *next += 1;
                let w = dg.arcs[k].to;
                match color[w] {
                    WHITE => {
                        color[w] = GREY;
                        via[w] = Some(k);
                        stack.push((w, 0));
                    }
                    GREY => {
                        let mut cycle = vec![dg.arcs[k]];
                        let mut u = v;
                        while u != w {
                            let a = via[u].expect("grey vertices below the root were entered by an arc");
                            cycle.push(dg.arcs[a]);
                            u = dg.arcs[a].from;
                        }
                        cycle.reverse();
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                color[v] = BLACK;
                stack.pop();
            }
        }
    }
    None
}

pub fn is_safe(dg: &PathDigraph) -> Safety {
    match find_cycle(dg) {
        Some(cycle) => Safety::Unsafe { cycle },
        None => Safety::Safe {
            ranks: rank_witness(dg).expect("acyclic"),
        },
    }
}

/// Longest-path layering: vertices without incoming arcs get 0, every other
/// vertex one more than its highest predecessor.
pub fn rank_witness(dg: &PathDigraph) -> Result<Vec<u64>> {
    let n = dg.vertex_count();
    let mut indeg = vec![0usize; n];
    for a in &dg.arcs {
        indeg[a.to] += 1;
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut rank = vec![0u64; n];
    let mut done = 0;
    while let Some(v) = queue.pop_front() {
        done += 1;
        for &k in &dg.out[v] {
            let w = dg.arcs[k].to;
            rank[w] = rank[w].max(rank[v] + 1);
            indeg[w] -= 1;
            if indeg[w] == 0 {
                queue.push_back(w);
            }
        }
    }
    if done < n {
        return Err(Error::Cyclic);
    }
    Ok(rank)
}

/// True when `ranks` strictly increases along every arc.
pub fn validate_witness(dg: &PathDigraph, ranks: &[u64]) -> bool {
    ranks.len() == dg.vertex_count() && dg.arcs.iter().all(|a| ranks[a.to] > ranks[a.from])
}

/// True when `p` refines `q`: same graph, label and permitted paths, and
/// every ordered pair of `q` is ordered the same way in `p`.
pub fn check_refinement(p: &PsppInstance, q: &PsppInstance) -> bool {
    if p.graph_key != q.graph_key || p.label != q.label || p.paths != q.paths {
        return false;
    }
    let pc = p.order_closure();
    q.order_closure().is_subset(&pc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Removal {
    Node(NodeId),
    Link(LinkId),
}

/// Exhaustive single-removal robustness check. Returns every node or link
/// whose removal leaves an unsafe instance; empty means robust at depth one.
pub fn robustness_check(inst: &NetworkInstance, pspp: &PsppInstance) -> Vec<Removal> {
    let mut failures = Vec::new();
    let mut check = |sub: PsppInstance, r: Removal| {
        if find_cycle(&build_path_digraph(&sub)).is_some() {
            failures.push(r);
        }
    };
    for v in 0..inst.node_count() {
        check(pspp.without(|p| p.contains(v)), Removal::Node(v));
    }
    for l in 0..inst.link_count() {
        check(pspp.without(|p| p.links(inst).contains(&l)), Removal::Link(l));
    }
    failures
}

/// Safety of every prefix's restricted digraph. Returns the first unsafe
/// prefix with its cycle, if any.
pub fn check_preferences(inst: &NetworkInstance, prefs: &MandatedPreferences) -> Result<Option<(String, Vec<Arc>, PathDigraph)>> {
    for pspp in PsppInstance::restricted_all(inst, prefs)? {
        let dg = build_path_digraph(&pspp);
        if let Some(cycle) = find_cycle(&dg) {
            return Ok(Some((pspp.label.clone(), cycle, dg)));
        }
    }
    Ok(None)
}

/// The restricted instance of `prefix` ordered by `w`: mandated pairs, plus
/// every other same-source pair of closure paths whose weights differ, the
/// lighter path first. Mandated pairs win over the weight order.
pub fn weight_restricted(inst: &NetworkInstance, prefs: &MandatedPreferences, prefix: &str, w: &[u32]) -> Result<PsppInstance> {
    let closed = prefs.close_suffixes();
    let pp = closed
        .prefixes
        .get(prefix)
        .ok_or_else(|| Error::Validation(format!("unknown prefix `{prefix}`")))?;
    let paths: Vec<&RoutePath> = pp.closure.iter().collect();
    let weight = |p: &RoutePath| known_path_weight(inst, p, w);
    let mut pairs: BTreeSet<(RoutePath, RoutePath)> = pp.pairs.clone();
    for p in &paths {
        for q in &paths {
            if p.source() != q.source() || p == q || pp.pairs.contains(&((*q).clone(), (*p).clone())) {
                continue;
            }
            if weight(p) < weight(q) {
                pairs.insert(((*p).clone(), (*q).clone()));
            }
        }
    }
    PsppInstance::new(inst, prefix, pp.closure.iter().cloned(), pairs)
}

/// Safety of every prefix's weight-ordered restricted digraph.
pub fn weight_safety(inst: &NetworkInstance, prefs: &MandatedPreferences, w: &[u32]) -> Result<Vec<(String, Safety)>> {
    prefs
        .prefixes
        .keys()
        .map(|name| Ok((name.clone(), is_safe(&build_path_digraph(&weight_restricted(inst, prefs, name, w)?)))))
        .collect()
}
