//! Route paths, path weights, ECMP shortest-path DAGs and bounded path
//! enumeration.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;

use crate::error::{Error, Result};
use crate::netmodel::{LinkId, NetworkInstance, NodeId};

/// A simple path written as its node sequence `[v, ..., t]`.
///
/// The last node is the path's target (a destination or egress router). A
/// single-node path `[t]` is the empty path at `t`. Ordering is
/// lexicographic on the node sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RoutePath {
    nodes: Vec<NodeId>,
}

impl RoutePath {
    /// Wraps a node sequence without checking it against an instance.
    pub fn new(nodes: Vec<NodeId>) -> Self {
        assert!(!nodes.is_empty(), "a route path has at least its target node");
        RoutePath { nodes }
    }

    /// The empty path at `target`.
    pub fn empty(target: NodeId) -> Self {
        RoutePath { nodes: vec![target] }
    }

    /// Checks that the sequence is a simple path of `inst`.
    pub fn checked(inst: &NetworkInstance, nodes: Vec<NodeId>) -> Result<Self> {
        let p = RoutePath::new(nodes);
        if !p.is_valid(inst) {
            return Err(Error::InvalidPath(p.display(inst)));
        }
        Ok(p)
    }

    pub fn is_valid(&self, inst: &NetworkInstance) -> bool {
        let n = inst.node_count();
        if self.nodes.iter().any(|&v| v >= n) {
            return false;
        }
        let mut seen = vec![false; n];
        for &v in &self.nodes {
            if std::mem::replace(&mut seen[v], true) {
                return false;
            }
        }
        self.nodes.windows(2).all(|w| inst.link_between(w[0], w[1]).is_some())
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn source(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn target(&self) -> NodeId {
        *self.nodes.last().expect("non-empty")
    }

    pub fn hops(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1
    }

    /// The path with its first node removed, or `None` for an empty path.
    pub fn immediate_suffix(&self) -> Option<RoutePath> {
        (!self.is_empty()).then(|| RoutePath {
            nodes: self.nodes[1..].to_vec(),
        })
    }

    /// All proper suffixes, longest first, ending with the empty path.
    pub fn suffixes(&self) -> impl Iterator<Item = RoutePath> + '_ {
        (1..self.nodes.len()).map(move |i| RoutePath {
            nodes: self.nodes[i..].to_vec(),
        })
    }

    pub fn is_suffix_of(&self, other: &RoutePath) -> bool {
        other.nodes.len() >= self.nodes.len() && other.nodes.ends_with(&self.nodes)
    }

    pub fn contains(&self, v: NodeId) -> bool {
        self.nodes.contains(&v)
    }

    /// The path `[v] ++ self`.
    pub fn extend(&self, v: NodeId) -> RoutePath {
        let mut nodes = Vec::with_capacity(self.nodes.len() + 1);
        nodes.push(v);
        nodes.extend_from_slice(&self.nodes);
        RoutePath { nodes }
    }

    /// Links traversed, from the source towards the target.
    pub fn links(&self, inst: &NetworkInstance) -> Vec<LinkId> {
        self.nodes
            .windows(2)
            .map(|w| inst.link_between(w[0], w[1]).expect("consecutive nodes are adjacent"))
            .collect()
    }

    /// The first link of the path, if any.
    pub fn first_link(&self, inst: &NetworkInstance) -> Option<LinkId> {
        (!self.is_empty()).then(|| {
            inst.link_between(self.nodes[0], self.nodes[1])
                .expect("consecutive nodes are adjacent")
        })
    }

    pub fn display(&self, inst: &NetworkInstance) -> String {
        let names: Vec<&str> = self.nodes.iter().map(|&v| inst.node_name(v)).collect();
        format!("[{}]", names.join(","))
    }

    /// Parses a space separated list of node names.
    pub fn parse(inst: &NetworkInstance, text: &str) -> Result<RoutePath> {
        let nodes = text
            .split_whitespace()
            .map(|name| inst.node_id(name))
            .collect::<Result<Vec<_>>>()?;
        if nodes.is_empty() {
            return Err(Error::Parse("empty path".into()));
        }
        RoutePath::checked(inst, nodes)
    }
}

impl fmt::Display for RoutePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.nodes.iter().map(|v| v.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// Something that can report a link's weight, possibly unknown.
pub trait WeightSource {
    fn weight_of(&self, link: LinkId) -> Option<u32>;
}

impl WeightSource for [u32] {
    fn weight_of(&self, link: LinkId) -> Option<u32> {
        Some(self[link])
    }
}

impl WeightSource for Vec<u32> {
    fn weight_of(&self, link: LinkId) -> Option<u32> {
        Some(self[link])
    }
}

impl WeightSource for [Option<u32>] {
    fn weight_of(&self, link: LinkId) -> Option<u32> {
        self[link]
    }
}

impl WeightSource for Vec<Option<u32>> {
    fn weight_of(&self, link: LinkId) -> Option<u32> {
        self[link]
    }
}

/// Sum of link weights along `p`; zero for an empty path.
pub fn path_weight<W: WeightSource + ?Sized>(inst: &NetworkInstance, p: &RoutePath, w: &W) -> Result<u64> {
    let mut total = 0u64;
    for l in p.links(inst) {
        let wl = w.weight_of(l).ok_or_else(|| Error::UnknownWeight(inst.link_label(l)))?;
        total += u64::from(wl);
    }
    Ok(total)
}

/// Path weight for a fully known assignment.
pub fn known_path_weight(inst: &NetworkInstance, p: &RoutePath, w: &[u32]) -> u64 {
    p.nodes
        .windows(2)
        .map(|s| u64::from(w[inst.link_between(s[0], s[1]).expect("adjacent")]))
        .sum()
}

/// Shortest-path structure towards one destination.
#[derive(Debug, Clone)]
pub struct EcmpDag {
    pub dest: NodeId,
    /// Distance to `dest`; `u64::MAX` when unreachable.
    pub dist: Vec<u64>,
    /// Per node, the neighbors lying on some shortest path, with the link used.
    pub next_hops: Vec<Vec<(NodeId, LinkId)>>,
    /// Reachable nodes by decreasing distance, so every node precedes its next hops.
    pub order: Vec<NodeId>,
}

impl EcmpDag {
    pub fn distance(&self, v: NodeId) -> Option<u64> {
        (self.dist[v] != u64::MAX).then_some(self.dist[v])
    }
}

fn require_positive(inst: &NetworkInstance, w: &[u32]) -> Result<()> {
    if w.len() != inst.link_count() {
        return Err(Error::Validation(format!(
            "weight vector has {} entries for {} links",
            w.len(),
            inst.link_count()
        )));
    }
    match w.iter().position(|&x| x == 0) {
        Some(l) => Err(Error::ZeroWeight(inst.link_label(l))),
        None => Ok(()),
    }
}

/// Dijkstra distances from every node to `d`; unreachable nodes get `u64::MAX`.
pub fn distances_to(inst: &NetworkInstance, d: NodeId, w: &[u32]) -> Vec<u64> {
    let mut dist = vec![u64::MAX; inst.node_count()];
    let mut heap = BinaryHeap::new();
    dist[d] = 0;
    heap.push(Reverse((0u64, d)));
    while let Some(Reverse((du, u))) = heap.pop() {
        if du > dist[u] {
            continue;
        }
        for &(v, l) in inst.neighbors(u) {
            let nd = du + u64::from(w[l]);
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse((nd, v)));
            }
        }
    }
    dist
}

/// Builds the ECMP DAG towards `d`. Zero-weight links are rejected.
pub fn build_ecmp_dag(inst: &NetworkInstance, d: NodeId, w: &[u32]) -> Result<EcmpDag> {
    if d >= inst.node_count() {
        return Err(Error::UnknownNode(d.to_string()));
    }
    require_positive(inst, w)?;
    let dist = distances_to(inst, d, w);
    let mut next_hops = vec![Vec::new(); inst.node_count()];
    for v in 0..inst.node_count() {
        if v == d || dist[v] == u64::MAX {
            continue;
        }
        for &(u, l) in inst.neighbors(v) {
            if dist[u] != u64::MAX && dist[u] + u64::from(w[l]) == dist[v] {
                next_hops[v].push((u, l));
            }
        }
    }
    let mut order: Vec<NodeId> = (0..inst.node_count()).filter(|&v| dist[v] != u64::MAX).collect();
    order.sort_by_key(|&v| (Reverse(dist[v]), v));
    Ok(EcmpDag {
        dest: d,
        dist,
        next_hops,
        order,
    })
}

/// All simple paths ending at `d` with at most `hop_bound` hops, including
/// the empty path, in lexicographic order.
pub fn enumerate_paths(inst: &NetworkInstance, d: NodeId, hop_bound: usize) -> Vec<RoutePath> {
    enumerate_paths_filtered(inst, d, hop_bound, |_| true)
}

/// Like [`enumerate_paths`], but a path may only pass through (or start at)
/// nodes other than `d` for which `allowed` holds.
pub fn enumerate_paths_filtered(
    inst: &NetworkInstance,
    d: NodeId,
    hop_bound: usize,
    allowed: impl Fn(NodeId) -> bool,
) -> Vec<RoutePath> {
    let mut out = vec![RoutePath::empty(d)];
    let mut on_path = vec![false; inst.node_count()];
    on_path[d] = true;
    // reversed node sequence: d first
    let mut stack = vec![d];
    grow(inst, hop_bound, &allowed, &mut stack, &mut on_path, &mut out);
    out.sort();
    out
}

fn grow(
    inst: &NetworkInstance,
    hop_bound: usize,
    allowed: &impl Fn(NodeId) -> bool,
    stack: &mut Vec<NodeId>,
    on_path: &mut [bool],
    out: &mut Vec<RoutePath>,
) {
    if stack.len() > hop_bound {
        return;
    }
    let head = *stack.last().expect("non-empty");
    for &(v, _) in inst.neighbors(head) {
        if on_path[v] || !allowed(v) {
            continue;
        }
        on_path[v] = true;
        stack.push(v);
        out.push(RoutePath::new(stack.iter().rev().copied().collect()));
        grow(inst, hop_bound, allowed, stack, on_path, out);
        stack.pop();
        on_path[v] = false;
    }
}

/// Simple paths from `v` to `d` with at most `hop_bound` hops, lexicographic.
pub fn paths_between(inst: &NetworkInstance, v: NodeId, d: NodeId, hop_bound: usize) -> Vec<RoutePath> {
    enumerate_paths(inst, d, hop_bound)
        .into_iter()
        .filter(|p| p.source() == v)
        .collect()
}
