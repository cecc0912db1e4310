//! Mandated path preferences and their derivation from external routes.
//!
//! A prefix is reachable through one or more egress routers. Paths towards a
//! prefix end at an egress; the empty path `[e]` at each egress anchors the
//! suffix chains. MED is decisive only between routes learned from the same
//! neighbor AS, so a mandated pair is emitted exactly when two candidate paths
//! at a router lead to egresses whose routes share the neighbor AS and differ
//! in MED.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::netmodel::{NetworkInstance, NodeId};
use crate::paths::{enumerate_paths_filtered, RoutePath};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalRoute {
    pub prefix: String,
    pub egress: NodeId,
    pub neighbor_as: u32,
    pub med: u32,
}

/// Preferences for one prefix.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrefixPrefs {
    /// Egress routers of the prefix; each anchors an empty path.
    pub egresses: BTreeSet<NodeId>,
    /// Mandated pairs `(better, worse)`; both paths start at the same router.
    pub pairs: BTreeSet<(RoutePath, RoutePath)>,
    /// Paths of the pairs, all their suffixes and the egress anchors.
    /// Empty until [`MandatedPreferences::close_suffixes`] runs.
    pub closure: BTreeSet<RoutePath>,
}

impl PrefixPrefs {
    pub fn anchors(&self) -> impl Iterator<Item = RoutePath> + '_ {
        self.egresses.iter().map(|&e| RoutePath::empty(e))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MandatedPreferences {
    pub prefixes: BTreeMap<String, PrefixPrefs>,
    closed: bool,
}

impl MandatedPreferences {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a prefix with its egress routers.
    pub fn add_prefix(&mut self, prefix: &str, egresses: impl IntoIterator<Item = NodeId>) {
        let entry = self.prefixes.entry(prefix.to_string()).or_default();
        entry.egresses.extend(egresses);
        self.closed = false;
    }

    /// Adds `better` preferred to `worse`. The paths must share a source and
    /// differ; their targets become egresses of the prefix.
    pub fn add_pair(&mut self, prefix: &str, better: RoutePath, worse: RoutePath) -> Result<()> {
        if better.source() != worse.source() {
            return Err(Error::Validation(format!(
                "mandated pair {better} / {worse} does not share a source"
            )));
        }
        if better == worse {
            return Err(Error::Validation(format!("path {better} preferred to itself")));
        }
        let entry = self.prefixes.entry(prefix.to_string()).or_default();
        if entry.pairs.contains(&(worse.clone(), better.clone())) {
            return Err(Error::Validation(format!(
                "contradictory pair {better} / {worse} for prefix {prefix}"
            )));
        }
        entry.egresses.insert(better.target());
        entry.egresses.insert(worse.target());
        entry.pairs.insert((better, worse));
        self.closed = false;
        Ok(())
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Returns a copy whose closures hold every path of every pair, all of
    /// their suffixes and the anchors.
    pub fn close_suffixes(&self) -> MandatedPreferences {
        let mut out = self.clone();
        for pp in out.prefixes.values_mut() {
            let mut closure: BTreeSet<RoutePath> = pp.anchors().collect();
            for (p, q) in &pp.pairs {
                for path in [p, q] {
                    if closure.insert(path.clone()) {
                        closure.extend(path.suffixes());
                    }
                }
            }
            pp.closure = closure;
        }
        out.closed = true;
        out
    }

    pub fn pair_count(&self) -> usize {
        self.prefixes.values().map(|p| p.pairs.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.pair_count() == 0
    }

    /// All pairs with their prefix, in deterministic order.
    pub fn iter_pairs(&self) -> impl Iterator<Item = (&str, &RoutePath, &RoutePath)> {
        self.prefixes
            .iter()
            .flat_map(|(name, pp)| pp.pairs.iter().map(move |(p, q)| (name.as_str(), p, q)))
    }

    /// Checks that all paths are simple paths of `inst`.
    pub fn validate(&self, inst: &NetworkInstance) -> Result<()> {
        for (_, p, q) in self.iter_pairs() {
            for path in [p, q] {
                if !path.is_valid(inst) {
                    return Err(Error::InvalidPath(path.to_string()));
                }
            }
        }
        for pp in self.prefixes.values() {
            if let Some(&e) = pp.egresses.iter().find(|&&e| e >= inst.node_count()) {
                return Err(Error::UnknownNode(e.to_string()));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self, inst: &NetworkInstance) -> String {
        let mut out = String::from("prefix,p_nodes,q_nodes\n");
        let names = |p: &RoutePath| {
            p.nodes()
                .iter()
                .map(|&v| inst.node_name(v))
                .collect::<Vec<_>>()
                .join(" ")
        };
        for (prefix, p, q) in self.iter_pairs() {
            out.push_str(&format!("{prefix},{},{}\n", names(p), names(q)));
        }
        out
    }
}

/// Candidate paths of a prefix: simple paths to one of its egresses whose
/// nodes other than the last are not egresses of the prefix. An egress
/// router therefore only holds its own empty path, matching the rule that
/// externally learned routes beat internally learned ones.
pub fn candidate_paths(inst: &NetworkInstance, egresses: &BTreeSet<NodeId>, hop_bound: usize) -> Vec<RoutePath> {
    let mut out = Vec::new();
    for &e in egresses {
        out.extend(enumerate_paths_filtered(inst, e, hop_bound, |v| !egresses.contains(&v)));
    }
    out.sort();
    out
}

/// One route per (prefix, egress): the lowest MED, ties to the lowest AS.
fn best_routes(routes: &[ExternalRoute]) -> BTreeMap<&str, BTreeMap<NodeId, &ExternalRoute>> {
    let mut out: BTreeMap<&str, BTreeMap<NodeId, &ExternalRoute>> = BTreeMap::new();
    for r in routes {
        let slot = out.entry(r.prefix.as_str()).or_default().entry(r.egress).or_insert(r);
        if (r.med, r.neighbor_as) < (slot.med, slot.neighbor_as) {
            *slot = r;
        }
    }
    out
}

/// Derives the MED-decisive preferences, already suffix-closed.
pub fn derive_med_preferences(
    inst: &NetworkInstance,
    routes: &[ExternalRoute],
    hop_bound: usize,
) -> Result<MandatedPreferences> {
    if hop_bound == 0 {
        return Err(Error::Validation("hop bound must be at least 1".into()));
    }
    if let Some(r) = routes.iter().find(|r| r.egress >= inst.node_count()) {
        return Err(Error::UnknownNode(r.egress.to_string()));
    }
    let mut prefs = MandatedPreferences::new();
    for (prefix, by_egress) in best_routes(routes) {
        let egresses: BTreeSet<NodeId> = by_egress.keys().copied().collect();
        prefs.add_prefix(prefix, egresses.iter().copied());
        let candidates = candidate_paths(inst, &egresses, hop_bound);
        for v in 0..inst.node_count() {
            if egresses.contains(&v) {
                continue;
            }
            let at_v: Vec<&RoutePath> = candidates.iter().filter(|p| p.source() == v).collect();
            for p in &at_v {
                let rp = by_egress[&p.target()];
                for q in &at_v {
                    let rq = by_egress[&q.target()];
                    if p.target() != q.target() && rp.neighbor_as == rq.neighbor_as && rp.med < rq.med {
                        prefs.add_pair(prefix, (*p).clone(), (*q).clone())?;
                    }
                }
            }
        }
    }
    Ok(prefs.close_suffixes())
}

#[derive(Debug, Deserialize)]
struct RouteRecord {
    prefix: String,
    egress: String,
    neighbor_as: u32,
    med: u32,
}

pub fn parse_routes(inst: &NetworkInstance, text: &str) -> Result<Vec<ExternalRoute>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.deserialize() {
        let r: RouteRecord = rec.map_err(|e| Error::Parse(format!("routes: {e}")))?;
        out.push(ExternalRoute {
            egress: inst.node_id(&r.egress)?,
            prefix: r.prefix,
            neighbor_as: r.neighbor_as,
            med: r.med,
        });
    }
    Ok(out)
}

pub fn routes_to_csv(inst: &NetworkInstance, routes: &[ExternalRoute]) -> String {
    let mut out = String::from("prefix,egress,neighbor_as,med\n");
    for r in routes {
        out.push_str(&format!("{},{},{},{}\n", r.prefix, inst.node_name(r.egress), r.neighbor_as, r.med));
    }
    out
}

pub fn load_routes(inst: &NetworkInstance, path: impl AsRef<Path>) -> Result<Vec<ExternalRoute>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_routes(inst, &text)
}

#[derive(Debug, Deserialize)]
struct PairRecord {
    prefix: String,
    p_nodes: String,
    q_nodes: String,
}

/// Parses directly supplied preferences (`p` preferred to `q`); the result is closed.
pub fn parse_preferences(inst: &NetworkInstance, text: &str) -> Result<MandatedPreferences> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut prefs = MandatedPreferences::new();
    for rec in reader.deserialize() {
        let r: PairRecord = rec.map_err(|e| Error::Parse(format!("preferences: {e}")))?;
        let p = RoutePath::parse(inst, &r.p_nodes)?;
        let q = RoutePath::parse(inst, &r.q_nodes)?;
        prefs.add_pair(&r.prefix, p, q)?;
    }
    Ok(prefs.close_suffixes())
}

pub fn load_preferences(inst: &NetworkInstance, path: impl AsRef<Path>) -> Result<MandatedPreferences> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_preferences(inst, &text)
}
