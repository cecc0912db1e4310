//! Network instances, demand matrices, topology files and Waxman generation.
//!
//! A [`NetworkInstance`] is an undirected graph whose links carry an IGP weight
//! (possibly unknown), a capacity in Mbps, and a common upper bound `w_max`
//! on admissible weights. Node identifiers are strings in files and dense
//! indices ([`NodeId`]) everywhere else; indices follow file order.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;
pub type LinkId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub a: NodeId,
    pub b: NodeId,
    /// `None` marks a weight left for the repair engine to choose.
    pub weight: Option<u32>,
    /// Capacity in Mbps, available in each direction.
    pub capacity: f64,
}

impl Link {
    /// The endpoint opposite to `n`.
    pub fn other(&self, n: NodeId) -> NodeId {
        if self.a == n {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInstance {
    names: Vec<String>,
    index: HashMap<String, NodeId>,
    links: Vec<Link>,
    adjacency: Vec<Vec<(NodeId, LinkId)>>,
    lookup: HashMap<(NodeId, NodeId), LinkId>,
    w_max: u32,
}

impl NetworkInstance {
    /// Builds and validates an instance.
    pub fn new(names: Vec<String>, links: Vec<Link>, w_max: u32) -> Result<Self> {
        if w_max == 0 {
            return Err(Error::Validation("w_max must be positive".into()));
        }
        let mut index = HashMap::new();
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate node `{name}`")));
            }
        }
        let mut adjacency = vec![Vec::new(); names.len()];
        let mut lookup = HashMap::new();
        for (id, link) in links.iter().enumerate() {
            if link.a >= names.len() || link.b >= names.len() {
                return Err(Error::Validation(format!("link {id} references a missing node")));
            }
            let label = format!("{}-{}", names[link.a], names[link.b]);
            if link.a == link.b {
                return Err(Error::Validation(format!("self-loop {label}")));
            }
            if let Some(w) = link.weight {
                if w > w_max {
                    return Err(Error::Validation(format!(
                        "weight {w} of {label} exceeds w_max {w_max}"
                    )));
                }
            }
            if !(link.capacity.is_finite() && link.capacity >= 0.0) {
                return Err(Error::Validation(format!("bad capacity on {label}")));
            }
            let key = (link.a.min(link.b), link.a.max(link.b));
            if lookup.insert(key, id).is_some() {
                return Err(Error::Validation(format!("duplicate link {label}")));
            }
            adjacency[link.a].push((link.b, id));
            adjacency[link.b].push((link.a, id));
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        let inst = NetworkInstance {
            names,
            index,
            links,
            adjacency,
            lookup,
            w_max,
        };
        if !inst.is_connected() {
            return Err(Error::Validation("graph is not connected".into()));
        }
        Ok(inst)
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn w_max(&self) -> u32 {
        self.w_max
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id]
    }

    /// Neighbors of `n` with the connecting link, sorted by neighbor id.
    pub fn neighbors(&self, n: NodeId) -> &[(NodeId, LinkId)] {
        &self.adjacency[n]
    }

    pub fn link_between(&self, a: NodeId, b: NodeId) -> Option<LinkId> {
        self.lookup.get(&(a.min(b), a.max(b))).copied()
    }

    pub fn node_name(&self, n: NodeId) -> &str {
        &self.names[n]
    }

    pub fn node_names(&self) -> &[String] {
        &self.names
    }

    pub fn node_id(&self, name: &str) -> Result<NodeId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn link_label(&self, id: LinkId) -> String {
        let l = &self.links[id];
        format!("{}-{}", self.names[l.a], self.names[l.b])
    }

    pub fn initial_weights(&self) -> Vec<Option<u32>> {
        self.links.iter().map(|l| l.weight).collect()
    }

    pub fn unknown_count(&self) -> usize {
        self.links.iter().filter(|l| l.weight.is_none()).count()
    }

    /// All weights, failing on the first unknown one.
    pub fn known_weights(&self) -> Result<Vec<u32>> {
        self.links
            .iter()
            .enumerate()
            .map(|(id, l)| l.weight.ok_or_else(|| Error::UnknownWeight(self.link_label(id))))
            .collect()
    }

    /// A copy of the instance carrying the given weights.
    pub fn with_weights(&self, weights: &[u32]) -> NetworkInstance {
        let mut out = self.clone();
        for (link, &w) in out.links.iter_mut().zip(weights) {
            link.weight = Some(w);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        if self.names.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.names.len()];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn to_json(&self) -> String {
        let file = TopologyFile {
            nodes: self.names.clone(),
            edges: self
                .links
                .iter()
                .map(|l| EdgeRecord {
                    a: self.names[l.a].clone(),
                    b: self.names[l.b].clone(),
                    weight: match l.weight {
                        Some(w) => WeightField::Known(w),
                        None => WeightField::Text("unknown".into()),
                    },
                    capacity: l.capacity.round() as u64,
                })
                .collect(),
            w_max: self.w_max,
        };
        serde_json::to_string_pretty(&file).expect("topology serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TopologyFile {
    nodes: Vec<String>,
    edges: Vec<EdgeRecord>,
    w_max: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeRecord {
    a: String,
    b: String,
    weight: WeightField,
    capacity: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum WeightField {
    Known(u32),
    Text(String),
}

/// Parses a topology document (see the README for the format).
pub fn parse_instance(text: &str) -> Result<NetworkInstance> {
    let file: TopologyFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("topology: {e}")))?;
    let index: HashMap<&str, NodeId> = file
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut links = Vec::with_capacity(file.edges.len());
    for e in &file.edges {
        let a = *index
            .get(e.a.as_str())
            .ok_or_else(|| Error::UnknownNode(e.a.clone()))?;
        let b = *index
            .get(e.b.as_str())
            .ok_or_else(|| Error::UnknownNode(e.b.clone()))?;
        let weight = match &e.weight {
            WeightField::Known(w) => Some(*w),
            WeightField::Text(t) if t.eq_ignore_ascii_case("unknown") => None,
            WeightField::Text(t) => {
                return Err(Error::Parse(format!("weight `{t}` on {}-{}", e.a, e.b)))
            }
        };
        links.push(Link {
            a,
            b,
            weight,
            capacity: e.capacity as f64,
        });
    }
    NetworkInstance::new(file.nodes, links, file.w_max)
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<NetworkInstance> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_instance(&text)
}

/// Traffic demands in Mbps keyed by (source, destination).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemandMatrix {
    entries: BTreeMap<(NodeId, NodeId), f64>,
}

impl DemandMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, inst: &NetworkInstance, src: NodeId, dst: NodeId, mbps: f64) -> Result<()> {
        if src >= inst.node_count() || dst >= inst.node_count() {
            return Err(Error::Validation("demand references a missing node".into()));
        }
        if !(mbps.is_finite() && mbps >= 0.0) {
            return Err(Error::Validation(format!("negative or invalid demand {mbps}")));
        }
        if src == dst {
            return Err(Error::Validation(format!(
                "demand from {} to itself",
                inst.node_name(src)
            )));
        }
        *self.entries.entry((src, dst)).or_insert(0.0) += mbps;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.entries.iter().map(|(&(s, d), &v)| (s, d, v))
    }

    pub fn get(&self, src: NodeId, dst: NodeId) -> f64 {
        self.entries.get(&(src, dst)).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }

    /// Destinations with at least one positive demand, ascending.
    pub fn destinations(&self) -> Vec<NodeId> {
        let mut d: Vec<NodeId> = self
            .entries
            .iter()
            .filter(|(_, &v)| v > 0.0)
            .map(|(&(_, t), _)| t)
            .collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    pub fn to_csv(&self, inst: &NetworkInstance) -> String {
        let mut out = String::from("src,dst,mbps\n");
        for (s, d, v) in self.iter() {
            out.push_str(&format!("{},{},{}\n", inst.node_name(s), inst.node_name(d), v));
        }
        out
    }
}

#[derive(Debug, Deserialize)]
struct DemandRecord {
    src: String,
    dst: String,
    mbps: f64,
}

pub fn parse_demands(inst: &NetworkInstance, text: &str) -> Result<DemandMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = DemandMatrix::new();
    for record in reader.deserialize() {
        let r: DemandRecord = record.map_err(|e| Error::Parse(format!("demands: {e}")))?;
        let s = inst.node_id(&r.src)?;
        let d = inst.node_id(&r.dst)?;
        out.insert(inst, s, d, r.mbps)?;
    }
    Ok(out)
}

pub fn load_demands(inst: &NetworkInstance, path: impl AsRef<Path>) -> Result<DemandMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_demands(inst, &text)
}

/// Uniformly random demands in `[0, max_mbps)` between every ordered pair
/// of distinct nodes, each present with probability `density`.
pub fn random_demands(inst: &NetworkInstance, density: f64, max_mbps: f64, seed: u64) -> DemandMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DemandMatrix::new();
    let n = inst.node_count();
    for s in 0..n {
        for d in 0..n {
            if s != d && rng.random_bool(density) {
                let v: f64 = rng.random_range(0.0..max_mbps);
                out.insert(inst, s, d, v).expect("valid generated demand");
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaxmanParams {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub high_bw: f64,
    pub low_bw: f64,
    /// Weight bound of the generated instance; initial weights are uniform in `[1, w_max]`.
    pub w_max: u32,
}

impl WaxmanParams {
    /// Generator settings used for the scaling experiments.
    pub fn standard(n: usize, seed: u64) -> Self {
        WaxmanParams {
            n,
            alpha: 0.15,
            beta: 0.5,
            seed,
            high_bw: 25_000.0,
            low_bw: 10_000.0,
            w_max: 20,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Validation("Waxman graphs need n >= 2".into()));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Validation(format!("{name} must lie in (0, 1]")));
            }
        }
        if self.w_max == 0 {
            return Err(Error::Validation("w_max must be positive".into()));
        }
        Ok(())
    }
}

/// Number of full resampling rounds before the generator gives up on
/// drawing a connected graph directly.
pub const WAXMAN_ATTEMPTS: usize = 100;

/// Link probability `alpha * exp(-d / (beta * l))`.
pub fn waxman_probability(d: f64, alpha: f64, beta: f64, l: f64) -> f64 {
    alpha * (-d / (beta * l)).exp()
}

/// `L = sqrt(2) * max pairwise distance`.
pub fn waxman_scale(positions: &[(f64, f64)]) -> f64 {
    let mut max_d: f64 = 0.0;
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            max_d = max_d.max(distance(positions[i], positions[j]));
        }
    }
    std::f64::consts::SQRT_2 * max_d
}

pub fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Samples the links of a Waxman graph over fixed positions. Returns
/// `(i, j, bandwidth)` triples with `i < j`.
pub fn waxman_links<R: rand::Rng>(
    positions: &[(f64, f64)],
    params: &WaxmanParams,
    rng: &mut R,
) -> Vec<(NodeId, NodeId, f64)> {
    let l = waxman_scale(positions);
    let mut out = Vec::new();
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let d = distance(positions[i], positions[j]);
            let p = waxman_probability(d, params.alpha, params.beta, l);
            if rng.random_bool(p.clamp(0.0, 1.0)) {
                out.push((i, j, waxman_bandwidth(d, l, params)));
            }
        }
    }
    out
}

/// Short links (below `L/2`) get the high bandwidth.
pub fn waxman_bandwidth(d: f64, l: f64, params: &WaxmanParams) -> f64 {
    if d < l / 2.0 {
        params.high_bw
    } else {
        params.low_bw
    }
}

/// Generates a connected Waxman graph, deterministic per seed.
///
/// The whole graph is resampled up to [`WAXMAN_ATTEMPTS`] times. Sparse
/// settings (small `n` with `alpha = 0.15`) rarely produce a connected draw;
/// in that case the last draw is completed by joining its components with
/// their shortest inter-component links.
pub fn generate_waxman(params: &WaxmanParams) -> Result<NetworkInstance> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let positions: Vec<(f64, f64)> = (0..params.n)
        .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
        .collect();
    let mut edges = Vec::new();
    for _ in 0..WAXMAN_ATTEMPTS {
        edges = waxman_links(&positions, params, &mut rng);
        if components(params.n, &edges).iter().all(|&c| c == 0) {
            break;
        }
    }
    connect_components(&positions, params, &mut edges);
    let names = (0..params.n).map(|i| format!("n{i}")).collect();
    let links = edges
        .into_iter()
        .map(|(a, b, bw)| Link {
            a,
            b,
            weight: Some(rng.random_range(1..=params.w_max)),
            capacity: bw,
        })
        .collect();
    NetworkInstance::new(names, links, params.w_max)
}

fn components(n: usize, edges: &[(NodeId, NodeId, f64)]) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let next = p[y];
            p[y] = r;
            y = next;
        }
        r
    }
    for &(a, b, _) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    (0..n).map(|x| find(&mut parent, x)).collect()
}

fn connect_components(positions: &[(f64, f64)], params: &WaxmanParams, edges: &mut Vec<(NodeId, NodeId, f64)>) {
    let l = waxman_scale(positions);
    loop {
        let comp = components(positions.len(), edges);
        if comp.iter().all(|&c| c == 0) {
            break;
        }
        // join component 0 to its nearest outside node
        let mut best: Option<(f64, NodeId, NodeId)> = None;
        for i in 0..positions.len() {
            if comp[i] != 0 {
                continue;
            }
            for j in 0..positions.len() {
                if comp[j] == 0 {
                    continue;
                }
                let d = distance(positions[i], positions[j]);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let (d, i, j) = best.expect("a disconnected graph has an outside node");
        edges.push((i.min(j), i.max(j), waxman_bandwidth(d, l, params)));
    }
    edges.sort_by_key(|x| (x.0, x.1));
}
