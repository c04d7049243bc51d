//! Random-walk path extraction and facet subgraph construction.
//!
//! Walks start at target-type nodes and stop at another target-type node.
//! Every start node draws from its own RNG stream (`seed`, `start`), and
//! subgraph edges are merged in ascending start order, so the result does not
//! depend on how start nodes are scheduled across workers.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};
use crate::hetgraph::HeteroGraph;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct WalkConfig {
    /// Maximum number of edges in a walk.
    pub path_length: usize,
    /// Walks attempted per start node.
    pub attempts: usize,
    pub seed: u64,
    /// Walk exactly `path_length` steps and test only the final node,
    /// instead of stopping at the first target-type node.
    pub strict_f1: bool,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self { path_length: 5, attempts: 1000, seed: 0, strict_f1: false }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.path_length < 2 {
            bail!(Config, "path_length must be at least 2, got {}", self.path_length);
        }
        if self.attempts == 0 {
            bail!(Config, "attempts must be at least 1");
        }
        Ok(())
    }
}

/// One sampled walk `[v_i, s_1, .., s_m, v_j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathRecord {
    pub nodes: Vec<usize>,
}

impl PathRecord {
    pub fn start(&self) -> usize {
        self.nodes[0]
    }

    pub fn end(&self) -> usize {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn intermediates(&self) -> &[usize] {
        &self.nodes[1..self.nodes.len() - 1]
    }

    /// Number of edges.
    pub fn len(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() < 2
    }

    /// Unordered endpoint pair as `(min, max)`.
    pub fn pair(&self) -> (usize, usize) {
        let (a, b) = (self.start(), self.end());
        if a < b { (a, b) } else { (b, a) }
    }

    /// Check every path invariant against `g`.
    pub fn validate(&self, g: &HeteroGraph, path_length: usize) -> Result<()> {
        if self.nodes.len() < 3 {
            bail!(Contract, "path {:?} has no intermediate node", self.nodes);
        }
        if self.len() > path_length {
            bail!(Contract, "path {:?} longer than {path_length}", self.nodes);
        }
        if !g.is_target(self.start()) || !g.is_target(self.end()) {
            bail!(Contract, "path {:?} endpoints are not both target type", self.nodes);
        }
        if self.start() == self.end() {
            bail!(Contract, "path {:?} returns to its start", self.nodes);
        }
        if let Some(w) = self.nodes.windows(2).find(|w| !g.has_edge(w[0], w[1])) {
            bail!(Contract, "path {:?} uses missing edge ({}, {})", self.nodes, w[0], w[1]);
        }
        Ok(())
    }
}

/// One random walk from `start`. Returns `None` when the walk is rejected:
/// isolated start, return to start, a direct target-to-target hop, or no
/// target-type endpoint within `path_length` steps.
pub fn random_walk<R: Rng + ?Sized>(
    g: &HeteroGraph,
    start: usize,
    cfg: &WalkConfig,
    rng: &mut R,
) -> Result<Option<PathRecord>> {
    if start >= g.num_nodes() || !g.is_target(start) {
        bail!(Contract, "walk start {start} is not a target-type node");
    }
    let mut nodes = Vec::with_capacity(cfg.path_length + 1);
    nodes.push(start);
    let mut current = start;
    for step in 1..=cfg.path_length {
        let row = g.neighbors(current);
        if row.is_empty() {
            return Ok(None);
        }
        current = row[rng.gen_range(0..row.len())];
        nodes.push(current);
        if !cfg.strict_f1 && g.is_target(current) {
            let accepted = current != start && step >= 2;
            return Ok(accepted.then_some(PathRecord { nodes }));
        }
    }
    let accepted = cfg.strict_f1 && g.is_target(current) && current != start;
    Ok(accepted.then_some(PathRecord { nodes }))
}

/// All accepted walks from one start node, keeping only the first path for
/// each unordered endpoint pair. Uses the start node's own RNG stream.
pub fn walks_from(g: &HeteroGraph, start: usize, cfg: &WalkConfig) -> Result<Vec<PathRecord>> {
    let mut rng = rng::stream(cfg.seed, start as u64);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for _ in 0..cfg.attempts {
        if let Some(path) = random_walk(g, start, cfg, &mut rng)? {
            if seen.insert(path.pair()) {
                out.push(path);
            }
        }
    }
    Ok(out)
}

/// A subgraph edge between target nodes `a < b`, carrying the path that
/// created it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FacetEdge {
    pub a: usize,
    pub b: usize,
    pub path: PathRecord,
}

impl FacetEdge {
    pub fn intermediates(&self) -> &[usize] {
        self.path.intermediates()
    }
}

/// Homogeneous graph over target-type nodes whose edges carry intermediate
/// node lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FacetSubgraph {
    target_ids: Vec<usize>,
    edges: Vec<FacetEdge>,
    incident: Vec<Vec<usize>>,
}

impl FacetSubgraph {
    /// Merge per-start walk lists, in the order given, into a subgraph.
    /// The first path seen for an unordered pair wins.
    pub fn from_walks<I>(target_ids: Vec<usize>, walks: I) -> Self
    where
        I: IntoIterator<Item = Vec<PathRecord>>,
    {
        let mut seen = BTreeSet::new();
        let mut edges = Vec::new();
        for path in walks.into_iter().flatten() {
            let (a, b) = path.pair();
            if seen.insert((a, b)) {
                edges.push(FacetEdge { a, b, path });
            }
        }
        Self::from_edges(target_ids, edges)
    }

    pub fn from_edges(target_ids: Vec<usize>, edges: Vec<FacetEdge>) -> Self {
        let mut incident = alloc::vec![Vec::new(); target_ids.len()];
        for (e, edge) in edges.iter().enumerate() {
            for end in [edge.a, edge.b] {
                if let Ok(local) = target_ids.binary_search(&end) {
                    incident[local].push(e);
                }
            }
        }
        Self { target_ids, edges, incident }
    }

    /// Target node ids, ascending. Position in this list is the node's local
    /// index.
    pub fn target_ids(&self) -> &[usize] {
        &self.target_ids
    }

    pub fn local_index(&self, node: usize) -> Option<usize> {
        self.target_ids.binary_search(&node).ok()
    }

    pub fn edges(&self) -> &[FacetEdge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Edge indices incident to the node at local index `local`.
    pub fn incident(&self, local: usize) -> &[usize] {
        &self.incident[local]
    }

    /// Kept paths in discovery order.
    pub fn paths(&self) -> impl Iterator<Item = &PathRecord> {
        self.edges.iter().map(|e| &e.path)
    }

    pub fn validate(&self, g: &HeteroGraph, path_length: usize) -> Result<()> {
        let mut pairs = BTreeSet::new();
        for e in &self.edges {
            if e.a >= e.b {
                bail!(Contract, "edge ({}, {}) not canonical", e.a, e.b);
            }
            if !pairs.insert((e.a, e.b)) {
                bail!(Contract, "duplicate edge ({}, {})", e.a, e.b);
            }
            if self.local_index(e.a).is_none() || self.local_index(e.b).is_none() {
                bail!(Contract, "edge ({}, {}) leaves the target set", e.a, e.b);
            }
            if e.path.pair() != (e.a, e.b) {
                bail!(Contract, "edge ({}, {}) carries a path for another pair", e.a, e.b);
            }
            e.path.validate(g, path_length)?;
        }
        Ok(())
    }
}

/// Sequential subgraph construction: walks from every target node in
/// ascending id order.
pub fn build_subgraph(g: &HeteroGraph, cfg: &WalkConfig) -> Result<FacetSubgraph> {
    cfg.validate()?;
    let targets = g.target_nodes();
    if targets.is_empty() {
        bail!(Contract, "graph has no target-type node");
    }
    let walks = targets
        .iter()
        .map(|&s| walks_from(g, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(FacetSubgraph::from_walks(targets, walks))
}
