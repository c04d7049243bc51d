//! Heterogeneous graph data model.
//!
//! Node ids are global; the node type is an attribute. Adjacency is an
//! undirected CSR where every edge is stored in both rows, rows are sorted and
//! free of duplicates and self-loops.

mod split;
mod synthetic;

pub use split::{make_split, SplitAssignment};
pub use synthetic::{generate_synthetic, Synthetic, SyntheticSpec};

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    node_type: Vec<usize>,
    type_names: Vec<String>,
    target_type: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    features: Vec<Option<Tensor>>,
    labels: BTreeMap<usize, usize>,
    num_classes: usize,
}

impl HeteroGraph {
    /// Build a graph from typed nodes and an edge list.
    ///
    /// Edges are symmetrized and duplicates collapsed. Self-loops and
    /// out-of-range endpoints are rejected.
    pub fn new(
        type_names: Vec<String>,
        node_type: Vec<usize>,
        edges: &[(usize, usize)],
        target_type: usize,
    ) -> Result<Self> {
        let n = node_type.len();
        if target_type >= type_names.len() {
            bail!(Graph, "target type {target_type} out of range ({} types)", type_names.len());
        }
        if let Some((i, &t)) = node_type.iter().enumerate().find(|(_, &t)| t >= type_names.len()) {
            bail!(Graph, "node {i} has unknown type id {t}");
        }
        let mut adj: Vec<Vec<usize>> = alloc::vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                bail!(Graph, "edge ({a}, {b}) references a node outside 0..{n}");
            }
            if a == b {
                bail!(Graph, "self-loop on node {a}");
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for row in &mut adj {
            row.sort_unstable();
            row.dedup();
            neighbors.extend_from_slice(row);
            offsets.push(neighbors.len());
        }
        let num_types = type_names.len();
        Ok(Self {
            node_type,
            type_names,
            target_type,
            offsets,
            neighbors,
            features: alloc::vec![None; num_types],
            labels: BTreeMap::new(),
            num_classes: 0,
        })
    }

    /// Attach labels. Every labeled node must be of the target type.
    /// `num_classes` is raised to cover the largest label if needed.
    pub fn with_labels(mut self, labels: BTreeMap<usize, usize>, num_classes: usize) -> Result<Self> {
        for &node in labels.keys() {
            if node >= self.num_nodes() {
                bail!(Graph, "label for unknown node {node}");
            }
            if self.node_type[node] != self.target_type {
                bail!(
                    Graph,
                    "node {node} has type {} but labels are only allowed on target type {}",
                    self.type_names[self.node_type[node]],
                    self.type_names[self.target_type]
                );
            }
        }
        let max_label = labels.values().map(|&c| c + 1).max().unwrap_or(0);
        self.num_classes = num_classes.max(max_label);
        self.labels = labels;
        Ok(self)
    }

    /// Attach a dense feature matrix for one node type, one row per node of
    /// that type in ascending id order.
    pub fn with_features(mut self, type_id: usize, features: Tensor) -> Result<Self> {
        if type_id >= self.type_names.len() {
            bail!(Graph, "feature type {type_id} out of range");
        }
        let count = self.node_type.iter().filter(|&&t| t == type_id).count();
        if features.rows() != count {
            bail!(
                Graph,
                "features for type {} have {} rows, expected {count}",
                self.type_names[type_id],
                features.rows()
            );
        }
        self.features[type_id] = Some(features);
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.node_type.len()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn node_type(&self, node: usize) -> usize {
        self.node_type[node]
    }

    pub fn node_types(&self) -> &[usize] {
        &self.node_type
    }

    pub fn type_names(&self) -> &[String] {
        &self.type_names
    }

    pub fn type_id(&self, name: &str) -> Option<usize> {
        self.type_names.iter().position(|t| t == name)
    }

    pub fn target_type(&self) -> usize {
        self.target_type
    }

    pub fn is_target(&self, node: usize) -> bool {
        self.node_type[node] == self.target_type
    }

    /// Ids of target-type nodes, ascending.
    pub fn target_nodes(&self) -> Vec<usize> {
        self.nodes_of_type(self.target_type)
    }

    pub fn nodes_of_type(&self, type_id: usize) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&i| self.node_type[i] == type_id).collect()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    /// CSR offsets (length `num_nodes + 1`) and neighbor ids.
    pub fn csr(&self) -> (&[usize], &[usize]) {
        (&self.offsets, &self.neighbors)
    }

    /// Undirected edges as `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for a in 0..self.num_nodes() {
            for &b in self.neighbors(a) {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Edges whose endpoints are both of the target type.
    pub fn target_edges(&self) -> Vec<(usize, usize)> {
        self.edges()
            .into_iter()
            .filter(|&(a, b)| self.is_target(a) && self.is_target(b))
            .collect()
    }

    /// Copy of the graph with the given undirected edges removed.
    pub fn without_edges(&self, removed: &[(usize, usize)]) -> Self {
        let mut drop: Vec<(usize, usize)> = removed
            .iter()
            .map(|&(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        drop.sort_unstable();
        let kept: Vec<(usize, usize)> = self
            .edges()
            .into_iter()
            .filter(|e| drop.binary_search(e).is_err())
            .collect();
        let mut g = Self::new(
            self.type_names.clone(),
            self.node_type.clone(),
            &kept,
            self.target_type,
        )
        .expect("subset of a valid graph is valid");
        g.features = self.features.clone();
        g.labels = self.labels.clone();
        g.num_classes = self.num_classes;
        g
    }

    pub fn features(&self, type_id: usize) -> Option<&Tensor> {
        self.features.get(type_id).and_then(|f| f.as_ref())
    }

    pub fn labels(&self) -> &BTreeMap<usize, usize> {
        &self.labels
    }

    pub fn label(&self, node: usize) -> Option<usize> {
        self.labels.get(&node).copied()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Position of each node within its own type (row index into that
    /// type's feature matrix).
    pub fn rank_within_type(&self) -> Vec<usize> {
        let mut seen = alloc::vec![0usize; self.type_names.len()];
        self.node_type
            .iter()
            .map(|&t| {
                let r = seen[t];
                seen[t] += 1;
                r
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn path_graph() {
        let g = HeteroGraph::new(names(&["A", "P"]), vec![0, 1, 0], &[(0, 1), (1, 2)], 0).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g.num_edges(), 2);
    }

    #[test]
    fn reversed_duplicate_collapses() {
        let g = HeteroGraph::new(names(&["A"]), vec![0, 0], &[(0, 1), (1, 0), (0, 1)], 0).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
    }

    #[test]
    fn self_loop_rejected() {
        let err = HeteroGraph::new(names(&["A"]), vec![0, 0], &[(1, 1)], 0).unwrap_err();
        assert!(matches!(err, crate::Error::Graph(_)));
    }

    #[test]
    fn label_on_wrong_type_rejected() {
        let g = HeteroGraph::new(names(&["A", "P"]), vec![0, 1, 0], &[(0, 1), (1, 2)], 0).unwrap();
        let labels: BTreeMap<usize, usize> = [(1, 0)].into_iter().collect();
        assert!(g.with_labels(labels, 2).is_err());
    }

    #[test]
    fn feature_rows_must_match_type_count() {
        let g = HeteroGraph::new(names(&["A", "P"]), vec![0, 1, 0], &[(0, 1)], 0).unwrap();
        assert!(g.clone().with_features(0, Tensor::zeros(2, 3)).is_ok());
        assert!(g.with_features(0, Tensor::zeros(3, 3)).is_err());
    }

    #[test]
    fn without_edges_removes_both_directions() {
        let g = HeteroGraph::new(names(&["A"]), vec![0, 0, 0], &[(0, 1), (1, 2)], 0).unwrap();
        let h = g.without_edges(&[(1, 0)]);
        assert_eq!(h.num_edges(), 1);
        assert!(!h.has_edge(0, 1) && !h.has_edge(1, 0));
        assert!(h.has_edge(2, 1));
    }

    proptest::proptest! {
        #[test]
        fn csr_is_symmetric_sorted_and_degrees_sum(
            n in 2usize..25,
            raw in proptest::collection::vec((0usize..25, 0usize..25), 0..80),
        ) {
            let edges: Vec<(usize, usize)> = raw
                .into_iter()
                .map(|(a, b)| (a % n, b % n))
                .filter(|(a, b)| a != b)
                .collect();
            let g = HeteroGraph::new(names(&["A", "B"]), (0..n).map(|i| i % 2).collect(), &edges, 0).unwrap();
            let mut degree_sum = 0;
            for i in 0..n {
                let row = g.neighbors(i);
                degree_sum += row.len();
                proptest::prop_assert!(row.windows(2).all(|w| w[0] < w[1]));
                proptest::prop_assert!(!row.contains(&i));
                for &j in row {
                    proptest::prop_assert!(g.has_edge(j, i));
                }
            }
            proptest::prop_assert_eq!(degree_sum, 2 * g.num_edges());
        }
    }
}
