//! Planted-facet heterogeneous graphs.
//!
//! Three node types: `A` (target), `B` (bridge) and `C` (attribute). Every
//! `A` node carries a latent facet in `0..k`; its class is `facet % classes`.
//! `B` and `C` nodes also have a facet and are pure with probability
//! `1 - noise`: a pure node links only to `A` nodes of its facet, an impure
//! one to uniform random `A` nodes. With `noise = 0` every path between two
//! `A` nodes therefore joins same-facet endpoints.
//!
//! Ids are laid out as `A = 0..n`, `B = n..2n`, `C = 2n..3n`.

use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::HeteroGraph;
use crate::error::{bail, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SyntheticSpec {
    pub n_per_type: usize,
    pub k_facets: usize,
    pub n_classes: usize,
    pub noise: f64,
    pub seed: u64,
    /// `A` neighbors drawn by each `B` node.
    pub bridge_fanout: usize,
    /// `A` neighbors drawn by each `C` node.
    pub attribute_fanout: usize,
    /// Direct `A-A` links per `A` node (for link prediction). Same facet with
    /// probability `1 - noise`.
    pub target_links: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_per_type: 150,
            k_facets: 5,
            n_classes: 3,
            noise: 0.1,
            seed: 7,
            bridge_fanout: 4,
            attribute_fanout: 4,
            target_links: 0,
        }
    }
}

/// Generated graph plus the planted ground truth.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub graph: HeteroGraph,
    /// Class of each `A` node (index = node id).
    pub classes: Vec<usize>,
    /// Latent facet of each `A` node.
    pub facets: Vec<usize>,
    /// Facet of each `B` node, indexed by `id - n`.
    pub bridge_facets: Vec<usize>,
    /// Whether each `B` node is facet-pure.
    pub bridge_pure: Vec<bool>,
    /// Facet of each `C` node, indexed by `id - 2n`.
    pub attribute_facets: Vec<usize>,
    pub attribute_pure: Vec<bool>,
}

impl Synthetic {
    pub fn bridge_range(&self) -> core::ops::Range<usize> {
        let n = self.classes.len();
        n..2 * n
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Synthetic> {
    let n = spec.n_per_type;
    let k = spec.k_facets;
    if n < 10 {
        bail!(Config, "n_per_type must be at least 10, got {n}");
    }
    if k == 0 || spec.n_classes == 0 {
        bail!(Config, "k_facets and n_classes must be positive");
    }
    if !(0.0..1.0).contains(&spec.noise) {
        bail!(Config, "noise must lie in [0, 1), got {}", spec.noise);
    }
    if spec.bridge_fanout == 0 {
        bail!(Config, "bridge_fanout must be positive");
    }
    let mut rng = rng::seeded(spec.seed);

    // Balanced facet assignment, shuffled.
    let mut facets: Vec<usize> = (0..n).map(|i| i % k).collect();
    facets.shuffle(&mut rng);
    let classes: Vec<usize> = facets.iter().map(|f| f % spec.n_classes).collect();
    let mut by_facet: Vec<Vec<usize>> = alloc::vec![Vec::new(); k];
    for (a, &f) in facets.iter().enumerate() {
        by_facet[f].push(a);
    }

    let mut edges: Vec<(usize, usize)> = Vec::new();
    let bridge_facets: Vec<usize> = (0..n).map(|i| i % k).collect();
    let mut bridge_pure = Vec::with_capacity(n);
    let mut has_bridge = alloc::vec![false; n];
    for (i, &f) in bridge_facets.iter().enumerate() {
        let b = n + i;
        let pure = !rng.gen_bool(spec.noise);
        bridge_pure.push(pure);
        for _ in 0..spec.bridge_fanout {
            let a = if pure && !by_facet[f].is_empty() {
                by_facet[f][rng.gen_range(0..by_facet[f].len())]
            } else {
                rng.gen_range(0..n)
            };
            has_bridge[a] = true;
            edges.push((a, b));
        }
    }
    // Every target node gets at least one bridge of its own facet.
    for a in 0..n {
        if !has_bridge[a] {
            let candidates: Vec<usize> = (0..n)
                .filter(|&i| bridge_pure[i] && bridge_facets[i] == facets[a])
                .collect();
            let i = if candidates.is_empty() {
                rng.gen_range(0..n)
            } else {
                candidates[rng.gen_range(0..candidates.len())]
            };
            edges.push((a, n + i));
        }
    }
    let attribute_facets: Vec<usize> = (0..n).map(|i| i % k).collect();
    let mut attribute_pure = Vec::with_capacity(n);
    for (i, &f) in attribute_facets.iter().enumerate() {
        let c = 2 * n + i;
        let pure = !rng.gen_bool(spec.noise);
        attribute_pure.push(pure);
        for _ in 0..spec.attribute_fanout {
            let a = if pure && !by_facet[f].is_empty() {
                by_facet[f][rng.gen_range(0..by_facet[f].len())]
            } else {
                rng.gen_range(0..n)
            };
            edges.push((a, c));
        }
    }
    for a in 0..n {
        for _ in 0..spec.target_links {
            let pool = &by_facet[facets[a]];
            let other = if !rng.gen_bool(spec.noise) && pool.len() > 1 {
                pool[rng.gen_range(0..pool.len())]
            } else {
                rng.gen_range(0..n)
            };
            if other != a {
                edges.push((a, other));
            }
        }
    }

    let node_type: Vec<usize> = (0..3 * n).map(|i| i / n).collect();
    let labels: BTreeMap<usize, usize> = classes.iter().copied().enumerate().collect();
    let graph = HeteroGraph::new(
        ["A", "B", "C"].iter().map(|s| s.to_string()).collect(),
        node_type,
        &edges,
        0,
    )?
    .with_labels(labels, spec.n_classes)?;
    Ok(Synthetic { graph, classes, facets, bridge_facets, bridge_pure, attribute_facets, attribute_pure })
}
