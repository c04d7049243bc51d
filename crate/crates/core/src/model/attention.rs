use alloc::vec::Vec;

use super::{forward, ForwardOptions, HyperParams, ModelParams, SubgraphPlan};
use crate::error::Result;
use crate::numerics::{Tape, Tensor};

/// Facet attention of one target node: the mean facet weight over its
/// incident subgraph edges.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRow {
    pub node: usize,
    pub node_type: usize,
    pub alpha: Vec<f64>,
    /// No incident edge; `alpha` is uniform.
    pub isolated: bool,
}

/// Per-node facet attention table from an eval-mode forward pass.
pub fn export_attention(
    node_type: &[usize],
    plan: &SubgraphPlan,
    params: &ModelParams,
    hyper: &HyperParams,
) -> Result<Vec<AttentionRow>> {
    let mut params = params.clone();
    let mut tape = Tape::new();
    // Eval mode draws nothing from the generator.
    let mut rng = crate::rng::seeded(0);
    let fwd = forward(&mut tape, &mut params, plan, hyper, ForwardOptions::eval(), &mut rng)?;
    Ok(plan
        .target_ids()
        .iter()
        .zip(mean_incident_alpha(plan.edge_pairs(), &fwd.alpha, plan.num_targets()))
        .map(|(&node, (alpha, isolated))| AttentionRow { node, node_type: node_type[node], alpha, isolated })
        .collect())
}

/// Mean of `alpha` rows over the edges incident to each of `n` nodes.
/// Nodes without edges get a uniform row and `true`.
pub fn mean_incident_alpha(edge_pairs: &[(usize, usize)], alpha: &Tensor, n: usize) -> Vec<(Vec<f64>, bool)> {
    let k = alpha.cols();
    let mut sums = alloc::vec![alloc::vec![0.0; k]; n];
    let mut degree = alloc::vec![0usize; n];
    for (e, &(a, b)) in edge_pairs.iter().enumerate() {
        for end in [a, b] {
            degree[end] += 1;
            for (s, w) in sums[end].iter_mut().zip(alpha.row(e)) {
                *s += w;
            }
        }
    }
    sums.into_iter()
        .zip(degree)
        .map(|(s, deg)| match deg {
            0 => (alloc::vec![1.0 / k as f64; k], true),
            deg => (s.into_iter().map(|x| x / deg as f64).collect(), false),
        })
        .collect()
}
