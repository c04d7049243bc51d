//! The multi-facet path network.
//!
//! Per forward pass:
//!
//! 1. every intermediate node is projected into `K` facets,
//!    `E_n(v) = W_A^n · E(v)`;
//! 2. each subgraph edge averages the facets of its path's intermediates,
//!    giving `P_n(a, b)`;
//! 3. facet weights `α = gumbel_softmax(W_B · P_n)` mix them into one edge
//!    feature `P(a, b) = Σ α_n P_n(a, b)`;
//! 4. `L` convolution layers compute
//!    `h'(i) = dropout(ELU(BN(Σ_j P(i, j) ⊙ h(j))))` over target nodes,
//!    starting from `h = E` restricted to the target type.

mod attention;
mod params;
mod warmup;

pub use attention::{export_attention, mean_incident_alpha, AttentionRow};
pub use params::{init_embeddings, ModelParams};
pub use warmup::{warm_up, WarmUpConfig, WarmUpTrace};

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};
use crate::numerics::{batch_norm, dropout, gumbel_softmax, softmax_vec, Tape, Tensor, Var};
use crate::walker::FacetSubgraph;

/// How facet weights turn path facets into an edge feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum EdgeWeightMode {
    /// Learned Gumbel-Softmax weights over facets.
    #[default]
    Gumbel,
    /// One uniformly random facet per edge, no gradient through the choice.
    Random,
    /// No edge weight: every edge feature is the all-ones vector.
    None,
}

impl EdgeWeightMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gumbel => "gumbel",
            Self::Random => "random",
            Self::None => "none",
        }
    }
}

impl core::str::FromStr for EdgeWeightMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gumbel" => Ok(Self::Gumbel),
            "random" => Ok(Self::Random),
            "none" => Ok(Self::None),
            other => bail!(Config, "unknown edge weight mode {other:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct HyperParams {
    /// Number of facets `K`.
    pub k_facets: usize,
    /// Gumbel-Softmax temperature.
    pub tau: f64,
    /// Convolution layers `L`.
    pub layers: usize,
    /// Embedding dimension `d`.
    pub dim: usize,
    pub dropout: f64,
    pub edge_weight_mode: EdgeWeightMode,
    /// Straight-through one-hot facet weights.
    pub hard: bool,
    /// Add a `d x d` weight to every convolution layer.
    pub layer_weights: bool,
    pub warmup: WarmUpConfig,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            k_facets: 5,
            tau: 0.5,
            layers: 2,
            dim: 64,
            dropout: 0.5,
            edge_weight_mode: EdgeWeightMode::Gumbel,
            hard: false,
            layer_weights: false,
            warmup: WarmUpConfig::default(),
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_facets == 0 {
            bail!(Config, "k_facets must be at least 1");
        }
        if !(self.tau > 0.0) {
            bail!(Config, "tau must be positive, got {}", self.tau);
        }
        if self.layers == 0 {
            bail!(Config, "layers must be at least 1");
        }
        if self.dim == 0 {
            bail!(Config, "dim must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bail!(Config, "dropout must lie in [0, 1), got {}", self.dropout);
        }
        Ok(())
    }
}

/// Which stochastic parts of the forward pass are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Batch statistics (and running-stat updates) instead of running stats.
    pub batch_stats: bool,
    /// Gumbel noise in Gumbel mode, fresh random facets in Random mode.
    pub noise: bool,
    pub dropout: bool,
}

impl ForwardOptions {
    pub fn train() -> Self {
        Self { batch_stats: true, noise: true, dropout: true }
    }

    pub fn eval() -> Self {
        Self { batch_stats: false, noise: false, dropout: false }
    }

    /// Train-mode normalization with every random component off. Used for
    /// gradient checks.
    pub fn deterministic_train() -> Self {
        Self { batch_stats: true, noise: false, dropout: false }
    }
}

/// Index arrays derived once from a [`FacetSubgraph`].
#[derive(Debug, Clone)]
pub struct SubgraphPlan {
    target_ids: Vec<usize>,
    inter_nodes: Vec<usize>,
    seg_src: Vec<usize>,
    seg_edge: Vec<usize>,
    inv_count: Tensor,
    msg_dst: Vec<usize>,
    msg_src: Vec<usize>,
    msg_edge: Vec<usize>,
    edge_pairs: Vec<(usize, usize)>,
}

impl SubgraphPlan {
    pub fn new(sub: &FacetSubgraph) -> Result<Self> {
        let mut inter_nodes: Vec<usize> = sub.edges().iter().flat_map(|e| e.intermediates().iter().copied()).collect();
        inter_nodes.sort_unstable();
        inter_nodes.dedup();
        let mut seg_src = Vec::new();
        let mut seg_edge = Vec::new();
        let mut counts = Vec::with_capacity(sub.num_edges());
        let mut msg_dst = Vec::new();
        let mut msg_src = Vec::new();
        let mut msg_edge = Vec::new();
        let mut edge_pairs = Vec::new();
        for (e, edge) in sub.edges().iter().enumerate() {
            let inter = edge.intermediates();
            if inter.is_empty() {
                bail!(Contract, "edge ({}, {}) has no intermediate node", edge.a, edge.b);
            }
            for s in inter {
                seg_src.push(inter_nodes.binary_search(s).expect("collected above"));
                seg_edge.push(e);
            }
            counts.push(1.0 / inter.len() as f64);
            let (Some(a), Some(b)) = (sub.local_index(edge.a), sub.local_index(edge.b)) else {
                bail!(Contract, "edge ({}, {}) leaves the target set", edge.a, edge.b);
            };
            edge_pairs.push((a, b));
            for (dst, src) in [(a, b), (b, a)] {
                msg_dst.push(dst);
                msg_src.push(src);
                msg_edge.push(e);
            }
        }
        Ok(Self {
            target_ids: sub.target_ids().to_vec(),
            inter_nodes,
            seg_src,
            seg_edge,
            inv_count: Tensor::column_vector(&counts),
            msg_dst,
            msg_src,
            msg_edge,
            edge_pairs,
        })
    }

    pub fn num_targets(&self) -> usize {
        self.target_ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_pairs.len()
    }

    pub fn target_ids(&self) -> &[usize] {
        &self.target_ids
    }

    /// Local endpoint indices of every edge.
    pub fn edge_pairs(&self) -> &[(usize, usize)] {
        &self.edge_pairs
    }
}

/// Tape handles of every trainable, in [`ModelParams::trainables`] order.
#[derive(Debug, Clone)]
pub struct Bound {
    pub embeddings: Var,
    pub facet_proj: Vec<Var>,
    pub scorer: Var,
    pub bn_gamma: Vec<Var>,
    pub bn_beta: Vec<Var>,
    pub layer_weights: Vec<Var>,
    pub classifier: Var,
    pub classifier_bias: Var,
}

impl Bound {
    pub fn new(tape: &mut Tape, params: &ModelParams) -> Self {
        let embeddings = tape.param(params.embeddings.clone());
        let facet_proj = params.facet_proj.iter().map(|w| tape.param(w.clone())).collect();
        let scorer = tape.param(params.scorer.clone());
        let mut bn_gamma = Vec::new();
        let mut bn_beta = Vec::new();
        for (g, b) in params.bn_gamma.iter().zip(&params.bn_beta) {
            bn_gamma.push(tape.param(g.clone()));
            bn_beta.push(tape.param(b.clone()));
        }
        let layer_weights = params.layer_weights.iter().map(|w| tape.param(w.clone())).collect();
        let classifier = tape.param(params.classifier.clone());
        let classifier_bias = tape.param(params.classifier_bias.clone());
        Self { embeddings, facet_proj, scorer, bn_gamma, bn_beta, layer_weights, classifier, classifier_bias }
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        out.push(self.embeddings);
        out.extend(self.facet_proj.iter().copied());
        out.push(self.scorer);
        for (g, b) in self.bn_gamma.iter().zip(&self.bn_beta) {
            out.push(*g);
            out.push(*b);
        }
        out.extend(self.layer_weights.iter().copied());
        out.push(self.classifier);
        out.push(self.classifier_bias);
        out
    }
}

/// Output of [`forward`].
#[derive(Debug, Clone)]
pub struct Forward {
    pub bound: Bound,
    /// Final target-node embeddings `h^L`, rows in subgraph local order.
    pub embeddings: Var,
    /// Combined edge features `P`, one row per subgraph edge.
    pub edge_features: Var,
    /// Facet weights per edge (`edges x K`). Uniform in `None` mode.
    pub alpha: Tensor,
}

/// Projection of one embedding into `K` facets (`K x d`).
pub fn project_facets(embedding: &[f64], facet_proj: &[Tensor]) -> Result<Tensor> {
    let d = embedding.len();
    let e = Tensor::row_vector(embedding);
    let mut out = Tensor::zeros(facet_proj.len(), d);
    for (n, w) in facet_proj.iter().enumerate() {
        if w.shape() != (d, d) {
            bail!(Shape, "facet projection {n} is {:?}, embedding has {d} dims", w.shape());
        }
        out.row_mut(n).copy_from_slice(e.matmul_t(w)?.data());
    }
    Ok(out)
}

/// Mean of the intermediates' `K x d` facet blocks.
pub fn aggregate_path<'a>(intermediates: &[usize], facets: impl Fn(usize) -> &'a Tensor) -> Result<Tensor> {
    let Some(&first) = intermediates.first() else {
        bail!(Contract, "path has no intermediate node");
    };
    let mut acc = facets(first).clone();
    for &s in &intermediates[1..] {
        let block = facets(s);
        if block.shape() != acc.shape() {
            bail!(Shape, "facet block of node {s} is {:?}, expected {:?}", block.shape(), acc.shape());
        }
        acc.add_assign(block);
    }
    let inv = 1.0 / intermediates.len() as f64;
    Ok(acc.map(|x| x * inv))
}

/// Facet weighting of one edge. `path_facets` is `K x d`. Returns the edge
/// feature (`d`) and the facet weights (`K`).
///
/// `rng = None` disables Gumbel noise, and in Random mode requires a fixed
/// `fallback_facet`.
pub fn combine_facets<R: Rng + ?Sized>(
    path_facets: &Tensor,
    scorer: &Tensor,
    tau: f64,
    mode: EdgeWeightMode,
    rng: Option<&mut R>,
    fallback_facet: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(tau > 0.0) {
        bail!(Config, "temperature must be positive, got {tau}");
    }
    let (k, d) = path_facets.shape();
    scorer.expect_shape((1, d), "scorer")?;
    let alpha = match mode {
        EdgeWeightMode::Gumbel => {
            let logits: Vec<f64> = (0..k).map(|n| dot(path_facets.row(n), scorer.data())).collect();
            crate::numerics::gumbel_softmax_weights(&logits, tau, rng, false)?
        }
        EdgeWeightMode::Random => {
            let pick = match rng {
                Some(r) => r.gen_range(0..k),
                None => fallback_facet % k,
            };
            (0..k).map(|n| if n == pick { 1.0 } else { 0.0 }).collect()
        }
        EdgeWeightMode::None => return Ok((alloc::vec![1.0; d], alloc::vec![1.0 / k as f64; k])),
    };
    let mut p = alloc::vec![0.0; d];
    for (n, &a) in alpha.iter().enumerate() {
        for (o, x) in p.iter_mut().zip(path_facets.row(n)) {
            *o += a * x;
        }
    }
    Ok((p, alpha))
}

/// Fixed facet used by Random mode when noise is off.
pub fn fixed_random_facet(a: usize, b: usize, k: usize) -> usize {
    (crate::rng::mix(((a as u64) << 32) | b as u64, 0x6661_6365_7473) % k as u64) as usize
}

/// Per-edge facet blocks `P_n` (each `edges x d`) on the tape.
pub fn path_facets(tape: &mut Tape, embeddings: Var, facet_proj: &[Var], plan: &SubgraphPlan) -> Result<Vec<Var>> {
    let inter = tape.gather_rows(embeddings, &plan.inter_nodes)?;
    let inv = tape.constant(plan.inv_count.clone());
    let mut out = Vec::with_capacity(facet_proj.len());
    for &w in facet_proj {
        let projected = tape.matmul_t(inter, w)?;
        let occurrences = tape.gather_rows(projected, &plan.seg_src)?;
        let summed = tape.scatter_add_rows(occurrences, &plan.seg_edge, plan.num_edges())?;
        out.push(tape.row_scale(summed, inv)?);
    }
    Ok(out)
}

/// Combine per-edge facet blocks into edge features. Returns the feature
/// var and the realized facet weights.
pub fn edge_features<R: Rng + ?Sized>(
    tape: &mut Tape,
    facets: &[Var],
    scorer: Var,
    plan: &SubgraphPlan,
    hyper: &HyperParams,
    noise: bool,
    rng: &mut R,
) -> Result<(Var, Tensor)> {
    let k = facets.len();
    let edges = plan.num_edges();
    let d = tape.value(scorer).cols();
    let alpha = match hyper.edge_weight_mode {
        EdgeWeightMode::None => {
            let ones = tape.constant(Tensor::ones(edges, d));
            return Ok((ones, Tensor::filled(edges, k, 1.0 / k as f64)));
        }
        EdgeWeightMode::Gumbel => {
            let logits: Vec<Var> = facets.iter().map(|&p| tape.matmul_t(p, scorer)).collect::<Result<_>>()?;
            let logits = tape.concat_cols(&logits)?;
            gumbel_softmax(tape, logits, hyper.tau, noise.then_some(&mut *rng), hyper.hard)?
        }
        EdgeWeightMode::Random => {
            let pick = |e: usize, rng: &mut R| {
                if noise {
                    rng.gen_range(0..k)
                } else {
                    let (a, b) = plan.edge_pairs[e];
                    fixed_random_facet(plan.target_ids[a], plan.target_ids[b], k)
                }
            };
            let mut onehot = Tensor::zeros(edges, k);
            for e in 0..edges {
                let n = pick(e, rng);
                onehot.set(e, n, 1.0);
            }
            tape.constant(onehot)
        }
    };
    let mut combined = None;
    for (n, &p) in facets.iter().enumerate() {
        let w = tape.column(alpha, n)?;
        let term = tape.row_scale(p, w)?;
        combined = Some(match combined {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let alpha_value = tape.value(alpha).clone();
    Ok((combined.expect("k >= 1"), alpha_value))
}

/// Pre-normalization messages `msg(i) = Σ_j P(i, j) ⊙ h(j)`, both edge
/// directions, `targets x d`.
pub fn messages(tape: &mut Tape, h: Var, edge_features: Var, plan: &SubgraphPlan) -> Result<Var> {
    let neighbors = tape.gather_rows(h, &plan.msg_src)?;
    let gates = tape.gather_rows(edge_features, &plan.msg_edge)?;
    let gated = tape.hadamard(gates, neighbors)?;
    tape.scatter_add_rows(gated, &plan.msg_dst, plan.num_targets())
}

/// One convolution layer: messages, optional weight, batch norm, ELU,
/// dropout. Isolated targets get `dropout(ELU(BN(0)))`.
#[allow(clippy::too_many_arguments)]
pub fn conv_layer<R: Rng + ?Sized>(
    tape: &mut Tape,
    h: Var,
    edge_features: Var,
    plan: &SubgraphPlan,
    layer: usize,
    bound: &Bound,
    params: &mut ModelParams,
    hyper: &HyperParams,
    opts: ForwardOptions,
    rng: &mut R,
) -> Result<Var> {
    let mut msg = messages(tape, h, edge_features, plan)?;
    if let Some(&w) = bound.layer_weights.get(layer) {
        msg = tape.matmul_t(msg, w)?;
    }
    let normed = batch_norm(
        tape,
        msg,
        bound.bn_gamma[layer],
        bound.bn_beta[layer],
        &mut params.bn_state[layer],
        opts.batch_stats,
    )?;
    let act = tape.elu(normed)?;
    if opts.dropout {
        dropout(tape, act, hyper.dropout, rng)
    } else {
        Ok(act)
    }
}

/// Full forward pass over the facet subgraph.
pub fn forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    params: &mut ModelParams,
    plan: &SubgraphPlan,
    hyper: &HyperParams,
    opts: ForwardOptions,
    rng: &mut R,
) -> Result<Forward> {
    forward_layers(tape, params, plan, hyper, opts, params.layers(), rng)
}

/// [`forward`] with an explicit layer count; `layers = 0` returns the base
/// embeddings of the target nodes.
pub fn forward_layers<R: Rng + ?Sized>(
    tape: &mut Tape,
    params: &mut ModelParams,
    plan: &SubgraphPlan,
    hyper: &HyperParams,
    opts: ForwardOptions,
    layers: usize,
    rng: &mut R,
) -> Result<Forward> {
    if plan.num_edges() == 0 {
        return Err(crate::Error::Train { epoch: 0, message: "facet subgraph has no edges".into() });
    }
    if layers > params.layers() {
        bail!(Config, "{layers} layers requested, model has {}", params.layers());
    }
    params.check_shapes()?;
    let bound = Bound::new(tape, params);
    let facets = path_facets(tape, bound.embeddings, &bound.facet_proj, plan)?;
    let (features, alpha) = edge_features(tape, &facets, bound.scorer, plan, hyper, opts.noise, rng)?;
    let mut h = tape.gather_rows(bound.embeddings, &plan.target_ids)?;
    for l in 0..layers {
        h = conv_layer(tape, h, features, plan, l, &bound, params, hyper, opts, rng)?;
    }
    Ok(Forward { bound, embeddings: h, edge_features: features, alpha })
}

/// Class probabilities `softmax(h W_Cᵀ + b)`.
pub fn classify(tape: &mut Tape, fwd: &Forward) -> Result<Var> {
    let logits = tape.matmul_t(fwd.embeddings, fwd.bound.classifier)?;
    let logits = tape.add_row(logits, fwd.bound.classifier_bias)?;
    tape.softmax(logits)
}

/// Dot products `h(a)ᵀ h(b)` for local index pairs, `pairs x 1`.
pub fn pair_logits(tape: &mut Tape, h: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    let (left, right): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
    let l = tape.gather_rows(h, &left)?;
    let r = tape.gather_rows(h, &right)?;
    let prod = tape.hadamard(l, r)?;
    tape.row_sum(prod)
}

/// Link probabilities `σ(h(a)ᵀ h(b))` from final embeddings.
pub fn link_scores(h: &Tensor, pairs: &[(usize, usize)]) -> Vec<f64> {
    pairs.iter().map(|&(a, b)| crate::numerics::sigmoid_scalar(dot(h.row(a), h.row(b)))).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-wise softmax of a plain matrix.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..x.rows() {
        out.row_mut(r).copy_from_slice(&softmax_vec(x.row(r)));
    }
    out
}

#[cfg(test)]
mod tests;
