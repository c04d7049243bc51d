//! Warm-up of the base embeddings before the facet network is trained.
//!
//! Each epoch aggregates `h(v) = mean_{u ∈ N(v)} E(u)` over the full
//! heterogeneous graph and minimizes the first-order contrastive loss
//! `mean_edges [-ln σ(h(u)ᵀh(v)) - ln σ(-h(u)ᵀh(n))]` with one uniform
//! negative `n` per edge. After the loop `E` is replaced by `h` (nodes without
//! neighbors keep their row).

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::hetgraph::HeteroGraph;
use crate::numerics::{Adam, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct WarmUpConfig {
    /// Epoch cap; 0 leaves the initial embeddings untouched.
    pub max_epochs: usize,
    pub lr: f64,
    /// Minimum loss improvement that resets the patience counter.
    pub tol: f64,
    pub patience: usize,
    /// Include the negative-sample term.
    pub negatives: bool,
}

impl Default for WarmUpConfig {
    fn default() -> Self {
        Self { max_epochs: 200, lr: 1e-3, tol: 1e-4, patience: 5, negatives: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WarmUpTrace {
    /// Mean per-edge loss of every epoch.
    pub losses: Vec<f64>,
}

struct Aggregation {
    src: Vec<usize>,
    dst: Vec<usize>,
    inv_degree: Tensor,
}

impl Aggregation {
    fn new(g: &HeteroGraph) -> Self {
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for v in 0..g.num_nodes() {
            for &u in g.neighbors(v) {
                src.push(u);
                dst.push(v);
            }
        }
        let inv: Vec<f64> = (0..g.num_nodes())
            .map(|v| match g.degree(v) {
                0 => 0.0,
                d => 1.0 / d as f64,
            })
            .collect();
        Self { src, dst, inv_degree: Tensor::column_vector(&inv) }
    }

    fn apply(&self, tape: &mut Tape, e: Var) -> Result<Var> {
        let rows = tape.value(e).rows();
        let msgs = tape.gather_rows(e, &self.src)?;
        let summed = tape.scatter_add_rows(msgs, &self.dst, rows)?;
        let inv = tape.constant(self.inv_degree.clone());
        tape.row_scale(summed, inv)
    }
}

/// Warm up `embeddings` in place on `g`.
pub fn warm_up<R: Rng + ?Sized>(
    g: &HeteroGraph,
    embeddings: &mut Tensor,
    cfg: &WarmUpConfig,
    rng: &mut R,
) -> Result<WarmUpTrace> {
    let edges = g.edges();
    if edges.is_empty() {
        return Err(Error::Train { epoch: 0, message: "warm-up needs at least one edge".into() });
    }
    if embeddings.rows() != g.num_nodes() {
        crate::error::bail!(Shape, "{} embedding rows for {} nodes", embeddings.rows(), g.num_nodes());
    }
    let mut trace = WarmUpTrace::default();
    if cfg.max_epochs == 0 {
        return Ok(trace);
    }
    let agg = Aggregation::new(g);
    let (us, vs): (Vec<usize>, Vec<usize>) = edges.iter().copied().unzip();
    let inv_edges = 1.0 / edges.len() as f64;
    let n = g.num_nodes();
    let mut adam = Adam::new(cfg.lr, 0.0);
    let mut best = f64::INFINITY;
    let mut stale = 0;

    for epoch in 0..cfg.max_epochs {
        let mut tape = Tape::new();
        let e = tape.param(embeddings.clone());
        let h = agg.apply(&mut tape, e)?;
        let hu = tape.gather_rows(h, &us)?;
        let hv = tape.gather_rows(h, &vs)?;
        let prod = tape.hadamard(hu, hv)?;
        let pos = tape.row_sum(prod)?;
        let neg_pos = tape.scale(pos, -1.0)?;
        let pos_loss = tape.softplus(neg_pos)?;
        let mut total = tape.sum(pos_loss)?;
        if cfg.negatives && n > 1 {
            let negs: Vec<usize> = us
                .iter()
                .map(|&u| {
                    let mut x = rng.gen_range(0..n - 1);
                    if x >= u {
                        x += 1;
                    }
                    x
                })
                .collect();
            let hn = tape.gather_rows(h, &negs)?;
            let prod = tape.hadamard(hu, hn)?;
            let neg = tape.row_sum(prod)?;
            let neg_loss = tape.softplus(neg)?;
            let neg_total = tape.sum(neg_loss)?;
            total = tape.add(total, neg_total)?;
        }
        let loss = tape.scale(total, inv_edges)?;
        let value = tape.value(loss).get(0, 0);
        if !value.is_finite() {
            return Err(Error::Train { epoch, message: "warm-up loss is not finite".into() });
        }
        trace.losses.push(value);
        let grad = tape.backward(loss)?.wrt(e);
        adam.step(&mut [embeddings], &[grad])?;

        if best - value < cfg.tol {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        } else {
            stale = 0;
        }
        best = best.min(value);
    }

    let mut tape = Tape::new();
    let e = tape.constant(embeddings.clone());
    let h = agg.apply(&mut tape, e)?;
    let h = tape.value(h);
    for v in 0..n {
        if g.degree(v) > 0 {
            embeddings.row_mut(v).copy_from_slice(h.row(v));
        }
    }
    Ok(trace)
}
