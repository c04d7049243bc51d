//! Losses, negative sampling and the early-stopped training loop.
//!
//! Training is full-batch: one forward and backward pass over the whole facet
//! subgraph per epoch. Validation loss is computed in eval mode after every
//! optimizer step, and the parameters of the best validation epoch are
//! returned.

mod protocol;

pub use protocol::{
    evaluate, run_protocol, run_protocol_with, run_seed, Aggregate, Evaluation, MeanStd, MetricRow, MetricsReport,
    SeedOutcome, TaskData,
};

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Error, Result};
use crate::hetgraph::HeteroGraph;
use crate::model::{classify, forward, pair_logits, warm_up, Forward, ForwardOptions, HyperParams, ModelParams, SubgraphPlan};
use crate::numerics::{sigmoid_scalar, softplus_scalar, Adam, Tape, Tensor, Var, PROB_FLOOR};
use crate::rng;
use crate::walker::{FacetSubgraph, WalkConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Task {
    #[default]
    #[cfg_attr(feature = "serde", serde(rename = "nc"))]
    NodeClassification,
    #[cfg_attr(feature = "serde", serde(rename = "lp"))]
    LinkPrediction,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::NodeClassification => "nc",
            Self::LinkPrediction => "lp",
        }
    }
}

impl core::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nc" | "node_classification" => Ok(Self::NodeClassification),
            "lp" | "link_prediction" => Ok(Self::LinkPrediction),
            other => bail!(Config, "unknown task {other:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub task: Task,
    pub neg_per_pos: usize,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    /// Walk settings. The walk seed is mixed with each protocol seed.
    pub walk: WalkConfig,
    /// Turn NaN or infinite values on the tape into errors.
    pub check_finite: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-5,
            max_epochs: 500,
            patience: 20,
            seeds: alloc::vec![1, 10, 100, 1000, 10000],
            task: Task::NodeClassification,
            neg_per_pos: 1,
            split: [0.8, 0.1, 0.1],
            walk: WalkConfig::default(),
            check_finite: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            bail!(Config, "patience must be at least 1");
        }
        if self.seeds.is_empty() {
            bail!(Config, "seed list is empty");
        }
        if self.max_epochs == 0 {
            bail!(Config, "max_epochs must be at least 1");
        }
        if self.neg_per_pos == 0 {
            bail!(Config, "neg_per_pos must be at least 1");
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            bail!(Config, "lr must be positive and weight_decay non-negative");
        }
        self.walk.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    /// Counted from 1.
    pub epoch: usize,
    /// Summed task loss over the training items.
    pub train_loss: f64,
    /// `train_loss` divided by the number of training items.
    pub train_loss_mean: f64,
    pub val_loss: f64,
    /// Forward, backward, optimizer step and validation.
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainTrace {
    pub warmup_losses: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
}

impl TrainTrace {
    pub fn total_ms(&self) -> f64 {
        self.epochs.iter().map(|e| e.ms).sum()
    }
}

/// Validation-loss early stopping with an absolute improvement tolerance.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    tol: f64,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

/// Outcome of [`EarlyStopping::observe`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub const TOL: f64 = 1e-6;

    pub fn new(patience: usize) -> Self {
        Self { patience, tol: Self::TOL, best: f64::INFINITY, best_epoch: 0, stale: 0 }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> Observation {
        let improved = val_loss < self.best - self.tol;
        if improved {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Observation { improved, stop: self.stale >= self.patience }
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

/// Wall-clock source for per-epoch timings.
pub trait Clock {
    fn now_ms(&self) -> f64;
}

/// Clock that always reads zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_ms(&self) -> f64 {
        0.0
    }
}

/// Node-classification loss of plain probability rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NcLoss {
    pub sum: f64,
    pub mean: f64,
    /// Some true-label probability fell below the clamp.
    pub clamped: bool,
}

/// `-Σ ln p_v[y_v]` with probabilities clamped at `1e-12`.
pub fn loss_nc(probs: &Tensor, labels: &[usize]) -> Result<NcLoss> {
    if probs.rows() != labels.len() || labels.is_empty() {
        bail!(Shape, "{} probability rows for {} labels", probs.rows(), labels.len());
    }
    let mut sum = 0.0;
    let mut clamped = false;
    for (r, &y) in labels.iter().enumerate() {
        if y >= probs.cols() {
            bail!(Shape, "label {y} outside {} classes", probs.cols());
        }
        let p = probs.get(r, y);
        clamped |= p < PROB_FLOOR;
        sum -= libm::log(crate::numerics::clamp_prob(p));
    }
    Ok(NcLoss { sum, mean: sum / labels.len() as f64, clamped })
}

/// `-Σ ln σ(h_uᵀh_v)` over positives plus `-Σ ln σ(-h_uᵀh_v)` over negatives,
/// on plain embedding rows.
pub fn loss_lp(h: &Tensor, positives: &[(usize, usize)], negatives: &[(usize, usize)]) -> Result<f64> {
    let dot = |(a, b): (usize, usize)| -> Result<f64> {
        if a >= h.rows() || b >= h.rows() {
            bail!(Shape, "pair ({a}, {b}) outside {} rows", h.rows());
        }
        Ok(h.row(a).iter().zip(h.row(b)).map(|(x, y)| x * y).sum())
    };
    let mut total = 0.0;
    for &p in positives {
        total += softplus_scalar(-dot(p)?);
    }
    for &n in negatives {
        total += softplus_scalar(dot(n)?);
    }
    Ok(total)
}

/// Link probability of a pair of plain embedding rows.
pub fn link_probability(h: &Tensor, a: usize, b: usize) -> f64 {
    sigmoid_scalar(h.row(a).iter().zip(h.row(b)).map(|(x, y)| x * y).sum())
}

/// Corrupt the destination of every positive `(u, v)`, `neg_per_pos` times,
/// with a uniformly drawn target node that is neither `u` nor adjacent to it.
pub fn sample_negatives<R: Rng + ?Sized>(
    g: &HeteroGraph,
    positives: &[(usize, usize)],
    neg_per_pos: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    const CAP: usize = 1000;
    let candidates = g.target_nodes();
    if candidates.is_empty() {
        bail!(Sampling, "graph has no target-type node");
    }
    let mut out = Vec::with_capacity(positives.len() * neg_per_pos);
    for &(u, _) in positives {
        for _ in 0..neg_per_pos {
            let mut found = None;
            for _ in 0..CAP {
                let c = candidates[rng.gen_range(0..candidates.len())];
                if c != u && !g.has_edge(u, c) {
                    found = Some(c);
                    break;
                }
            }
            match found {
                Some(c) => out.push((u, c)),
                None => bail!(Sampling, "no negative for node {u} after {CAP} draws"),
            }
        }
    }
    Ok(out)
}

/// Task loss in subgraph-local indices.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// `(local row, label)` picks.
    Nc(&'a [(usize, usize)]),
    Lp { positives: &'a [(usize, usize)], negatives: &'a [(usize, usize)] },
}

impl Objective<'_> {
    pub fn items(&self) -> usize {
        match self {
            Self::Nc(p) => p.len(),
            Self::Lp { positives, negatives } => positives.len() + negatives.len(),
        }
    }
}

/// Forward pass plus task loss on the tape.
pub fn objective<R: Rng + ?Sized>(
    tape: &mut Tape,
    params: &mut ModelParams,
    plan: &SubgraphPlan,
    hyper: &HyperParams,
    opts: ForwardOptions,
    rng: &mut R,
    obj: Objective<'_>,
) -> Result<(Var, Forward)> {
    let fwd = forward(tape, params, plan, hyper, opts, rng)?;
    let loss = match obj {
        Objective::Nc(picks) => {
            let probs = classify(tape, &fwd)?;
            tape.nll_sum(probs, picks)?
        }
        Objective::Lp { positives, negatives } => {
            let pos = pair_logits(tape, fwd.embeddings, positives)?;
            let pos = tape.scale(pos, -1.0)?;
            let pos = tape.softplus(pos)?;
            let mut total = tape.sum(pos)?;
            if !negatives.is_empty() {
                let neg = pair_logits(tape, fwd.embeddings, negatives)?;
                let neg = tape.softplus(neg)?;
                let neg = tape.sum(neg)?;
                total = tape.add(total, neg)?;
            }
            total
        }
    };
    Ok((loss, fwd))
}

/// Loss value and gradients in [`ModelParams::trainables`] order.
pub fn objective_gradients<R: Rng + ?Sized>(
    params: &mut ModelParams,
    plan: &SubgraphPlan,
    hyper: &HyperParams,
    opts: ForwardOptions,
    rng: &mut R,
    obj: Objective<'_>,
    check_finite: bool,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::with_finite_checks(check_finite);
    let (loss, fwd) = objective(&mut tape, params, plan, hyper, opts, rng, obj)?;
    let value = tape.value(loss).get(0, 0);
    let grads = tape.backward(loss)?;
    Ok((value, fwd.bound.vars().into_iter().map(|v| grads.wrt(v)).collect()))
}

/// Loss value of one forward pass, no gradients.
pub fn objective_value<R: Rng + ?Sized>(
    params: &mut ModelParams,
    plan: &SubgraphPlan,
    hyper: &HyperParams,
    opts: ForwardOptions,
    rng: &mut R,
    obj: Objective<'_>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss, _) = objective(&mut tape, params, plan, hyper, opts, rng, obj)?;
    Ok(tape.value(loss).get(0, 0))
}

fn local_pairs(sub: &FacetSubgraph, pairs: &[(usize, usize)]) -> Result<Vec<(usize, usize)>> {
    pairs
        .iter()
        .map(|&(a, b)| match (sub.local_index(a), sub.local_index(b)) {
            (Some(x), Some(y)) => Ok((x, y)),
            _ => bail!(Contract, "pair ({a}, {b}) is not between target nodes"),
        })
        .collect()
}

fn local_labels(g: &HeteroGraph, sub: &FacetSubgraph, nodes: &[usize]) -> Result<Vec<(usize, usize)>> {
    nodes
        .iter()
        .map(|&v| match (sub.local_index(v), g.label(v)) {
            (Some(l), Some(y)) => Ok((l, y)),
            (None, _) => bail!(Contract, "node {v} is not a target node"),
            (_, None) => bail!(Contract, "node {v} has no label"),
        })
        .collect()
}

/// Seeded initialization, warm-up on `g`, then [`train_from`].
///
/// For link prediction `g` is the training graph (held-out positives
/// removed) and also the graph negatives are drawn against.
pub fn train(
    g: &HeteroGraph,
    sub: &FacetSubgraph,
    data: &TaskData,
    cfg: &TrainConfig,
    hyper: &HyperParams,
    seed: u64,
    clock: &dyn Clock,
) -> Result<(ModelParams, TrainTrace)> {
    cfg.validate()?;
    hyper.validate()?;
    let mut init_rng = rng::stream(seed, 1);
    let mut params = ModelParams::init(g, hyper, &mut init_rng)?;
    let warm = warm_up(g, &mut params.embeddings, &hyper.warmup, &mut init_rng)?;
    let (params, mut trace) = train_from(params, g, sub, data, cfg, hyper, seed, clock)?;
    trace.warmup_losses = warm.losses;
    Ok((params, trace))
}

/// The epoch loop from given initial parameters.
#[allow(clippy::too_many_arguments)]
pub fn train_from(
    mut params: ModelParams,
    g: &HeteroGraph,
    sub: &FacetSubgraph,
    data: &TaskData,
    cfg: &TrainConfig,
    hyper: &HyperParams,
    seed: u64,
    clock: &dyn Clock,
) -> Result<(ModelParams, TrainTrace)> {
    cfg.validate()?;
    hyper.validate()?;
    let plan = SubgraphPlan::new(sub)?;
    let mut rng = rng::stream(seed, 2);

    enum Local {
        Nc { train: Vec<(usize, usize)>, val: Vec<(usize, usize)> },
        Lp { train: Vec<(usize, usize)>, val_pos: Vec<(usize, usize)>, val_neg: Vec<(usize, usize)> },
    }
    let local = match data {
        TaskData::Nc { train, val, .. } => {
            if val.is_empty() || train.is_empty() {
                bail!(Config, "node classification needs non-empty train and validation sets");
            }
            Local::Nc { train: local_labels(g, sub, train)?, val: local_labels(g, sub, val)? }
        }
        TaskData::Lp { train_pos, val_pos, val_neg, .. } => {
            if val_pos.is_empty() || train_pos.is_empty() {
                bail!(Config, "link prediction needs non-empty train and validation positives");
            }
            Local::Lp {
                train: local_pairs(sub, train_pos)?,
                val_pos: local_pairs(sub, val_pos)?,
                val_neg: local_pairs(sub, val_neg)?,
            }
        }
    };
    let train_pairs = match data {
        TaskData::Lp { train_pos, .. } => train_pos.as_slice(),
        TaskData::Nc { .. } => &[],
    };

    let mut adam = Adam::new(cfg.lr, cfg.weight_decay);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let start = clock.now_ms();
        let negatives = match &local {
            Local::Lp { .. } => local_pairs(sub, &sample_negatives(g, train_pairs, cfg.neg_per_pos, &mut rng)?)?,
            Local::Nc { .. } => Vec::new(),
        };
        let train_obj = match &local {
            Local::Nc { train, .. } => Objective::Nc(train),
            Local::Lp { train, .. } => Objective::Lp { positives: train, negatives: &negatives },
        };
        let step = objective_gradients(
            &mut params,
            &plan,
            hyper,
            ForwardOptions::train(),
            &mut rng,
            train_obj,
            cfg.check_finite,
        );
        let (train_loss, grads) = match step {
            Ok(v) => v,
            Err(Error::Numerics(message)) => return Err(Error::Train { epoch, message }),
            Err(e) => return Err(e),
        };
        if !train_loss.is_finite() || !grads.iter().all(Tensor::all_finite) {
            return Err(Error::Train { epoch, message: "training loss or gradient is not finite".into() });
        }
        adam.step(&mut params.trainables_mut(), &grads)?;

        let val_obj = match &local {
            Local::Nc { val, .. } => Objective::Nc(val),
            Local::Lp { val_pos, val_neg, .. } => Objective::Lp { positives: val_pos, negatives: val_neg },
        };
        let val_loss = objective_value(&mut params, &plan, hyper, ForwardOptions::eval(), &mut rng, val_obj)?;
        if !val_loss.is_finite() {
            return Err(Error::Train { epoch, message: "validation loss is not finite".into() });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            train_loss_mean: train_loss / train_obj.items() as f64,
            val_loss,
            ms: clock.now_ms() - start,
        });
        let obs = stopper.observe(epoch, val_loss);
        if obs.improved {
            best = params.clone();
        }
        if obs.stop {
            stop_reason = StopReason::Patience;
            break;
        }
    }
    let (best_epoch, best_val_loss) = stopper.best();
    Ok((best, TrainTrace { warmup_losses: Vec::new(), epochs, best_epoch, best_val_loss, stop_reason }))
}
