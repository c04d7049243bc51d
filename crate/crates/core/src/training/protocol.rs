use alloc::string::String;
use alloc::vec::Vec;

use super::{sample_negatives, train, Clock, NoClock, Task, TrainConfig, TrainTrace};
use crate::error::{bail, Result};
use crate::eval::{auc, auc_ovr, kmeans, macro_f1, micro_f1, nmi, ari, KMeansConfig};
use crate::hetgraph::{make_split, HeteroGraph};
use crate::model::{classify, forward, link_scores, ForwardOptions, HyperParams, ModelParams, SubgraphPlan};
use crate::numerics::{Tape, Tensor};
use crate::rng;
use crate::stats::mean_std;
use crate::walker::{build_subgraph, FacetSubgraph, WalkConfig};

/// Node ids (classification) or node pairs (link prediction) of one split.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskData {
    Nc {
        train: Vec<usize>,
        val: Vec<usize>,
        test: Vec<usize>,
    },
    Lp {
        train_pos: Vec<(usize, usize)>,
        val_pos: Vec<(usize, usize)>,
        val_neg: Vec<(usize, usize)>,
        test_pos: Vec<(usize, usize)>,
        test_neg: Vec<(usize, usize)>,
    },
}

impl TaskData {
    /// Fraction of the split items that went to training.
    pub fn train_fraction(&self) -> f64 {
        let (a, b, c) = match self {
            Self::Nc { train, val, test } => (train.len(), val.len(), test.len()),
            Self::Lp { train_pos, val_pos, test_pos, .. } => (train_pos.len(), val_pos.len(), test_pos.len()),
        };
        a as f64 / (a + b + c) as f64
    }
}

/// Test-set scores. Clustering scores exist for node classification only.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub auc: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub nmi: Option<f64>,
    pub ari: Option<f64>,
}

/// Score trained parameters on the test part of `data`.
///
/// Classification predicts the argmax class; AUC is one-vs-rest; NMI and ARI
/// compare k-means clusters (k = number of classes) of the test embeddings
/// with the labels. Link prediction thresholds `σ(h_aᵀh_b)` at 0.5 for F1.
pub fn evaluate(
    g: &HeteroGraph,
    sub: &FacetSubgraph,
    params: &ModelParams,
    hyper: &HyperParams,
    data: &TaskData,
    seed: u64,
) -> Result<Evaluation> {
    let plan = SubgraphPlan::new(sub)?;
    let mut params = params.clone();
    let mut tape = Tape::new();
    let mut r = rng::seeded(seed);
    let fwd = forward(&mut tape, &mut params, &plan, hyper, ForwardOptions::eval(), &mut r)?;
    let local = |v: usize| match sub.local_index(v) {
        Some(l) => Ok(l),
        None => bail!(Contract, "node {v} is not a target node"),
    };
    match data {
        TaskData::Nc { test, .. } => {
            if test.is_empty() {
                bail!(Metric, "empty test set");
            }
            let probs = classify(&mut tape, &fwd)?;
            let probs = tape.value(probs);
            let h = tape.value(fwd.embeddings);
            let rows: Vec<usize> = test.iter().map(|&v| local(v)).collect::<Result<_>>()?;
            let truth: Vec<usize> = test
                .iter()
                .map(|&v| g.label(v).ok_or_else(|| crate::Error::Contract(alloc::format!("node {v} has no label"))))
                .collect::<Result<_>>()?;
            let classes = g.num_classes();
            let p = Tensor::from_fn(rows.len(), probs.cols(), |i, c| probs.get(rows[i], c));
            let pred: Vec<usize> = (0..p.rows()).map(|i| argmax(p.row(i))).collect();
            let emb = Tensor::from_fn(rows.len(), h.cols(), |i, c| h.get(rows[i], c));
            let clusters = kmeans(&emb, classes.min(rows.len()), seed, KMeansConfig::default())?;
            Ok(Evaluation {
                auc: auc_ovr(&p, &truth)?.value,
                micro_f1: micro_f1(&pred, &truth)?,
                macro_f1: macro_f1(&pred, &truth, Some(classes))?,
                nmi: Some(nmi(&clusters.labels, &truth)?),
                ari: Some(ari(&clusters.labels, &truth)?),
            })
        }
        TaskData::Lp { test_pos, test_neg, .. } => {
            let mut pairs = Vec::with_capacity(test_pos.len() + test_neg.len());
            for &(a, b) in test_pos.iter().chain(test_neg) {
                pairs.push((local(a)?, local(b)?));
            }
            let scores = link_scores(tape.value(fwd.embeddings), &pairs);
            let truth: Vec<bool> = (0..pairs.len()).map(|i| i < test_pos.len()).collect();
            let pred: Vec<usize> = scores.iter().map(|&s| usize::from(s >= 0.5)).collect();
            let t: Vec<usize> = truth.iter().map(|&b| usize::from(b)).collect();
            Ok(Evaluation {
                auc: auc(&scores, &truth)?,
                micro_f1: micro_f1(&pred, &t)?,
                macro_f1: macro_f1(&pred, &t, Some(2))?,
                nmi: None,
                ari: None,
            })
        }
    }
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// One row of a metrics report.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricRow {
    /// Ablation axis value; empty for a plain protocol run.
    pub axis_value: String,
    pub seed: u64,
    /// Fraction of split items actually used for training.
    pub train_fraction: f64,
    pub auc: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub nmi: Option<f64>,
    pub ari: Option<f64>,
    pub epochs: usize,
    pub best_epoch: usize,
    /// Summed per-epoch wall time; 0 without a clock.
    pub ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for one value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Aggregate {
    pub axis_value: String,
    pub runs: usize,
    pub auc: MeanStd,
    pub micro_f1: MeanStd,
    pub macro_f1: MeanStd,
    pub nmi: Option<MeanStd>,
    pub ari: Option<MeanStd>,
    pub epochs: MeanStd,
    pub ms: MeanStd,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
    /// One entry per distinct axis value, in first-appearance order.
    pub aggregates: Vec<Aggregate>,
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<MetricRow>) -> Self {
        let mut axes: Vec<&str> = Vec::new();
        for r in &rows {
            if !axes.contains(&r.axis_value.as_str()) {
                axes.push(&r.axis_value);
            }
        }
        let aggregates = axes
            .iter()
            .map(|&axis| {
                let group: Vec<&MetricRow> = rows.iter().filter(|r| r.axis_value == axis).collect();
                let col = |f: &dyn Fn(&MetricRow) -> f64| MeanStd::of(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
                let opt = |f: &dyn Fn(&MetricRow) -> Option<f64>| {
                    let v: Option<Vec<f64>> = group.iter().map(|r| f(r)).collect();
                    v.map(|v| MeanStd::of(&v))
                };
                Aggregate {
                    axis_value: axis.into(),
                    runs: group.len(),
                    auc: col(&|r| r.auc),
                    micro_f1: col(&|r| r.micro_f1),
                    macro_f1: col(&|r| r.macro_f1),
                    nmi: opt(&|r| r.nmi),
                    ari: opt(&|r| r.ari),
                    epochs: col(&|r| r.epochs as f64),
                    ms: col(&|r| r.ms),
                }
            })
            .collect();
        Self { rows, aggregates }
    }
}

/// Everything one protocol seed produced.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub row: MetricRow,
    pub trace: TrainTrace,
    pub params: ModelParams,
    pub subgraph: FacetSubgraph,
    pub data: TaskData,
}

/// Subgraph construction strategy; the std crate supplies a threaded one.
pub type SubgraphBuilder<'a> = &'a dyn Fn(&HeteroGraph, &WalkConfig) -> Result<FacetSubgraph>;

/// Split, walk, train and evaluate for one seed.
///
/// Link prediction splits the target-target edges, removes validation and
/// test positives before walking and training, and draws held-out negatives
/// against the full graph.
pub fn run_seed(
    g: &HeteroGraph,
    cfg: &TrainConfig,
    hyper: &HyperParams,
    seed: u64,
    clock: &dyn Clock,
    build: SubgraphBuilder<'_>,
) -> Result<SeedOutcome> {
    cfg.validate()?;
    let walk = WalkConfig { seed: rng::mix(cfg.walk.seed, seed), ..cfg.walk };
    let (train_graph, data) = match cfg.task {
        Task::NodeClassification => {
            let labeled: Vec<usize> = g.labels().keys().copied().collect();
            if labeled.is_empty() {
                bail!(Config, "node classification needs labeled target nodes");
            }
            let s = make_split(&labeled, cfg.split, seed)?;
            (None, TaskData::Nc { train: s.train, val: s.val, test: s.test })
        }
        Task::LinkPrediction => {
            let positives = g.target_edges();
            if positives.is_empty() {
                bail!(Config, "link prediction needs edges between target nodes");
            }
            let s = make_split(&positives, cfg.split, seed)?;
            let held: Vec<(usize, usize)> = s.val.iter().chain(&s.test).copied().collect();
            let mut r = rng::stream(seed, 3);
            let val_neg = sample_negatives(g, &s.val, cfg.neg_per_pos, &mut r)?;
            let test_neg = sample_negatives(g, &s.test, cfg.neg_per_pos, &mut r)?;
            if s.test.is_empty() {
                bail!(Config, "link prediction split left no test positives");
            }
            (
                Some(g.without_edges(&held)),
                TaskData::Lp { train_pos: s.train, val_pos: s.val, val_neg, test_pos: s.test, test_neg },
            )
        }
    };
    let tg = train_graph.as_ref().unwrap_or(g);
    let sub = build(tg, &walk)?;
    let (params, trace) = train(tg, &sub, &data, cfg, hyper, seed, clock)?;
    let ev = evaluate(g, &sub, &params, hyper, &data, seed)?;
    let row = MetricRow {
        axis_value: String::new(),
        seed,
        train_fraction: data.train_fraction(),
        auc: ev.auc,
        micro_f1: ev.micro_f1,
        macro_f1: ev.macro_f1,
        nmi: ev.nmi,
        ari: ev.ari,
        epochs: trace.epochs.len(),
        best_epoch: trace.best_epoch,
        ms: trace.total_ms(),
    };
    Ok(SeedOutcome { row, trace, params, subgraph: sub, data })
}

/// Sequential protocol over `cfg.seeds` without timings.
pub fn run_protocol(g: &HeteroGraph, cfg: &TrainConfig, hyper: &HyperParams) -> Result<MetricsReport> {
    run_protocol_with(g, cfg, hyper, &NoClock, &build_subgraph)
}

pub fn run_protocol_with(
    g: &HeteroGraph,
    cfg: &TrainConfig,
    hyper: &HyperParams,
    clock: &dyn Clock,
    build: SubgraphBuilder<'_>,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let rows = cfg
        .seeds
        .iter()
        .map(|&s| run_seed(g, cfg, hyper, s, clock, build).map(|o| o.row))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_rows(rows))
}
