//! Ablation sweeps and runtime-vs-K scaling.

use std::path::PathBuf;
use std::time::Instant;

use facetpath_core::hetgraph::{generate_synthetic, SyntheticSpec};
use facetpath_core::model::{EdgeWeightMode, ForwardOptions, SubgraphPlan};
use facetpath_core::numerics::Adam;
use facetpath_core::stats::{linear_fit, LinearFit};
use facetpath_core::training::{objective_gradients, run_seed, Clock, Objective};
use facetpath_core::walker::build_subgraph;
use facetpath_core::{rng, HeteroGraph, HyperParams, MetricsReport, ModelParams, WalkConfig};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::parallel::par_map;

/// Validation share used by every train-ratio setting; the test share is
/// what remains.
pub const TRAIN_RATIO_VAL: f64 = 0.1;

/// The swept quantity and its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "snake_case")]
pub enum AblationAxis {
    EdgeWeightMode(Vec<EdgeWeightMode>),
    FacetCount(Vec<usize>),
    Temperature(Vec<f64>),
    TrainRatio(Vec<f64>),
}

impl AblationAxis {
    pub fn len(&self) -> usize {
        match self {
            Self::EdgeWeightMode(v) => v.len(),
            Self::FacetCount(v) => v.len(),
            Self::Temperature(v) | Self::TrainRatio(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Label and configuration of the `i`-th value.
    pub fn apply(&self, i: usize, base: &RunConfig) -> (String, RunConfig) {
        let mut cfg = base.clone();
        let label = match self {
            Self::EdgeWeightMode(v) => {
                cfg.hyper.edge_weight_mode = v[i];
                v[i].as_str().to_string()
            }
            Self::FacetCount(v) => {
                cfg.hyper.k_facets = v[i];
                v[i].to_string()
            }
            Self::Temperature(v) => {
                cfg.hyper.tau = v[i];
                format!("{:?}", v[i])
            }
            Self::TrainRatio(v) => {
                cfg.train.split = [v[i], TRAIN_RATIO_VAL, 1.0 - TRAIN_RATIO_VAL - v[i]];
                format!("{:?}", v[i])
            }
        };
        (label, cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Config("ablation needs at least one value".into()));
        }
        let bad = match self {
            Self::EdgeWeightMode(_) => None,
            Self::FacetCount(v) => v.iter().find(|&&k| k == 0).map(|k| format!("facet count {k}")),
            Self::Temperature(v) => v.iter().find(|t| !(t.is_finite() && **t > 0.0)).map(|t| format!("temperature {t}")),
            Self::TrainRatio(v) => v
                .iter()
                .find(|r| !(**r > 0.0 && **r < 1.0 - TRAIN_RATIO_VAL))
                .map(|r| format!("train ratio {r} (must lie in (0, {}))", 1.0 - TRAIN_RATIO_VAL)),
        };
        match bad {
            Some(what) => Err(Error::Config(format!("invalid {what}"))),
            None => Ok(()),
        }
    }
}

/// Where the graph of an ablation comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Synthetic(SyntheticSpec),
    Dir(PathBuf),
}

impl Dataset {
    pub fn load(&self) -> Result<HeteroGraph> {
        match self {
            Self::Synthetic(spec) => Ok(generate_synthetic(spec)?.graph),
            Self::Dir(dir) => crate::io::load_graph(dir),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    #[serde(flatten)]
    pub axis: AblationAxis,
    #[serde(default)]
    pub base: RunConfig,
    pub dataset: Dataset,
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        self.axis.validate()?;
        for i in 0..self.axis.len() {
            self.axis.apply(i, &self.base).1.validate()?;
        }
        Ok(())
    }
}

/// Every (axis value, seed) protocol run, spread over `workers` threads.
///
/// Rows are ordered by axis value (in the order given), then by ascending seed.
pub fn run_ablation(spec: &AblationSpec, workers: usize, clock: &(dyn Clock + Sync)) -> Result<MetricsReport> {
    spec.validate()?;
    let g = spec.dataset.load()?;
    run_ablation_on(&g, spec, workers, clock)
}

/// [`run_ablation`] on an already loaded graph; `spec.dataset` is ignored.
pub fn run_ablation_on(
    g: &HeteroGraph,
    spec: &AblationSpec,
    workers: usize,
    clock: &(dyn Clock + Sync),
) -> Result<MetricsReport> {
    spec.validate()?;
    let mut seeds = spec.base.train.seeds.clone();
    seeds.sort_unstable();
    let configs: Vec<(String, RunConfig)> = (0..spec.axis.len()).map(|i| spec.axis.apply(i, &spec.base)).collect();
    let jobs: Vec<(usize, u64)> = (0..configs.len()).flat_map(|v| seeds.iter().map(move |&s| (v, s))).collect();
    let rows = par_map(&jobs, workers, |&(v, seed)| {
        let (label, cfg) = &configs[v];
        run_seed(g, &cfg.train, &cfg.hyper, seed, clock, &build_subgraph).map(|o| {
            let mut row = o.row;
            row.axis_value = label.clone();
            row
        })
    });
    Ok(MetricsReport::from_rows(rows.into_iter().collect::<facetpath_core::Result<_>>()?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    pub ks: Vec<usize>,
    /// Timed epochs per K before any automatic increase.
    pub epochs: usize,
    /// A mean epoch below this many ms doubles the epoch count and retries.
    pub min_epoch_ms: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub hyper: HyperParams,
    pub walk: WalkConfig,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            ks: vec![1, 2, 4, 8],
            epochs: 20,
            min_epoch_ms: 1.0,
            max_epochs: 20 * 64,
            seed: 1,
            hyper: HyperParams::default(),
            walk: WalkConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingPoint {
    pub k: usize,
    pub epochs: usize,
    pub ms_per_epoch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub points: Vec<TimingPoint>,
    pub fit: LinearFit,
    pub edges: usize,
}

/// Mean forward+backward time per full-batch epoch for each K, and the least
/// squares line `ms = a + b K` through the means.
///
/// The subgraph is walked once up front; walking, initialization and the
/// optimizer update are outside the timed region. Runs on the calling thread.
pub fn time_scaling(g: &HeteroGraph, cfg: &TimingConfig) -> Result<TimingReport> {
    let mut distinct = cfg.ks.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(facetpath_core::Error::Config(format!(
            "time scaling needs at least 3 distinct K values, got {:?}",
            cfg.ks
        ))
        .into());
    }
    if cfg.epochs < 20 {
        return Err(Error::Config(format!("time scaling needs at least 20 epochs, got {}", cfg.epochs)));
    }
    let sub = build_subgraph(g, &WalkConfig { seed: cfg.seed, ..cfg.walk })?;
    let plan = SubgraphPlan::new(&sub)?;
    let labeled: Vec<(usize, usize)> = plan
        .target_ids()
        .iter()
        .enumerate()
        .filter_map(|(l, &v)| g.label(v).map(|y| (l, y)))
        .collect();
    let edges: Vec<(usize, usize)> = plan.edge_pairs().to_vec();
    let obj = if labeled.is_empty() {
        Objective::Lp { positives: &edges, negatives: &[] }
    } else {
        Objective::Nc(&labeled)
    };
    if obj.items() == 0 {
        return Err(Error::Config("graph gives nothing to train on".into()));
    }

    let mut points = Vec::new();
    for &k in &cfg.ks {
        let hyper = HyperParams { k_facets: k, ..cfg.hyper.clone() };
        hyper.validate()?;
        let mut epochs = cfg.epochs;
        let ms_per_epoch = loop {
            let ms = time_epochs(g, &plan, &hyper, obj, epochs, cfg.seed)?;
            if ms >= cfg.min_epoch_ms || epochs >= cfg.max_epochs {
                break ms;
            }
            epochs = (epochs * 2).min(cfg.max_epochs);
        };
        points.push(TimingPoint { k, epochs, ms_per_epoch });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.k as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.ms_per_epoch).collect();
    let fit = linear_fit(&xs, &ys).ok_or_else(|| Error::Config("degenerate timing fit".into()))?;
    Ok(TimingReport { points, fit, edges: sub.num_edges() })
}

fn time_epochs(
    g: &HeteroGraph,
    plan: &SubgraphPlan,
    hyper: &HyperParams,
    obj: Objective<'_>,
    epochs: usize,
    seed: u64,
) -> Result<f64> {
    let mut init = rng::stream(seed, 1);
    let mut params = ModelParams::init(g, hyper, &mut init)?;
    let mut r = rng::stream(seed, 2);
    let mut adam = Adam::new(1e-3, 1e-5);
    let mut step = |params: &mut ModelParams| -> Result<f64> {
        let t = Instant::now();
        let (_, grads) = objective_gradients(params, plan, hyper, ForwardOptions::train(), &mut r, obj, false)?;
        let ms = t.elapsed().as_secs_f64() * 1e3;
        adam.step(&mut params.trainables_mut(), &grads)?;
        Ok(ms)
    };
    // One untimed epoch warms caches and the allocator.
    step(&mut params)?;
    let mut total = 0.0;
    for _ in 0..epochs {
        total += step(&mut params)?;
    }
    Ok(total / epochs as f64)
}
