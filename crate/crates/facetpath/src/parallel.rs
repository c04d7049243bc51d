//! Thread-level parallelism. Every function here returns exactly what its
//! sequential counterpart returns, for any worker count.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use facetpath_core::training::{run_seed, Clock, SeedOutcome};
use facetpath_core::walker::{build_subgraph, walks_from};
use facetpath_core::{FacetSubgraph, HeteroGraph, HyperParams, MetricsReport, Result, TrainConfig, WalkConfig};

/// Milliseconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct WallClock {
    origin: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now_ms(&self) -> f64 {
        self.origin.elapsed().as_secs_f64() * 1e3
    }
}

/// Worker count from the machine, at least 1.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// `items.map(f)` over up to `workers` threads. Output order equals input
/// order; items are handed out dynamically.
pub fn par_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// [`build_subgraph`] with start nodes spread over `workers` threads.
///
/// Each start node owns its RNG stream and the per-node walk lists are merged
/// in ascending start order, so the subgraph is identical to the sequential
/// one.
pub fn build_subgraph_parallel(g: &HeteroGraph, cfg: &WalkConfig, workers: usize) -> Result<FacetSubgraph> {
    if workers <= 1 {
        return build_subgraph(g, cfg);
    }
    cfg.validate()?;
    let targets = g.target_nodes();
    if targets.is_empty() {
        return build_subgraph(g, cfg);
    }
    let chunk = targets.len().div_ceil(workers);
    let blocks: Vec<&[usize]> = targets.chunks(chunk).collect();
    let walks = par_map(&blocks, workers, |block| {
        block.iter().map(|&s| walks_from(g, s, cfg)).collect::<Result<Vec<_>>>()
    });
    let mut merged = Vec::with_capacity(targets.len());
    for w in walks {
        merged.extend(w?);
    }
    Ok(FacetSubgraph::from_walks(targets, merged))
}

/// One protocol run per seed of `cfg.seeds`, spread over `workers` threads.
/// Each seed walks sequentially; results come back in seed-list order.
pub fn run_seeds(
    g: &HeteroGraph,
    cfg: &TrainConfig,
    hyper: &HyperParams,
    workers: usize,
    clock: &(dyn Clock + Sync),
) -> Result<Vec<SeedOutcome>> {
    cfg.validate()?;
    hyper.validate()?;
    par_map(&cfg.seeds, workers, |&seed| run_seed(g, cfg, hyper, seed, clock, &build_subgraph))
        .into_iter()
        .collect()
}

/// Parallel form of `run_protocol`.
pub fn run_protocol_parallel(
    g: &HeteroGraph,
    cfg: &TrainConfig,
    hyper: &HyperParams,
    workers: usize,
    clock: &(dyn Clock + Sync),
) -> Result<MetricsReport> {
    let outcomes = run_seeds(g, cfg, hyper, workers, clock)?;
    Ok(MetricsReport::from_rows(outcomes.into_iter().map(|o| o.row).collect()))
}
