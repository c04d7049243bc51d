//! End-to-end use of the public API: generate, walk, train, evaluate.

use facetpath_core::hetgraph::generate_synthetic;
use facetpath_core::model::WarmUpConfig;
use facetpath_core::training::run_protocol;
use facetpath_core::walker::build_subgraph;
use facetpath_core::{HyperParams, SyntheticSpec, Task, TrainConfig, WalkConfig};
use proptest::prelude::*;

fn quick() -> (TrainConfig, HyperParams) {
    let train = TrainConfig {
        max_epochs: 8,
        patience: 3,
        seeds: vec![3, 1, 2],
        walk: WalkConfig { attempts: 60, ..Default::default() },
        ..Default::default()
    };
    let hyper = HyperParams {
        dim: 8,
        k_facets: 3,
        warmup: WarmUpConfig { max_epochs: 5, ..Default::default() },
        ..Default::default()
    };
    (train, hyper)
}

#[test]
fn node_classification_protocol_end_to_end() {
    let g = generate_synthetic(&SyntheticSpec { n_per_type: 60, ..Default::default() }).unwrap().graph;
    let (train, hyper) = quick();
    let report = run_protocol(&g, &train, &hyper).unwrap();
    let seeds: Vec<u64> = report.rows.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, train.seeds);
    assert_eq!(report.aggregates.len(), 1);
    assert_eq!(report.aggregates[0].runs, 3);
    for r in &report.rows {
        assert!((0.0..=1.0).contains(&r.auc));
        assert!((0.0..=1.0).contains(&r.micro_f1) && (0.0..=1.0).contains(&r.macro_f1));
        assert!(r.nmi.is_some() && r.ari.is_some());
        assert!((1..=r.epochs).contains(&r.best_epoch) && r.epochs <= train.max_epochs);
    }
    assert_eq!(run_protocol(&g, &train, &hyper).unwrap(), report);
}

#[test]
fn link_prediction_protocol_end_to_end() {
    let g = generate_synthetic(&SyntheticSpec { n_per_type: 40, target_links: 3, ..Default::default() })
        .unwrap()
        .graph;
    let (mut train, hyper) = quick();
    train.task = Task::LinkPrediction;
    let report = run_protocol(&g, &train, &hyper).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert!(report.rows.iter().all(|r| r.nmi.is_none() && (0.0..=1.0).contains(&r.auc)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Every subgraph edge joins two distinct target nodes through a valid walk.
    #[test]
    fn subgraph_edges_are_valid_walks(seed in any::<u64>(), len in 2usize..7, strict in any::<bool>()) {
        let g = generate_synthetic(&SyntheticSpec { n_per_type: 12, seed, ..Default::default() }).unwrap().graph;
        let cfg = WalkConfig { path_length: len, attempts: 15, seed, strict_f1: strict };
        let sub = build_subgraph(&g, &cfg).unwrap();
        let target = g.target_type();
        for e in sub.edges() {
            prop_assert!(e.a < e.b);
            prop_assert_eq!(e.path.pair(), (e.a, e.b));
            prop_assert!(g.node_type(e.a) == target && g.node_type(e.b) == target);
            prop_assert!(sub.local_index(e.a).is_some() && sub.local_index(e.b).is_some());
            e.path.validate(&g, len).unwrap();
        }
        prop_assert_eq!(build_subgraph(&g, &cfg).unwrap(), sub);
    }
}
