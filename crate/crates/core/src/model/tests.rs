use super::*;
use crate::hetgraph::HeteroGraph;
use crate::rng;
use crate::walker::{FacetEdge, FacetSubgraph, PathRecord};
use alloc::string::{String, ToString};
use alloc::vec;

fn names() -> Vec<String> {
    vec!["A".to_string(), "B".to_string()]
}

fn hyper(k: usize, mode: EdgeWeightMode, dim: usize) -> HyperParams {
    HyperParams { k_facets: k, dim, edge_weight_mode: mode, ..HyperParams::default() }
}

fn edge(nodes: &[usize]) -> FacetEdge {
    let path = PathRecord { nodes: nodes.to_vec() };
    let (a, b) = path.pair();
    FacetEdge { a, b, path }
}

/// Targets 0, 1, 2, 3; bridges 4, 5, 6.
fn star() -> (HeteroGraph, FacetSubgraph) {
    let g = HeteroGraph::new(
        names(),
        vec![0, 0, 0, 0, 1, 1, 1],
        &[(0, 4), (1, 4), (0, 5), (2, 5), (0, 6), (3, 6), (5, 6)],
        0,
    )
    .unwrap();
    let sub = FacetSubgraph::from_edges(
        vec![0, 1, 2, 3],
        vec![edge(&[0, 4, 1]), edge(&[2, 5, 0]), edge(&[0, 6, 5, 6, 3])],
    );
    (g, sub)
}

fn params_for(g: &HeteroGraph, h: &HyperParams, seed: u64) -> ModelParams {
    let mut r = rng::seeded(seed);
    let mut p = ModelParams::init(g, h, &mut r).unwrap();
    // Non-trivial affine parameters.
    for (l, (gm, bt)) in p.bn_gamma.iter_mut().zip(p.bn_beta.iter_mut()).enumerate() {
        *gm = Tensor::from_fn(1, h.dim, |_, c| 1.0 + 0.1 * (c as f64) - 0.05 * l as f64);
        *bt = Tensor::from_fn(1, h.dim, |_, c| 0.02 * (c as f64) - 0.03);
    }
    p
}

#[test]
fn projection_examples() {
    let e = [0.5, -1.0, 2.0];
    let eye = vec![Tensor::identity(3); 4];
    let f = project_facets(&e, &eye).unwrap();
    for n in 0..4 {
        assert_eq!(f.row(n), &e);
    }
    let w = Tensor::from_fn(3, 3, |r, c| (r + 2 * c) as f64);
    let single = project_facets(&e, core::slice::from_ref(&w)).unwrap();
    assert_eq!(single.shape(), (1, 3));
    assert_eq!(project_facets(&[0.0; 3], &[w.clone(), w]).unwrap(), Tensor::zeros(2, 3));
    assert!(project_facets(&e, &[Tensor::identity(2)]).is_err());
}

#[test]
fn aggregation_examples() {
    let x = Tensor::from_fn(2, 3, |r, c| (r * 3 + c) as f64 - 2.5);
    let neg = x.map(|v| -v);
    let third = Tensor::from_fn(2, 3, |r, c| (r + c) as f64 * 0.25);
    let table = [x.clone(), neg, third.clone()];
    assert_eq!(aggregate_path(&[0], |i| &table[i]).unwrap(), x);
    assert_eq!(aggregate_path(&[0, 1], |i| &table[i]).unwrap(), Tensor::zeros(2, 3));
    let mean3 = aggregate_path(&[0, 1, 2], |i| &table[i]).unwrap();
    for r in 0..2 {
        for c in 0..3 {
            let brute = (table[0].get(r, c) + table[1].get(r, c) + table[2].get(r, c)) / 3.0;
            assert!((mean3.get(r, c) - brute).abs() < 1e-15);
        }
    }
    assert!(matches!(aggregate_path(&[], |i| &table[i]), Err(crate::Error::Contract(_))));
}

#[test]
fn combine_examples() {
    let facets = Tensor::from_vec(1, 3, vec![0.2, -0.4, 0.9]).unwrap();
    let scorer = Tensor::row_vector(&[0.3, 0.1, -0.7]);
    for mode in [EdgeWeightMode::Gumbel, EdgeWeightMode::Random] {
        let (p, a) = combine_facets::<rng::Rng>(&facets, &scorer, 0.5, mode, None, 0).unwrap();
        assert_eq!(a, vec![1.0]);
        assert_eq!(p, facets.row(0));
    }
    let (p, _) = combine_facets::<rng::Rng>(&facets, &scorer, 0.5, EdgeWeightMode::None, None, 0).unwrap();
    assert_eq!(p, vec![1.0; 3]);

    // Equal logits: the scorer is orthogonal to every facet difference.
    let equal = Tensor::from_vec(3, 2, vec![1.0, 0.0, 1.0, 5.0, 1.0, -2.0]).unwrap();
    let (p, a) =
        combine_facets::<rng::Rng>(&equal, &Tensor::row_vector(&[1.0, 0.0]), 1.0, EdgeWeightMode::Gumbel, None, 0)
            .unwrap();
    for &w in &a {
        assert!((w - 1.0 / 3.0).abs() < 1e-15);
    }
    assert!((p[0] - 1.0).abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15);

    // Two facets by hand: logits 0.5 and -0.25 at tau 0.5 -> softmax(1, -0.5).
    let two = Tensor::from_vec(2, 2, vec![1.0, 0.5, -0.5, 0.25]).unwrap();
    let w_b = Tensor::row_vector(&[0.5, 0.0]);
    let (p, a) = combine_facets::<rng::Rng>(&two, &w_b, 0.5, EdgeWeightMode::Gumbel, None, 0).unwrap();
    let e1 = libm::exp(1.0);
    let e2 = libm::exp(-0.5);
    let a0 = e1 / (e1 + e2);
    assert!((a[0] - a0).abs() < 1e-15 && (a[1] - (1.0 - a0)).abs() < 1e-15);
    assert!((p[0] - (a0 * 1.0 + (1.0 - a0) * -0.5)).abs() < 1e-15);
    assert!((p[1] - (a0 * 0.5 + (1.0 - a0) * 0.25)).abs() < 1e-15);

    assert!(combine_facets::<rng::Rng>(&two, &w_b, 0.0, EdgeWeightMode::Gumbel, None, 0).is_err());
}

#[test]
fn single_edge_message() {
    let sub = FacetSubgraph::from_edges(vec![0, 2], vec![edge(&[0, 1, 2])]);
    let plan = SubgraphPlan::new(&sub).unwrap();
    let mut t = Tape::new();
    let h = t.constant(Tensor::from_vec(2, 3, vec![9.0, 9.0, 9.0, 1.0, 1.0, 1.0]).unwrap());
    let p = t.constant(Tensor::filled(1, 3, 0.5));
    let m = messages(&mut t, h, p, &plan).unwrap();
    assert_eq!(t.value(m).row(0), &[0.5, 0.5, 0.5]);
    assert_eq!(t.value(m).row(1), &[4.5, 4.5, 4.5]);
}

#[test]
fn star_messages_match_brute_force() {
    let (_, sub) = star();
    let plan = SubgraphPlan::new(&sub).unwrap();
    let hv = Tensor::from_fn(4, 3, |r, c| libm::cos((r * 3 + c) as f64));
    let pv = Tensor::from_fn(3, 3, |r, c| libm::sin((r + 2 * c) as f64 + 0.3));
    let mut t = Tape::new();
    let h = t.constant(hv.clone());
    let p = t.constant(pv.clone());
    let m = messages(&mut t, h, p, &plan).unwrap();
    for i in 0..4 {
        let mut expect = [0.0; 3];
        for (e, fe) in sub.edges().iter().enumerate() {
            let other = if fe.a == i { fe.b } else if fe.b == i { fe.a } else { continue };
            for c in 0..3 {
                expect[c] += pv.get(e, c) * hv.get(other, c);
            }
        }
        for c in 0..3 {
            assert!((t.value(m).get(i, c) - expect[c]).abs() < 1e-15);
        }
    }
}

#[test]
fn tape_facets_match_plain_functions() {
    let (g, sub) = star();
    let h = HyperParams { dim: 4, k_facets: 3, ..HyperParams::default() };
    let params = params_for(&g, &h, 3);
    let plan = SubgraphPlan::new(&sub).unwrap();
    let mut t = Tape::new();
    let bound = Bound::new(&mut t, &params);
    let facets = path_facets(&mut t, bound.embeddings, &bound.facet_proj, &plan).unwrap();
    let mut r = rng::seeded(0);
    let (feat, alpha) = edge_features(&mut t, &facets, bound.scorer, &plan, &h, false, &mut r).unwrap();

    let blocks: Vec<Tensor> =
        (0..g.num_nodes()).map(|v| project_facets(params.embeddings.row(v), &params.facet_proj).unwrap()).collect();
    for (e, fe) in sub.edges().iter().enumerate() {
        let pf = aggregate_path(fe.intermediates(), |v| &blocks[v]).unwrap();
        for n in 0..3 {
            for c in 0..4 {
                assert!((t.value(facets[n]).get(e, c) - pf.get(n, c)).abs() < 1e-12);
            }
        }
        let (p, a) = combine_facets::<rng::Rng>(&pf, &params.scorer, h.tau, h.edge_weight_mode, None, 0).unwrap();
        for c in 0..4 {
            assert!((t.value(feat).get(e, c) - p[c]).abs() < 1e-12);
        }
        for n in 0..3 {
            assert!((alpha.get(e, n) - a[n]).abs() < 1e-12);
        }
    }
}

fn eval_forward(g: &HeteroGraph, sub: &FacetSubgraph, params: &ModelParams, h: &HyperParams) -> (Tensor, Tensor) {
    let mut p = params.clone();
    let plan = SubgraphPlan::new(sub).unwrap();
    let mut t = Tape::new();
    let mut r = rng::seeded(1);
    let fwd = forward(&mut t, &mut p, &plan, h, ForwardOptions::eval(), &mut r).unwrap();
    let probs = classify(&mut t, &fwd).unwrap();
    let _ = g;
    (t.value(fwd.edge_features).clone(), t.value(probs).clone())
}

#[test]
fn zero_layers_returns_base_embeddings() {
    let (g, sub) = star();
    let h = hyper(2, EdgeWeightMode::Gumbel, 4);
    let mut p = params_for(&g, &h, 1);
    let plan = SubgraphPlan::new(&sub).unwrap();
    let mut t = Tape::new();
    let mut r = rng::seeded(1);
    let fwd = forward_layers(&mut t, &mut p, &plan, &h, ForwardOptions::train(), 0, &mut r).unwrap();
    for (local, &node) in plan.target_ids().iter().enumerate() {
        assert_eq!(t.value(fwd.embeddings).row(local), p.embeddings.row(node));
    }
}

#[test]
fn class_probabilities_sum_to_one() {
    let (g, sub) = star();
    let h = hyper(3, EdgeWeightMode::Gumbel, 4);
    let g = g.with_labels([(0, 0), (1, 2)].into_iter().collect(), 3).unwrap();
    let params = params_for(&g, &h, 2);
    let (_, probs) = eval_forward(&g, &sub, &params, &h);
    assert_eq!(probs.shape(), (4, 3));
    for r in 0..4 {
        assert!((probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn facet_permutation_equivariance() {
    let (g, sub) = star();
    let h = hyper(3, EdgeWeightMode::Gumbel, 4);
    let params = params_for(&g, &h, 4);
    let mut permuted = params.clone();
    permuted.facet_proj = vec![params.facet_proj[2].clone(), params.facet_proj[0].clone(), params.facet_proj[1].clone()];
    let (pa, qa) = eval_forward(&g, &sub, &params, &h);
    let (pb, qb) = eval_forward(&g, &sub, &permuted, &h);
    for (a, b) in pa.data().iter().zip(pb.data()).chain(qa.data().iter().zip(qb.data())) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn none_mode_ignores_facet_parameters() {
    let (g, sub) = star();
    let h = hyper(3, EdgeWeightMode::None, 4);
    let params = params_for(&g, &h, 5);
    let mut zeroed = params.clone();
    zeroed.facet_proj.iter_mut().for_each(|w| *w = Tensor::zeros(4, 4));
    zeroed.scorer = Tensor::zeros(1, 4);
    let (pa, qa) = eval_forward(&g, &sub, &params, &h);
    let (pb, qb) = eval_forward(&g, &sub, &zeroed, &h);
    assert_eq!(pa, Tensor::ones(3, 4));
    assert_eq!(pa, pb);
    assert_eq!(qa, qb);
}

#[test]
fn none_mode_is_plain_sum_aggregation() {
    let (g, sub) = star();
    let h = hyper(2, EdgeWeightMode::None, 3);
    let p = params_for(&g, &h, 6);
    let plan = SubgraphPlan::new(&sub).unwrap();
    let mut t = Tape::new();
    let mut r = rng::seeded(0);
    let bound = Bound::new(&mut t, &p);
    let facets = path_facets(&mut t, bound.embeddings, &bound.facet_proj, &plan).unwrap();
    let (feat, _) = edge_features(&mut t, &facets, bound.scorer, &plan, &h, true, &mut r).unwrap();
    let h0 = t.gather_rows(bound.embeddings, plan.target_ids()).unwrap();
    let m = messages(&mut t, h0, feat, &plan).unwrap();
    let mut expect = Tensor::zeros(4, 3);
    for &(a, b) in plan.edge_pairs() {
        for c in 0..3 {
            expect.set(a, c, expect.get(a, c) + p.embeddings.get(plan.target_ids()[b], c));
            expect.set(b, c, expect.get(b, c) + p.embeddings.get(plan.target_ids()[a], c));
        }
    }
    for (x, y) in t.value(m).data().iter().zip(expect.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn single_facet_gumbel_equals_random() {
    let (g, sub) = star();
    let hg = hyper(1, EdgeWeightMode::Gumbel, 4);
    let hr = hyper(1, EdgeWeightMode::Random, 4);
    let params = params_for(&g, &hg, 7);
    let plan = SubgraphPlan::new(&sub).unwrap();
    let run = |h: &HyperParams| {
        let mut p = params.clone();
        let mut t = Tape::new();
        let mut r = rng::seeded(11);
        let fwd = forward(&mut t, &mut p, &plan, h, ForwardOptions::train(), &mut r).unwrap();
        (t.value(fwd.embeddings).clone(), fwd.alpha)
    };
    let (_, ag) = run(&hg);
    let (_, ar) = run(&hr);
    assert_eq!(ag, Tensor::ones(3, 1));
    assert_eq!(ag, ar);
    let det = |h: &HyperParams| {
        let mut p = params.clone();
        let mut t = Tape::new();
        let mut r = rng::seeded(11);
        let fwd = forward(&mut t, &mut p, &plan, h, ForwardOptions::deterministic_train(), &mut r).unwrap();
        t.value(fwd.embeddings).clone()
    };
    assert_eq!(det(&hg), det(&hr));
}

#[test]
fn eval_forward_is_deterministic() {
    let (g, sub) = star();
    let h = hyper(3, EdgeWeightMode::Gumbel, 4);
    let params = params_for(&g, &h, 8);
    assert_eq!(eval_forward(&g, &sub, &params, &h), eval_forward(&g, &sub, &params, &h));
    let hr = hyper(3, EdgeWeightMode::Random, 4);
    assert_eq!(eval_forward(&g, &sub, &params, &hr), eval_forward(&g, &sub, &params, &hr));
}

#[test]
fn empty_subgraph_is_train_error() {
    let (g, _) = star();
    let h = hyper(2, EdgeWeightMode::Gumbel, 4);
    let mut p = params_for(&g, &h, 1);
    let plan = SubgraphPlan::new(&FacetSubgraph::from_edges(vec![0, 1], vec![])).unwrap();
    let mut t = Tape::new();
    let mut r = rng::seeded(1);
    let err = forward(&mut t, &mut p, &plan, &h, ForwardOptions::eval(), &mut r).unwrap_err();
    assert!(matches!(err, crate::Error::Train { .. }));
}

#[test]
fn attention_rows() {
    let alpha = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let rows = mean_incident_alpha(&[(0, 1), (0, 2)], &alpha, 4);
    assert_eq!(rows[0], (vec![0.5, 0.5], false));
    assert_eq!(rows[1], (vec![1.0, 0.0], false));
    assert_eq!(rows[2], (vec![0.0, 1.0], false));
    assert_eq!(rows[3], (vec![0.5, 0.5], true));

    let (g, sub) = star();
    let h = hyper(1, EdgeWeightMode::Gumbel, 4);
    let params = params_for(&g, &h, 2);
    let plan = SubgraphPlan::new(&sub).unwrap();
    for row in export_attention(g.node_types(), &plan, &params, &h).unwrap() {
        assert_eq!(row.alpha, vec![1.0]);
    }
    let h = hyper(3, EdgeWeightMode::Gumbel, 4);
    let params = params_for(&g, &h, 2);
    let a = export_attention(g.node_types(), &plan, &params, &h).unwrap();
    assert_eq!(a, export_attention(g.node_types(), &plan, &params, &h).unwrap());
    for row in &a {
        assert!((row.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn warm_up_cap_zero_keeps_init() {
    let (g, _) = star();
    let mut r = rng::seeded(3);
    let init = init_embeddings(&g, 4, &mut r);
    let mut e = init.clone();
    let cfg = WarmUpConfig { max_epochs: 0, ..WarmUpConfig::default() };
    let trace = warm_up(&g, &mut e, &cfg, &mut r).unwrap();
    assert!(trace.losses.is_empty());
    assert_eq!(e, init);
}

#[test]
fn warm_up_edgeless_fails() {
    let g = HeteroGraph::new(names(), vec![0, 1], &[], 0).unwrap();
    let mut e = Tensor::zeros(2, 4);
    let mut r = rng::seeded(3);
    assert!(matches!(
        warm_up(&g, &mut e, &WarmUpConfig::default(), &mut r),
        Err(crate::Error::Train { .. })
    ));
}

#[test]
fn warm_up_loss_non_increasing_without_negatives() {
    let (g, _) = star();
    let mut r = rng::seeded(3);
    let mut e = init_embeddings(&g, 8, &mut r);
    let cfg = WarmUpConfig { max_epochs: 150, negatives: false, tol: 0.0, ..WarmUpConfig::default() };
    let trace = warm_up(&g, &mut e, &cfg, &mut r).unwrap();
    assert_eq!(trace.losses.len(), 150);
    for w in trace.losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
    }
    assert!(trace.losses.last() < trace.losses.first());
}

#[test]
fn warm_up_mirrored_components_stay_identical() {
    // Two copies of A0-B1-A2-B3 with identical features.
    let edges = [(0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (6, 7)];
    let types = vec![0, 1, 0, 1, 0, 1, 0, 1];
    let fa = Tensor::from_vec(4, 2, vec![0.3, -0.2, 0.7, 0.1, 0.3, -0.2, 0.7, 0.1]).unwrap();
    let fb = Tensor::from_vec(4, 2, vec![-0.5, 0.4, 0.2, 0.9, -0.5, 0.4, 0.2, 0.9]).unwrap();
    let g = HeteroGraph::new(names(), types, &edges, 0)
        .unwrap()
        .with_features(0, fa)
        .unwrap()
        .with_features(1, fb)
        .unwrap();
    let mut r = rng::seeded(5);
    let mut e = init_embeddings(&g, 6, &mut r);
    for v in 0..4 {
        assert_eq!(e.row(v), e.row(v + 4));
    }
    let cfg = WarmUpConfig { max_epochs: 40, negatives: false, ..WarmUpConfig::default() };
    warm_up(&g, &mut e, &cfg, &mut r).unwrap();
    for v in 0..4 {
        assert_eq!(e.row(v), e.row(v + 4));
    }
}

/// Forward pass recomputed with explicit loops, no tape and no helpers.
fn straight_line_forward(sub: &FacetSubgraph, p: &ModelParams, tau: f64, batch_stats: bool) -> Vec<Vec<f64>> {
    let d = p.dim();
    let k = p.k_facets();
    let targets = sub.target_ids();
    let mut feats = Vec::new();
    for fe in sub.edges() {
        let inter = fe.intermediates();
        let mut pf = vec![vec![0.0; d]; k];
        for n in 0..k {
            for &s in inter {
                for r in 0..d {
                    let mut acc = 0.0;
                    for c in 0..d {
                        acc += p.facet_proj[n].get(r, c) * p.embeddings.get(s, c);
                    }
                    pf[n][r] += acc / inter.len() as f64;
                }
            }
        }
        let logits: Vec<f64> =
            (0..k).map(|n| (0..d).map(|c| pf[n][c] * p.scorer.get(0, c)).sum::<f64>() / tau).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| libm::exp(l - m)).sum();
        let mut feat = vec![0.0; d];
        for n in 0..k {
            let a = libm::exp(logits[n] - m) / z;
            for c in 0..d {
                feat[c] += a * pf[n][c];
            }
        }
        feats.push(feat);
    }
    let local = |v: usize| targets.iter().position(|&t| t == v).unwrap();
    let mut h: Vec<Vec<f64>> = targets.iter().map(|&v| p.embeddings.row(v).to_vec()).collect();
    for l in 0..p.layers() {
        let mut msg = vec![vec![0.0; d]; targets.len()];
        for (e, fe) in sub.edges().iter().enumerate() {
            let (a, b) = (local(fe.a), local(fe.b));
            for c in 0..d {
                msg[a][c] += feats[e][c] * h[b][c];
                msg[b][c] += feats[e][c] * h[a][c];
            }
        }
        let n = targets.len() as f64;
        for c in 0..d {
            let (mean, var) = if batch_stats {
                let mean = msg.iter().map(|r| r[c]).sum::<f64>() / n;
                (mean, msg.iter().map(|r| (r[c] - mean) * (r[c] - mean)).sum::<f64>() / n)
            } else {
                (p.bn_state[l].running_mean[c], p.bn_state[l].running_var[c])
            };
            for row in msg.iter_mut() {
                let y = (row[c] - mean) / libm::sqrt(var + 1e-5) * p.bn_gamma[l].get(0, c) + p.bn_beta[l].get(0, c);
                row[c] = if y > 0.0 { y } else { libm::exp(y) - 1.0 };
            }
        }
        h = msg;
    }
    h
}

#[test]
fn forward_matches_straight_line_recomputation() {
    let (g, sub) = star();
    let h = hyper(3, EdgeWeightMode::Gumbel, 4);
    let mut params = params_for(&g, &h, 9);
    params.bn_state[0].running_mean = vec![0.1, -0.2, 0.05, 0.0];
    params.bn_state[1].running_var = vec![0.5, 2.0, 1.5, 0.8];
    let plan = SubgraphPlan::new(&sub).unwrap();
    for (opts, batch) in [(ForwardOptions::eval(), false), (ForwardOptions::deterministic_train(), true)] {
        let expect = straight_line_forward(&sub, &params, h.tau, batch);
        let mut p = params.clone();
        let mut t = Tape::new();
        let mut r = rng::seeded(0);
        let fwd = forward(&mut t, &mut p, &plan, &h, opts, &mut r).unwrap();
        for (i, row) in expect.iter().enumerate() {
            for (c, &x) in row.iter().enumerate() {
                assert!((t.value(fwd.embeddings).get(i, c) - x).abs() < 1e-12, "{i} {c}");
            }
        }
    }
}
