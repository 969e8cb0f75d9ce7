//! The sparse attention pipeline checked against a plain dense ndarray
//! re-implementation, and equivariance of the whole stack under vertex
//! relabeling.

mod common;

use common::{permute_graph, random_graph};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use regather::graph::HeteroGraph;
use regather::model::{forward, init_params, Mode, ModelConfig, ModelParams};
use regather::relation::{build_relation_set, ComposeOptions, DEFAULT_NNZ_CAP};
use regather::sparse::CsrPattern;
use std::sync::Arc;

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// Forward pass re-derived with dense arithmetic only: boolean adjacency
/// arrays, explicit softmax loops, no shared code with the library graph
/// machinery.
fn dense_reference(
    features: &Array2<f64>,
    masks: &[Array2<bool>],
    params: &ModelParams<f64>,
    config: &ModelConfig,
) -> (Array2<f64>, Vec<f64>) {
    let n = features.nrows();
    let mut embeddings = Vec::with_capacity(masks.len());
    for (phi, mask) in masks.iter().enumerate() {
        let h = features.dot(&params.node[phi].weight);
        let a = &params.node[phi].attention;
        let d_h = h.ncols();
        // alpha over masked slots only
        let mut alpha = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            let neighbors: Vec<usize> = (0..n).filter(|&j| mask[[i, j]]).collect();
            if neighbors.is_empty() {
                continue;
            }
            let scores: Vec<f64> = neighbors
                .iter()
                .map(|&j| {
                    let mut s = 0.0;
                    for k in 0..d_h {
                        s += a[[k, 0]] * h[[i, k]] + a[[d_h + k, 0]] * h[[j, k]];
                    }
                    leaky(s, config.leaky_slope)
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for (&j, e) in neighbors.iter().zip(&exps) {
                alpha[[i, j]] = e / total;
            }
        }
        let z = alpha.dot(&h).mapv(elu);
        embeddings.push(z);
    }

    // fusion: mean over vertices of q . tanh(z F + b), softmax over relations
    let f = &params.fusion.weight;
    let b = &params.fusion.bias;
    let q = &params.fusion.query;
    let scores: Vec<f64> = embeddings
        .iter()
        .map(|z| {
            let mut total = 0.0;
            for i in 0..n {
                let mut dot = 0.0;
                for k in 0..q.nrows() {
                    let mut cell = b[[0, k]];
                    for m in 0..z.ncols() {
                        cell += z[[i, m]] * f[[m, k]];
                    }
                    dot += q[[k, 0]] * cell.tanh();
                }
                total += dot;
            }
            total / n as f64
        })
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let beta: Vec<f64> = exps.iter().map(|e| e / total).collect();

    let mut fused = Array2::<f64>::zeros(embeddings[0].raw_dim());
    for (w, z) in beta.iter().zip(&embeddings) {
        fused.scaled_add(*w, z);
    }
    let logits = match &params.classifier {
        Some(c) => fused.dot(&c.weight) + &c.bias,
        None => fused,
    };
    (logits, beta)
}

fn random_masks(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<Arc<CsrPattern>> {
    (0..count)
        .map(|_| {
            let mut coords: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
            for i in 0..n {
                for j in 0..n {
                    if i != j && rng.gen_bool(0.25) {
                        coords.push((i, j));
                    }
                }
            }
            coords.sort_unstable();
            Arc::new(CsrPattern::from_coords(n, n, coords))
        })
        .collect()
}

fn densify(mask: &CsrPattern, n: usize) -> Array2<bool> {
    let mut out = Array2::from_elem((n, n), false);
    for (i, j) in mask.iter() {
        out[[i, j]] = true;
    }
    out
}

fn small_config(d_in: usize, num_classes: usize, seed: u64) -> ModelConfig {
    let mut config = ModelConfig::with_dims(d_in, num_classes);
    config.d_h = 5;
    config.d_q = 4;
    config.dropout_rate = 0.0;
    config.seed = seed;
    config
}

#[test]
fn forward_matches_dense_reference() {
    for seed in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(3..=12);
        let d_in = rng.gen_range(2..=6);
        let num_classes = rng.gen_range(2..=4);
        let relations = rng.gen_range(1..=3);
        let config = small_config(d_in, num_classes, seed);
        let params = init_params::<f64>(&config, relations).unwrap();
        let masks = random_masks(&mut rng, n, relations);
        let features = Array2::from_shape_fn((n, d_in), |_| rng.gen_range(-1.0..1.0));

        let out = forward(&features, &masks, &params, &config, None, Mode::Eval).unwrap();
        let dense_masks: Vec<Array2<bool>> = masks.iter().map(|m| densify(m, n)).collect();
        let (want_logits, want_beta) = dense_reference(&features, &dense_masks, &params, &config);

        assert_eq!(out.logits.raw_dim(), want_logits.raw_dim());
        for (got, want) in out.logits.iter().zip(want_logits.iter()) {
            assert!(
                (got - want).abs() <= 1e-10,
                "seed {seed}: logit {got} != {want}"
            );
        }
        for (got, want) in out.beta.iter().zip(&want_beta) {
            assert!((got - want).abs() <= 1e-12, "seed {seed}: beta {got} != {want}");
        }
    }
}

#[test]
fn no_classifier_mode_matches_dense_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 9;
    let (d_in, num_classes, relations) = (4, 3, 2);
    let mut config = small_config(d_in, num_classes, 99);
    config.d_h = num_classes;
    config.use_classifier = false;
    let params = init_params::<f64>(&config, relations).unwrap();
    assert!(params.classifier.is_none());
    let masks = random_masks(&mut rng, n, relations);
    let features = Array2::from_shape_fn((n, d_in), |_| rng.gen_range(-1.0..1.0));

    let out = forward(&features, &masks, &params, &config, None, Mode::Eval).unwrap();
    let dense_masks: Vec<Array2<bool>> = masks.iter().map(|m| densify(m, n)).collect();
    let (want_logits, _) = dense_reference(&features, &dense_masks, &params, &config);
    for (got, want) in out.logits.iter().zip(want_logits.iter()) {
        assert!((got - want).abs() <= 1e-10);
    }
}

/// A graph with guaranteed edges for the equivariance tests.
fn graph_with_edges(rng: &mut ChaCha8Rng) -> HeteroGraph {
    loop {
        let graph = random_graph(rng);
        if graph.num_vertices() >= 4 && graph.num_edges() >= 4 {
            return graph;
        }
    }
}

#[test]
fn relabeling_vertices_relabels_predictions() {
    for seed in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let graph = graph_with_edges(&mut rng);
        let n = graph.num_vertices();
        let opts = ComposeOptions {
            max_order: 2,
            nnz_cap: DEFAULT_NNZ_CAP,
            parallel: false,
        };
        let relations = build_relation_set(&graph, &opts).unwrap();

        let d_in = 5;
        let config = small_config(d_in, 3, seed);
        let params = init_params::<f64>(&config, relations.len()).unwrap();
        let features = Array2::from_shape_fn((n, d_in), |_| rng.gen_range(-1.0..1.0));
        let base = forward(
            &features,
            &relations.masks(),
            &params,
            &config,
            None,
            Mode::Eval,
        )
        .unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let permuted_graph = permute_graph(&graph, &perm);
        let permuted_relations = build_relation_set(&permuted_graph, &opts).unwrap();
        assert_eq!(relations.len(), permuted_relations.len());
        let mut permuted_features = Array2::zeros((n, d_in));
        for v in 0..n {
            permuted_features
                .row_mut(perm[v])
                .assign(&features.row(v));
        }
        let moved = forward(
            &permuted_features,
            &permuted_relations.masks(),
            &params,
            &config,
            None,
            Mode::Eval,
        )
        .unwrap();

        for (got, want) in moved.beta.iter().zip(&base.beta) {
            assert!((got - want).abs() <= 1e-9, "beta drifted under relabeling");
        }
        for v in 0..n {
            for c in 0..3 {
                let want = base.logits[[v, c]];
                let got = moved.logits[[perm[v], c]];
                assert!(
                    (got - want).abs() <= 1e-9,
                    "seed {seed}: logit ({v}, {c}) drifted: {got} vs {want}"
                );
            }
        }
    }
}
