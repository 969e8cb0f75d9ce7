//! Brute-force oracles and random fixtures shared by the integration
//! suites. Everything here recomputes results from first principles —
//! never through the code paths under test.
#![allow(dead_code)] // each test target uses its own subset

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use regather::graph::{EdgeSchema, EdgeTypeId, HeteroGraph, VertexTypeId};
use regather::relation::{
    compose, decompose, with_reverses, ComposeOptions, Signature, SignedRelation,
    DEFAULT_NNZ_CAP,
};
use regather::sparse::CsrMatrix;
use std::collections::{BTreeMap, BTreeSet};

/// Random typed directed graph: up to 3 vertex types, up to 20 vertices,
/// up to 4 edge types, random schema, sparse random edges (possibly none).
pub fn random_graph(rng: &mut ChaCha8Rng) -> HeteroGraph {
    let num_vtypes = rng.gen_range(1..=3);
    let n = rng.gen_range(1..=20);
    let vertex_types: Vec<VertexTypeId> =
        (0..n).map(|_| VertexTypeId(rng.gen_range(0..num_vtypes))).collect();
    let num_etypes = rng.gen_range(1..=4);
    let schema: Vec<EdgeSchema> = (0..num_etypes)
        .map(|_| EdgeSchema {
            src: VertexTypeId(rng.gen_range(0..num_vtypes)),
            dst: VertexTypeId(rng.gen_range(0..num_vtypes)),
        })
        .collect();
    let mut edges = Vec::with_capacity(num_etypes);
    for s in &schema {
        let srcs: Vec<usize> = (0..n).filter(|&v| vertex_types[v] == s.src).collect();
        let dsts: Vec<usize> = (0..n).filter(|&v| vertex_types[v] == s.dst).collect();
        let mut set = BTreeSet::new();
        if !srcs.is_empty() && !dsts.is_empty() {
            for _ in 0..rng.gen_range(0..=2 * n) {
                let i = srcs[rng.gen_range(0..srcs.len())];
                let j = dsts[rng.gen_range(0..dsts.len())];
                if i != j {
                    set.insert((i, j));
                }
            }
        }
        edges.push(set.into_iter().collect());
    }
    HeteroGraph::from_parts(
        vertex_types,
        (0..num_vtypes).map(|t| format!("t{t}")).collect(),
        (0..num_etypes).map(|t| format!("e{t}")).collect(),
        schema,
        edges,
    )
}

/// Out-neighbors of every vertex under one signed relation: the edge list
/// itself, or its reversal.
fn signed_neighbors(graph: &HeteroGraph, sr: SignedRelation) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); graph.num_vertices()];
    for &(i, j) in graph.edges(sr.edge_type) {
        if sr.reversed {
            adj[j].push(i);
        } else {
            adj[i].push(j);
        }
    }
    adj
}

/// Path counts by exhaustive walk enumeration: entry (i, j) is the number
/// of distinct edge sequences from i to j traversing the signature's
/// relations in order. No matrix algebra involved.
pub fn oracle_counts(graph: &HeteroGraph, signature: &[SignedRelation]) -> Array2<u64> {
    let n = graph.num_vertices();
    let steps: Vec<Vec<Vec<usize>>> =
        signature.iter().map(|&sr| signed_neighbors(graph, sr)).collect();

    fn walk(v: usize, depth: usize, steps: &[Vec<Vec<usize>>], row: &mut [u64]) {
        if depth == steps.len() {
            row[v] += 1;
            return;
        }
        for &w in &steps[depth][v] {
            walk(w, depth + 1, steps, row);
        }
    }

    let mut counts = Array2::zeros((n, n));
    for start in 0..n {
        let mut row = vec![0u64; n];
        walk(start, 0, &steps, &mut row);
        for (j, &c) in row.iter().enumerate() {
            counts[[start, j]] = c;
        }
    }
    counts
}

/// Endpoint vertex types of one signed relation.
fn signed_endpoints(graph: &HeteroGraph, sr: SignedRelation) -> (VertexTypeId, VertexTypeId) {
    let s = graph.schema(sr.edge_type);
    if sr.reversed {
        (s.dst, s.src)
    } else {
        (s.src, s.dst)
    }
}

/// Every type-compatible signature of order 1..=max_order, regardless of
/// whether any path realizes it.
pub fn realizable_signatures(graph: &HeteroGraph, max_order: usize) -> Vec<Signature> {
    let singles: Vec<SignedRelation> = (0..graph.num_edge_types())
        .map(|t| SignedRelation::forward(EdgeTypeId(t)))
        .chain((0..graph.num_edge_types()).map(|t| SignedRelation::reverse(EdgeTypeId(t))))
        .collect();

    fn extend(
        graph: &HeteroGraph,
        singles: &[SignedRelation],
        current: &mut Signature,
        dst: VertexTypeId,
        max_order: usize,
        out: &mut Vec<Signature>,
    ) {
        out.push(current.clone());
        if current.len() >= max_order {
            return;
        }
        for &sr in singles {
            let (s, d) = signed_endpoints(graph, sr);
            if s != dst {
                continue;
            }
            current.push(sr);
            extend(graph, singles, current, d, max_order, out);
            current.pop();
        }
    }

    let mut out = Vec::new();
    for &sr in &singles {
        let (_, d) = signed_endpoints(graph, sr);
        let mut current = vec![sr];
        extend(graph, &singles, &mut current, d, max_order, &mut out);
    }
    out
}

fn to_dense(matrix: &CsrMatrix) -> Array2<u64> {
    let mut out = Array2::zeros((matrix.nrows(), matrix.ncols()));
    for (i, j, v) in matrix.iter() {
        out[[i, j]] = v;
    }
    out
}

/// Cross-check composition against the walk-enumeration oracle in both
/// directions: every composed matrix must equal its oracle counts entry
/// for entry, and every type-compatible signature whose prefixes all
/// admit at least one path must appear exactly once.
pub fn check_composition_matches_oracle(graph: &HeteroGraph, max_order: usize) {
    let first_order = with_reverses(&decompose(graph));
    let composed = compose(
        &first_order,
        &ComposeOptions {
            max_order,
            nnz_cap: DEFAULT_NNZ_CAP,
            parallel: false,
        },
    )
    .expect("composition succeeds on small graphs");

    let mut seen: BTreeMap<Signature, Array2<u64>> = BTreeMap::new();
    for rel in &composed {
        let previous = seen.insert(rel.signature.clone(), to_dense(&rel.matrix));
        assert!(
            previous.is_none(),
            "signature {:?} composed twice",
            rel.signature
        );
    }

    for (sig, dense) in &seen {
        let oracle = oracle_counts(graph, sig);
        assert_eq!(
            dense, &oracle,
            "path counts disagree with enumeration for {sig:?}"
        );
    }

    for sig in realizable_signatures(graph, max_order) {
        let all_prefixes_nonzero =
            (1..=sig.len()).all(|k| oracle_counts(graph, &sig[..k]).iter().any(|&c| c > 0));
        assert_eq!(
            seen.contains_key(&sig),
            all_prefixes_nonzero,
            "signature {sig:?}: present={} but prefix reachability={}",
            seen.contains_key(&sig),
            all_prefixes_nonzero
        );
    }
}

/// Relabel vertices: vertex v becomes perm[v]; types follow their vertex,
/// edges are rewritten endpoint-wise, names and schema stay put.
pub fn permute_graph(graph: &HeteroGraph, perm: &[usize]) -> HeteroGraph {
    let n = graph.num_vertices();
    assert_eq!(perm.len(), n);
    let mut vertex_types = vec![VertexTypeId(0); n];
    for v in 0..n {
        vertex_types[perm[v]] = graph.vertex_type(v);
    }
    let edges = (0..graph.num_edge_types())
        .map(|t| {
            graph
                .edges(EdgeTypeId(t))
                .iter()
                .map(|&(i, j)| (perm[i], perm[j]))
                .collect()
        })
        .collect();
    HeteroGraph::from_parts(
        vertex_types,
        graph.vertex_type_names().to_vec(),
        graph.edge_type_names().to_vec(),
        (0..graph.num_edge_types())
            .map(|t| graph.schema(EdgeTypeId(t)))
            .collect(),
        edges,
    )
}
