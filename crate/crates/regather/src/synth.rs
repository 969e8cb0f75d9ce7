//! Synthetic heterogeneous graphs with a planted relation-type signal.
//!
//! A spec names the vertex types, a typed edge schema with background
//! densities, and a planted rule: a signature of directed edge types whose
//! reachability determines the class of target-type vertices. Generation
//! picks one hub vertex per class at the end of the rule, assigns every
//! remaining target vertex a class round-robin, and wires a path along the
//! signature from each vertex to its class hub through class-private
//! intermediates. Hubs and intermediates stay unlabeled scaffolding. With
//! zero background density, a labeled vertex reaches exactly its own hub
//! along the planted signature, so the composed relation of that signature
//! predicts the class perfectly while features carry no signal.

use crate::graph::{
    EdgeSchema, FeatureMatrix, GraphError, HeteroGraph, LabelTable, VertexTypeId,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum SynthError {
    #[error("synthetic spec invalid: {0}")]
    Spec(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// One typed edge population: schema plus background density.
#[derive(Clone, Debug)]
pub struct EdgeTypeSpec {
    pub name: String,
    pub src: String,
    pub dst: String,
    /// Probability of each background src/dst pair, in [0, 1].
    pub density: f64,
}

/// Vertex features to emit alongside the graph.
#[derive(Clone, Debug)]
pub enum FeatureMode {
    /// Identity matrix: each vertex gets its own indicator column.
    OneHotId,
    /// Pure standard-normal noise of the given width.
    Gaussian { dim: usize },
    /// Class indicator on target vertices plus scaled noise everywhere;
    /// makes the labels recoverable from features alone.
    RuleCorrelated { dim: usize, noise: f64 },
}

/// Recipe for one synthetic dataset.
#[derive(Clone, Debug)]
pub struct SynthSpec {
    /// Vertex type names with their population sizes.
    pub vertex_types: Vec<(String, usize)>,
    pub edge_types: Vec<EdgeTypeSpec>,
    /// Vertex type that carries labels.
    pub target_type: String,
    pub num_classes: usize,
    /// Planted rule: signature of (edge type name, reversed) hops leading
    /// from the target type to the hub type.
    pub planted: Vec<(String, bool)>,
    pub features: FeatureMode,
    pub seed: u64,
}

/// Everything `generate` produces.
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub graph: HeteroGraph,
    pub features: FeatureMatrix,
    pub labels: LabelTable,
}

struct ResolvedSpec {
    type_ids: BTreeMap<String, VertexTypeId>,
    target: VertexTypeId,
    /// Per planted hop: edge type index, reversed flag, destination vertex
    /// type after taking the hop.
    hops: Vec<(usize, bool, VertexTypeId)>,
    hub_type: VertexTypeId,
}

fn resolve(spec: &SynthSpec) -> Result<ResolvedSpec, SynthError> {
    if spec.vertex_types.is_empty() {
        return Err(SynthError::Spec("no vertex types".into()));
    }
    let mut type_ids = BTreeMap::new();
    for (i, (name, count)) in spec.vertex_types.iter().enumerate() {
        if type_ids.insert(name.clone(), VertexTypeId(i)).is_some() {
            return Err(SynthError::Spec(format!("duplicate vertex type {name}")));
        }
        if *count == 0 {
            return Err(SynthError::Spec(format!("vertex type {name} is empty")));
        }
    }
    let mut edge_names = BTreeSet::new();
    for e in &spec.edge_types {
        if !edge_names.insert(e.name.clone()) {
            return Err(SynthError::Spec(format!("duplicate edge type {}", e.name)));
        }
        for t in [&e.src, &e.dst] {
            if !type_ids.contains_key(t) {
                return Err(SynthError::Spec(format!(
                    "edge type {} references unknown vertex type {t}",
                    e.name
                )));
            }
        }
        if !(0.0..=1.0).contains(&e.density) {
            return Err(SynthError::Spec(format!(
                "edge type {} density {} outside [0, 1]",
                e.name, e.density
            )));
        }
    }
    let target = *type_ids
        .get(&spec.target_type)
        .ok_or_else(|| SynthError::Spec(format!("unknown target type {}", spec.target_type)))?;
    if spec.num_classes < 2 {
        return Err(SynthError::Spec("need at least two classes".into()));
    }
    if spec.planted.is_empty() {
        return Err(SynthError::Spec("planted rule is empty".into()));
    }
    // Walk the signature to check it chains from the target type.
    let mut current = target;
    let mut hops = Vec::with_capacity(spec.planted.len());
    for (name, reversed) in &spec.planted {
        let idx = spec
            .edge_types
            .iter()
            .position(|e| &e.name == name)
            .ok_or_else(|| SynthError::Spec(format!("planted rule uses unknown edge type {name}")))?;
        let e = &spec.edge_types[idx];
        let (from, to) = if *reversed {
            (type_ids[&e.dst], type_ids[&e.src])
        } else {
            (type_ids[&e.src], type_ids[&e.dst])
        };
        if from != current {
            return Err(SynthError::Spec(format!(
                "planted rule breaks at {name}: expected a hop leaving the current type"
            )));
        }
        current = to;
        hops.push((idx, *reversed, to));
    }
    Ok(ResolvedSpec {
        type_ids,
        target,
        hops,
        hub_type: current,
    })
}

/// Generate the dataset described by the spec. Deterministic in the seed.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    let resolved = resolve(spec)?;

    // Lay out vertices: contiguous blocks per type, in spec order.
    let mut vertex_types = Vec::new();
    let mut type_start = Vec::new();
    for (i, (_, count)) in spec.vertex_types.iter().enumerate() {
        type_start.push(vertex_types.len());
        vertex_types.extend(std::iter::repeat(VertexTypeId(i)).take(*count));
    }
    let members = |t: VertexTypeId| -> std::ops::Range<usize> {
        let start = type_start[t.0];
        start..start + spec.vertex_types[t.0].1
    };

    // Hubs: the last `num_classes` vertices of the hub type.
    let hub_range = members(resolved.hub_type);
    if hub_range.len() <= spec.num_classes {
        return Err(SynthError::Spec(format!(
            "hub type {} needs more than {} vertices",
            spec.vertex_types[resolved.hub_type.0].0, spec.num_classes
        )));
    }
    let hubs: Vec<usize> = hub_range.clone().rev().take(spec.num_classes).rev().collect();

    // Class assignment: every target vertex that is not a hub, round-robin.
    let target_range = members(resolved.target);
    let regulars: Vec<usize> = target_range
        .clone()
        .filter(|v| !(resolved.hub_type == resolved.target && hubs.contains(v)))
        .collect();
    if regulars.len() < spec.num_classes {
        return Err(SynthError::Spec(format!(
            "only {} labelable target vertices for {} classes",
            regulars.len(),
            spec.num_classes
        )));
    }
    // Hubs stay unlabeled: they are wiring scaffolding, and labeling them
    // would let a one-hop model recover the rule through the path vertices
    // every class member shares with its hub.
    let mut labels = BTreeMap::new();
    for (i, &v) in regulars.iter().enumerate() {
        labels.insert(v, i % spec.num_classes);
    }

    // Wire each regular vertex to its class hub along the signature.
    // Intermediates come from class-private buckets (vertex index mod
    // class count) so classes never share a path vertex; hubs and the
    // path's own endpoints are skipped.
    let mut edge_sets: Vec<BTreeSet<(usize, usize)>> =
        vec![BTreeSet::new(); spec.edge_types.len()];
    let mut cursors: BTreeMap<(usize, usize), usize> = BTreeMap::new(); // (class, hop) -> offset
    for &v in &regulars {
        let class = labels[&v];
        let mut current = v;
        let last = resolved.hops.len() - 1;
        for (hop_idx, &(edge_type, reversed, to_type)) in resolved.hops.iter().enumerate() {
            let next = if hop_idx == last {
                hubs[class]
            } else {
                let pool: Vec<usize> = members(to_type)
                    .filter(|u| {
                        u % spec.num_classes == class
                            && !(to_type == resolved.hub_type && hubs.contains(u))
                            && *u != current
                            && *u != v
                    })
                    .collect();
                if pool.is_empty() {
                    return Err(SynthError::Spec(format!(
                        "vertex type {} too small for class-private path intermediates",
                        spec.vertex_types[to_type.0].0
                    )));
                }
                let cursor = cursors.entry((class, hop_idx)).or_insert(0);
                let pick = pool[*cursor % pool.len()];
                *cursor += 1;
                pick
            };
            if next == current {
                return Err(SynthError::Spec(
                    "planted rule would create a self-loop".into(),
                ));
            }
            let pair = if reversed { (next, current) } else { (current, next) };
            edge_sets[edge_type].insert(pair);
            current = next;
        }
    }

    // Background edges per type, Bernoulli at the spec'd density.
    for (t, e) in spec.edge_types.iter().enumerate() {
        if e.density == 0.0 {
            continue;
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(crate::model::derive_seed(spec.seed, &[1, t as u64]));
        let src_range = members(resolved.type_ids[&e.src]);
        let dst_range = members(resolved.type_ids[&e.dst]);
        for i in src_range {
            for j in dst_range.clone() {
                if i != j && rng.gen_bool(e.density) {
                    edge_sets[t].insert((i, j));
                }
            }
        }
    }

    let graph = HeteroGraph::from_parts(
        vertex_types,
        spec.vertex_types.iter().map(|(n, _)| n.clone()).collect(),
        spec.edge_types.iter().map(|e| e.name.clone()).collect(),
        spec.edge_types
            .iter()
            .map(|e| EdgeSchema {
                src: resolved.type_ids[&e.src],
                dst: resolved.type_ids[&e.dst],
            })
            .collect(),
        edge_sets
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect(),
    );
    let violations = crate::graph::validate(&graph);
    debug_assert!(violations.is_empty(), "generated graph invalid: {violations:?}");

    let n = graph.num_vertices();
    let mut feature_rng =
        ChaCha8Rng::seed_from_u64(crate::model::derive_seed(spec.seed, &[2]));
    let data = match &spec.features {
        FeatureMode::OneHotId => Array2::from_shape_fn((n, n), |(i, j)| f64::from(i == j)),
        FeatureMode::Gaussian { dim } => {
            if *dim == 0 {
                return Err(SynthError::Spec("gaussian feature width must be >= 1".into()));
            }
            Array2::from_shape_fn((n, *dim), |_| feature_rng.sample(StandardNormal))
        }
        FeatureMode::RuleCorrelated { dim, noise } => {
            if *dim < spec.num_classes {
                return Err(SynthError::Spec(format!(
                    "rule-correlated features need width >= {} classes",
                    spec.num_classes
                )));
            }
            let mut data = Array2::zeros((n, *dim));
            for row in data.rows_mut() {
                for x in row {
                    *x = noise * feature_rng.sample::<f64, _>(StandardNormal);
                }
            }
            for (&v, &c) in &labels {
                data[[v, c]] += 1.0;
            }
            data
        }
    };
    let features = FeatureMatrix::new(data)?;
    let labels = LabelTable::new(&graph, resolved.target, labels)?;
    Ok(SynthOutput {
        graph,
        features,
        labels,
    })
}

/// Default desk-scale fixture mirroring a bibliographic schema: papers,
/// authors, venues, and terms with the usual edge types, labels on
/// authors planted by the 2-hop co-author rule.
pub fn default_fixture(seed: u64) -> SynthSpec {
    SynthSpec {
        vertex_types: vec![
            ("paper".into(), 140),
            ("author".into(), 40),
            ("venue".into(), 20),
            ("term".into(), 90),
        ],
        edge_types: vec![
            EdgeTypeSpec {
                name: "paper-paper".into(),
                src: "paper".into(),
                dst: "paper".into(),
                density: 0.002,
            },
            EdgeTypeSpec {
                name: "author-paper".into(),
                src: "author".into(),
                dst: "paper".into(),
                density: 0.004,
            },
            EdgeTypeSpec {
                name: "venue-paper".into(),
                src: "venue".into(),
                dst: "paper".into(),
                density: 0.004,
            },
            EdgeTypeSpec {
                name: "paper-term".into(),
                src: "paper".into(),
                dst: "term".into(),
                density: 0.004,
            },
        ],
        target_type: "author".into(),
        num_classes: 3,
        planted: vec![("author-paper".into(), false), ("author-paper".into(), true)],
        features: FeatureMode::OneHotId,
        seed,
    }
}

/// The learnability fixture: ~300 vertices, two classes, labels planted by
/// the 2-hop co-author rule, no background edges, uninformative features.
/// Only the order-2 co-author relation links a vertex to its class hub.
pub fn learnability_fixture(seed: u64) -> SynthSpec {
    SynthSpec {
        vertex_types: vec![("author".into(), 150), ("paper".into(), 150)],
        edge_types: vec![EdgeTypeSpec {
            name: "author-paper".into(),
            src: "author".into(),
            dst: "paper".into(),
            density: 0.0,
        }],
        target_type: "author".into(),
        num_classes: 2,
        planted: vec![("author-paper".into(), false), ("author-paper".into(), true)],
        features: FeatureMode::OneHotId,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeTypeId;
    use crate::sparse::CsrMatrix;

    /// Reachability of `labels`' planted rule, evaluated independently by
    /// composing the signature's adjacency matrices.
    fn rule_reach(graph: &HeteroGraph, planted: &[(String, bool)]) -> CsrMatrix {
        let mut product: Option<CsrMatrix> = None;
        for (name, reversed) in planted {
            let t = graph.edge_type_by_name(name).unwrap();
            let schema = graph.schema(t);
            let n = graph.num_vertices();
            let mut m = CsrMatrix::from_edges(n, n, graph.edges(t));
            let _ = schema;
            if *reversed {
                m = m.transpose();
            }
            product = Some(match product {
                None => m,
                Some(p) => p.matmul(&m, usize::MAX).unwrap(),
            });
        }
        product.unwrap()
    }

    #[test]
    fn labels_follow_planted_reachability() {
        let spec = learnability_fixture(5);
        let out = generate(&spec).unwrap();
        let reach = rule_reach(&out.graph, &spec.planted);
        // The two hubs are the authors with the highest co-author degree.
        let authors: Vec<usize> = out
            .graph
            .vertices_of_type(out.labels.target_type())
            .into_iter()
            .collect();
        let mut by_degree: Vec<(usize, usize)> = authors
            .iter()
            .map(|&a| (reach.iter_row(a).count(), a))
            .collect();
        by_degree.sort();
        let hub_a = by_degree[by_degree.len() - 1].1;
        let hub_b = by_degree[by_degree.len() - 2].1;
        // Hubs are unlabeled scaffolding; their class is defined by who
        // reaches them, and must be unanimous.
        assert_eq!(out.labels.get(hub_a), None);
        assert_eq!(out.labels.get(hub_b), None);
        let hub_class = |h: usize| {
            let classes: BTreeSet<usize> = authors
                .iter()
                .filter(|&&a| a != hub_a && a != hub_b && reach.get(a, h) > 0)
                .map(|&a| out.labels.get(a).unwrap())
                .collect();
            assert_eq!(classes.len(), 1, "hub {h} is reached by multiple classes");
            classes.into_iter().next().unwrap()
        };
        assert_ne!(hub_class(hub_a), hub_class(hub_b));
        // Every regular author reaches exactly the hub of its class.
        for &a in &authors {
            if a == hub_a || a == hub_b {
                continue;
            }
            let class = out.labels.get(a).unwrap();
            for h in [hub_a, hub_b] {
                let reaches = reach.get(a, h) > 0;
                assert_eq!(
                    reaches,
                    hub_class(h) == class,
                    "author {a} (class {class}) vs hub {h}"
                );
            }
        }
    }

    #[test]
    fn zero_densities_leave_only_planted_edges() {
        let spec = learnability_fixture(7);
        let out = generate(&spec).unwrap();
        // Each of the 148 regular authors contributes one fresh paper with
        // exactly two writers: itself and its hub.
        let t = EdgeTypeId(0);
        let edges = out.graph.edges(t);
        assert_eq!(edges.len(), 2 * 148);
        let mut papers = BTreeSet::new();
        for &(_, p) in edges {
            papers.insert(p);
        }
        assert_eq!(papers.len(), 148);
    }

    #[test]
    fn same_seed_reproduces_everything() {
        let spec = default_fixture(9);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.features.data(), b.features.data());
        assert_eq!(a.labels, b.labels);
        let mut other = spec.clone();
        other.seed = 10;
        let c = generate(&other).unwrap();
        assert_ne!(a.graph, c.graph);
    }

    #[test]
    fn generated_graph_passes_validation() {
        for seed in [1, 2, 3] {
            let out = generate(&default_fixture(seed)).unwrap();
            assert!(crate::graph::validate(&out.graph).is_empty());
            // every class non-empty
            let mut counts = vec![0usize; out.labels.num_classes()];
            for (_, c) in out.labels.iter() {
                counts[c] += 1;
            }
            assert!(counts.iter().all(|&c| c > 0));
        }
    }

    #[test]
    fn degenerate_specs_are_rejected() {
        let mut spec = learnability_fixture(1);
        spec.num_classes = 200; // more classes than authors
        assert!(matches!(generate(&spec), Err(SynthError::Spec(_))));

        let mut spec = learnability_fixture(1);
        spec.planted = vec![("author-paper".into(), true)]; // starts at paper side
        assert!(matches!(generate(&spec), Err(SynthError::Spec(_))));

        let mut spec = learnability_fixture(1);
        spec.planted.clear();
        assert!(matches!(generate(&spec), Err(SynthError::Spec(_))));

        let mut spec = learnability_fixture(1);
        spec.edge_types[0].density = 1.5;
        assert!(matches!(generate(&spec), Err(SynthError::Spec(_))));
    }

    #[test]
    fn feature_modes_have_expected_shape_and_signal() {
        let mut spec = learnability_fixture(3);
        spec.features = FeatureMode::Gaussian { dim: 8 };
        let out = generate(&spec).unwrap();
        assert_eq!(out.features.data().ncols(), 8);

        spec.features = FeatureMode::RuleCorrelated { dim: 4, noise: 0.01 };
        let out = generate(&spec).unwrap();
        // class indicator dominates: argmax of the first columns recovers the class
        for (v, c) in out.labels.iter() {
            let row = out.features.data().row(v);
            let best = (0..spec.num_classes)
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            assert_eq!(best, c);
        }

        spec.features = FeatureMode::OneHotId;
        let out = generate(&spec).unwrap();
        assert_eq!(out.features.data().nrows(), out.features.data().ncols());
    }

    #[test]
    fn dataset_round_trips_through_io() {
        let dir = tempfile::tempdir().unwrap();
        let out = generate(&default_fixture(4)).unwrap();
        let vertex_path = dir.path().join("vertices.tsv");
        let edge_path = dir.path().join("edges.tsv");
        let schema_path = dir.path().join("schema.tsv");
        let feat_path = dir.path().join("features.tsv");
        let label_path = dir.path().join("labels.tsv");
        crate::graph::save_graph(&out.graph, &vertex_path, &edge_path, &schema_path).unwrap();
        crate::graph::save_features(&out.features, &feat_path).unwrap();
        crate::graph::save_labels(&out.labels, &label_path).unwrap();
        let loaded =
            crate::graph::load_graph(&vertex_path, &edge_path, &schema_path).unwrap();
        assert_eq!(loaded.graph, out.graph);
        let feats = crate::graph::load_features(&feat_path, out.graph.num_vertices()).unwrap();
        assert_eq!(feats.data(), out.features.data());
        let labels = crate::graph::load_labels(&label_path, &loaded.graph).unwrap();
        assert_eq!(labels, out.labels);
    }
}
