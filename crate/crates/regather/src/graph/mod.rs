//! Heterogeneous graph data model.
//!
//! Vertices of every type share one global index space `0..|V|`, so a
//! relation between any two types is a plain `|V| x |V|` matrix. Edge lists
//! are kept per edge type, sorted and duplicate-free. Graphs are immutable
//! once built.

mod io;

pub use io::{
    load_features, load_graph, load_labels, save_features, save_graph, save_labels, GraphLoad,
};

use ndarray::Array2;
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum GraphError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: schema violation: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Dense identifier of a vertex type (`0..T`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertexTypeId(pub usize);

/// Dense identifier of an edge type (`0..c`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeTypeId(pub usize);

impl fmt::Display for VertexTypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for EdgeTypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Source and destination vertex types of one edge type.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeSchema {
    pub src: VertexTypeId,
    pub dst: VertexTypeId,
}

/// A typed directed graph over one shared vertex index space.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    vertex_types: Vec<VertexTypeId>,
    vertex_type_names: Vec<String>,
    edge_type_names: Vec<String>,
    schema: Vec<EdgeSchema>,
    edges: Vec<Vec<(usize, usize)>>,
}

impl HeteroGraph {
    /// Assemble a graph without checking invariants; pair with [`validate`]
    /// when the parts come from outside the crate's own loaders.
    pub fn from_parts(
        vertex_types: Vec<VertexTypeId>,
        vertex_type_names: Vec<String>,
        edge_type_names: Vec<String>,
        schema: Vec<EdgeSchema>,
        mut edges: Vec<Vec<(usize, usize)>>,
    ) -> Self {
        assert_eq!(edge_type_names.len(), schema.len());
        assert_eq!(edge_type_names.len(), edges.len());
        for list in &mut edges {
            list.sort_unstable();
        }
        Self {
            vertex_types,
            vertex_type_names,
            edge_type_names,
            schema,
            edges,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertex_types.len()
    }

    pub fn num_vertex_types(&self) -> usize {
        self.vertex_type_names.len()
    }

    /// `c`, the number of edge types.
    pub fn num_edge_types(&self) -> usize {
        self.edge_type_names.len()
    }

    pub fn vertex_type(&self, v: usize) -> VertexTypeId {
        self.vertex_types[v]
    }

    pub fn vertex_types(&self) -> &[VertexTypeId] {
        &self.vertex_types
    }

    pub fn vertex_type_name(&self, t: VertexTypeId) -> &str {
        &self.vertex_type_names[t.0]
    }

    pub fn vertex_type_names(&self) -> &[String] {
        &self.vertex_type_names
    }

    pub fn edge_type_name(&self, t: EdgeTypeId) -> &str {
        &self.edge_type_names[t.0]
    }

    pub fn edge_type_names(&self) -> &[String] {
        &self.edge_type_names
    }

    pub fn schema(&self, t: EdgeTypeId) -> EdgeSchema {
        self.schema[t.0]
    }

    /// Edges of one type, sorted by (src, dst).
    pub fn edges(&self, t: EdgeTypeId) -> &[(usize, usize)] {
        &self.edges[t.0]
    }

    pub fn num_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn vertex_type_by_name(&self, name: &str) -> Option<VertexTypeId> {
        self.vertex_type_names
            .iter()
            .position(|n| n == name)
            .map(VertexTypeId)
    }

    pub fn edge_type_by_name(&self, name: &str) -> Option<EdgeTypeId> {
        self.edge_type_names
            .iter()
            .position(|n| n == name)
            .map(EdgeTypeId)
    }

    /// Vertices of the given type, in index order.
    pub fn vertices_of_type(&self, t: VertexTypeId) -> Vec<usize> {
        (0..self.num_vertices())
            .filter(|&v| self.vertex_types[v] == t)
            .collect()
    }
}

/// One broken invariant, with enough context to locate it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Edge endpoint type disagrees with the edge type's schema.
    SchemaMismatch {
        edge_type: EdgeTypeId,
        src: usize,
        dst: usize,
    },
    /// Same (src, dst) pair occurs twice within one edge type.
    DuplicateEdge {
        edge_type: EdgeTypeId,
        src: usize,
        dst: usize,
    },
    /// Endpoint index outside `0..|V|`.
    IndexBound {
        edge_type: EdgeTypeId,
        src: usize,
        dst: usize,
    },
    /// src == dst; loops only enter via relation finalization.
    SelfLoop { edge_type: EdgeTypeId, vertex: usize },
    /// A vertex carries a type id with no name-table entry.
    UnknownVertexType { vertex: usize, type_id: usize },
    /// A name appears twice in a name table.
    DuplicateName { name: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SchemaMismatch {
                edge_type,
                src,
                dst,
            } => write!(
                f,
                "schema mismatch: edge ({src},{dst}) of type {edge_type} has wrong endpoint types"
            ),
            Violation::DuplicateEdge {
                edge_type,
                src,
                dst,
            } => write!(f, "duplicate edge ({src},{dst}) in type {edge_type}"),
            Violation::IndexBound {
                edge_type,
                src,
                dst,
            } => write!(
                f,
                "index bound: edge ({src},{dst}) of type {edge_type} references a missing vertex"
            ),
            Violation::SelfLoop { edge_type, vertex } => {
                write!(f, "self-loop at vertex {vertex} in type {edge_type}")
            }
            Violation::UnknownVertexType { vertex, type_id } => {
                write!(f, "vertex {vertex} has unknown type id {type_id}")
            }
            Violation::DuplicateName { name } => write!(f, "duplicate name {name:?}"),
        }
    }
}

/// Check every structural invariant; an empty list means the graph is safe
/// for relation decomposition.
pub fn validate(graph: &HeteroGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = graph.num_vertices();

    let mut seen_names = std::collections::HashSet::new();
    for name in graph
        .vertex_type_names()
        .iter()
        .chain(graph.edge_type_names())
    {
        if !seen_names.insert(name.clone()) {
            out.push(Violation::DuplicateName { name: name.clone() });
        }
    }

    for (v, t) in graph.vertex_types().iter().enumerate() {
        if t.0 >= graph.num_vertex_types() {
            out.push(Violation::UnknownVertexType {
                vertex: v,
                type_id: t.0,
            });
        }
    }

    for t in 0..graph.num_edge_types() {
        let t = EdgeTypeId(t);
        let schema = graph.schema(t);
        let mut prev: Option<(usize, usize)> = None;
        for &(s, d) in graph.edges(t) {
            if s >= n || d >= n {
                out.push(Violation::IndexBound {
                    edge_type: t,
                    src: s,
                    dst: d,
                });
                continue;
            }
            if prev == Some((s, d)) {
                out.push(Violation::DuplicateEdge {
                    edge_type: t,
                    src: s,
                    dst: d,
                });
            }
            prev = Some((s, d));
            if s == d {
                out.push(Violation::SelfLoop {
                    edge_type: t,
                    vertex: s,
                });
            }
            if graph.vertex_type(s) != schema.src || graph.vertex_type(d) != schema.dst {
                out.push(Violation::SchemaMismatch {
                    edge_type: t,
                    src: s,
                    dst: d,
                });
            }
        }
    }
    out
}

/// Dense `|V| x d` vertex features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self, GraphError> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(GraphError::Invalid(
                "feature matrix contains a non-finite entry".into(),
            ));
        }
        Ok(Self { data })
    }

    pub fn num_vertices(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }
}

/// Partial class assignment over vertices of one target type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelTable {
    target_type: VertexTypeId,
    labels: BTreeMap<usize, usize>,
    num_classes: usize,
}

impl LabelTable {
    /// Build and check: labels only on `target_type` vertices, class ids
    /// dense `0..L` with every class present.
    pub fn new(
        graph: &HeteroGraph,
        target_type: VertexTypeId,
        labels: BTreeMap<usize, usize>,
    ) -> Result<Self, GraphError> {
        if labels.is_empty() {
            return Err(GraphError::Invalid("label table is empty".into()));
        }
        for (&v, &c) in &labels {
            if v >= graph.num_vertices() {
                return Err(GraphError::Invalid(format!(
                    "labeled vertex {v} is out of range"
                )));
            }
            if graph.vertex_type(v) != target_type {
                return Err(GraphError::Invalid(format!(
                    "labeled vertex {v} has type {} but target type is {}",
                    graph.vertex_type_name(graph.vertex_type(v)),
                    graph.vertex_type_name(target_type),
                )));
            }
            let _ = c;
        }
        let num_classes = labels.values().max().unwrap() + 1;
        let mut present = vec![false; num_classes];
        for &c in labels.values() {
            present[c] = true;
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(GraphError::Invalid(format!(
                "class ids are not dense: class {missing} has no labeled vertex"
            )));
        }
        Ok(Self {
            target_type,
            labels,
            num_classes,
        })
    }

    pub fn target_type(&self) -> VertexTypeId {
        self.target_type
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, vertex: usize) -> Option<usize> {
        self.labels.get(&vertex).copied()
    }

    /// (vertex, class) pairs in vertex order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels.iter().map(|(&v, &c)| (v, c))
    }

    /// Labeled vertex indices in order.
    pub fn vertices(&self) -> Vec<usize> {
        self.labels.keys().copied().collect()
    }
}
