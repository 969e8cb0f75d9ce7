//! Text formats for graphs, features, and labels.
//!
//! All files are UTF-8 with `#`-prefixed comment lines ignored:
//! - vertex file: `<vertex_id> <vertex_type_name>`, ids dense `0..|V|`
//! - edge file: `<edge_type_name> <src_id> <dst_id>`
//! - schema file: `<edge_type_name> <src_type_name> <dst_type_name>`
//! - feature file: `|V|` lines of whitespace-separated reals
//! - label file: `<vertex_id> <class_id>`

use super::{
    validate, EdgeSchema, EdgeTypeId, FeatureMatrix, GraphError, HeteroGraph, LabelTable,
    VertexTypeId,
};
use ndarray::Array2;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// A loaded graph plus the ingestion repairs that were applied.
#[derive(Debug)]
pub struct GraphLoad {
    pub graph: HeteroGraph,
    /// Duplicate (src, dst) pairs collapsed within an edge type.
    pub duplicate_edges: usize,
    /// Input self-loops dropped; loops are added back only when the
    /// relation set is finalized.
    pub dropped_self_loops: usize,
}

fn io_err(path: &Path, source: std::io::Error) -> GraphError {
    GraphError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> GraphError {
    GraphError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Non-comment, non-blank lines with their 1-based line numbers.
fn data_lines(path: &Path) -> Result<Vec<(usize, String)>, GraphError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((idx + 1, trimmed.to_string()));
    }
    Ok(out)
}

fn intern(names: &mut Vec<String>, name: &str) -> usize {
    match names.iter().position(|n| n == name) {
        Some(i) => i,
        None => {
            names.push(name.to_string());
            names.len() - 1
        }
    }
}

/// Load a heterogeneous graph from its three text files.
///
/// Duplicate edges collapse and input self-loops drop, both counted in the
/// returned [`GraphLoad`]. Unknown vertex ids and endpoint-type mismatches
/// are hard errors naming the offending line.
pub fn load_graph(
    vertex_file: &Path,
    edge_file: &Path,
    schema_file: &Path,
) -> Result<GraphLoad, GraphError> {
    let mut vertex_type_names: Vec<String> = Vec::new();
    let mut edge_type_names: Vec<String> = Vec::new();
    let mut schema: Vec<EdgeSchema> = Vec::new();

    for (line_no, line) in data_lines(schema_file)? {
        let mut parts = line.split_whitespace();
        let (name, src, dst) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c), None) => (a, b, c),
            _ => {
                return Err(parse_err(
                    schema_file,
                    line_no,
                    "expected `<edge_type> <src_type> <dst_type>`",
                ))
            }
        };
        if edge_type_names.iter().any(|n| n == name) {
            return Err(parse_err(
                schema_file,
                line_no,
                format!("edge type {name:?} declared twice"),
            ));
        }
        let src = VertexTypeId(intern(&mut vertex_type_names, src));
        let dst = VertexTypeId(intern(&mut vertex_type_names, dst));
        edge_type_names.push(name.to_string());
        schema.push(EdgeSchema { src, dst });
    }

    let vertex_lines = data_lines(vertex_file)?;
    let mut typed: Vec<Option<VertexTypeId>> = vec![None; vertex_lines.len()];
    for (line_no, line) in &vertex_lines {
        let mut parts = line.split_whitespace();
        let (id, type_name) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(parse_err(
                    vertex_file,
                    *line_no,
                    "expected `<vertex_id> <vertex_type_name>`",
                ))
            }
        };
        let id: usize = id.parse().map_err(|_| {
            parse_err(vertex_file, *line_no, format!("bad vertex id {id:?}"))
        })?;
        if id >= typed.len() {
            return Err(parse_err(
                vertex_file,
                *line_no,
                format!(
                    "vertex id {id} out of range; ids must be dense 0..{}",
                    typed.len()
                ),
            ));
        }
        if typed[id].is_some() {
            return Err(parse_err(
                vertex_file,
                *line_no,
                format!("vertex {id} defined twice"),
            ));
        }
        typed[id] = Some(VertexTypeId(intern(&mut vertex_type_names, type_name)));
    }
    let vertex_types: Vec<VertexTypeId> = typed
        .into_iter()
        .map(|t| t.expect("dense ids with no duplicates cover every slot"))
        .collect();
    let num_vertices = vertex_types.len();

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); schema.len()];
    let mut dropped_self_loops = 0usize;
    for (line_no, line) in data_lines(edge_file)? {
        let mut parts = line.split_whitespace();
        let (name, src, dst) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c), None) => (a, b, c),
            _ => {
                return Err(parse_err(
                    edge_file,
                    line_no,
                    "expected `<edge_type> <src_id> <dst_id>`",
                ))
            }
        };
        let type_id = edge_type_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| {
                parse_err(edge_file, line_no, format!("unknown edge type {name:?}"))
            })?;
        let src: usize = src
            .parse()
            .map_err(|_| parse_err(edge_file, line_no, format!("bad vertex id {src:?}")))?;
        let dst: usize = dst
            .parse()
            .map_err(|_| parse_err(edge_file, line_no, format!("bad vertex id {dst:?}")))?;
        if src >= num_vertices || dst >= num_vertices {
            return Err(parse_err(
                edge_file,
                line_no,
                format!("unknown vertex id in edge ({src},{dst})"),
            ));
        }
        let want = schema[type_id];
        if vertex_types[src] != want.src || vertex_types[dst] != want.dst {
            return Err(GraphError::Schema {
                path: edge_file.display().to_string(),
                line: line_no,
                message: format!(
                    "edge ({src},{dst}) of type {name:?} connects {}->{}, schema requires {}->{}",
                    vertex_type_names[vertex_types[src].0],
                    vertex_type_names[vertex_types[dst].0],
                    vertex_type_names[want.src.0],
                    vertex_type_names[want.dst.0],
                ),
            });
        }
        if src == dst {
            dropped_self_loops += 1;
            continue;
        }
        edges[type_id].push((src, dst));
    }

    let mut duplicate_edges = 0usize;
    for list in &mut edges {
        list.sort_unstable();
        let before = list.len();
        list.dedup();
        duplicate_edges += before - list.len();
    }

    let graph = HeteroGraph::from_parts(
        vertex_types,
        vertex_type_names,
        edge_type_names,
        schema,
        edges,
    );
    let violations = validate(&graph);
    if !violations.is_empty() {
        return Err(GraphError::Invalid(format!(
            "loaded graph failed validation: {}",
            violations[0]
        )));
    }
    Ok(GraphLoad {
        graph,
        duplicate_edges,
        dropped_self_loops,
    })
}

/// Write the three graph files; `load_graph` of the result reproduces the
/// graph exactly.
pub fn save_graph(
    graph: &HeteroGraph,
    vertex_file: &Path,
    edge_file: &Path,
    schema_file: &Path,
) -> Result<(), GraphError> {
    let mut w = BufWriter::new(File::create(schema_file).map_err(|e| io_err(schema_file, e))?);
    for t in 0..graph.num_edge_types() {
        let t = EdgeTypeId(t);
        let s = graph.schema(t);
        writeln!(
            w,
            "{} {} {}",
            graph.edge_type_name(t),
            graph.vertex_type_name(s.src),
            graph.vertex_type_name(s.dst)
        )
        .map_err(|e| io_err(schema_file, e))?;
    }
    w.flush().map_err(|e| io_err(schema_file, e))?;

    let mut w = BufWriter::new(File::create(vertex_file).map_err(|e| io_err(vertex_file, e))?);
    for v in 0..graph.num_vertices() {
        writeln!(w, "{} {}", v, graph.vertex_type_name(graph.vertex_type(v)))
            .map_err(|e| io_err(vertex_file, e))?;
    }
    w.flush().map_err(|e| io_err(vertex_file, e))?;

    let mut w = BufWriter::new(File::create(edge_file).map_err(|e| io_err(edge_file, e))?);
    for t in 0..graph.num_edge_types() {
        let t = EdgeTypeId(t);
        for &(s, d) in graph.edges(t) {
            writeln!(w, "{} {} {}", graph.edge_type_name(t), s, d)
                .map_err(|e| io_err(edge_file, e))?;
        }
    }
    w.flush().map_err(|e| io_err(edge_file, e))
}

/// Load dense vertex features; must have exactly `num_vertices` rows of a
/// consistent dimension, all entries finite.
pub fn load_features(path: &Path, num_vertices: usize) -> Result<FeatureMatrix, GraphError> {
    let lines = data_lines(path)?;
    if lines.len() != num_vertices {
        return Err(GraphError::Invalid(format!(
            "{}: expected {num_vertices} feature rows, found {}",
            path.display(),
            lines.len()
        )));
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(lines.len());
    let mut dim: Option<usize> = None;
    for (line_no, line) in &lines {
        let row: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let row =
            row.map_err(|e| parse_err(path, *line_no, format!("bad feature value: {e}")))?;
        if row.iter().any(|x| !x.is_finite()) {
            return Err(parse_err(path, *line_no, "non-finite feature value"));
        }
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(parse_err(
                    path,
                    *line_no,
                    format!("feature row has {} values, expected {d}", row.len()),
                ))
            }
            _ => {}
        }
        rows.push(row);
    }
    let d = dim.unwrap_or(0);
    if d == 0 {
        return Err(GraphError::Invalid(format!(
            "{}: feature dimension is zero",
            path.display()
        )));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let data = Array2::from_shape_vec((num_vertices, d), flat)
        .expect("row dims were checked consistent");
    FeatureMatrix::new(data)
}

pub fn save_features(features: &FeatureMatrix, path: &Path) -> Result<(), GraphError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    for row in features.data().rows() {
        let line: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
        writeln!(w, "{}", line.join(" ")).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Load labels; the target vertex type is inferred from the labeled
/// vertices, which must all share one type.
pub fn load_labels(path: &Path, graph: &HeteroGraph) -> Result<LabelTable, GraphError> {
    let mut labels = BTreeMap::new();
    let mut target: Option<VertexTypeId> = None;
    for (line_no, line) in data_lines(path)? {
        let mut parts = line.split_whitespace();
        let (v, c) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(parse_err(
                    path,
                    line_no,
                    "expected `<vertex_id> <class_id>`",
                ))
            }
        };
        let v: usize = v
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad vertex id {v:?}")))?;
        let c: usize = c
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad class id {c:?}")))?;
        if v >= graph.num_vertices() {
            return Err(parse_err(path, line_no, format!("unknown vertex id {v}")));
        }
        let vt = graph.vertex_type(v);
        match target {
            None => target = Some(vt),
            Some(t) if t != vt => {
                return Err(parse_err(
                    path,
                    line_no,
                    format!(
                        "labeled vertex {v} has type {} but earlier labels are on type {}",
                        graph.vertex_type_name(vt),
                        graph.vertex_type_name(t)
                    ),
                ))
            }
            _ => {}
        }
        if labels.insert(v, c).is_some() {
            return Err(parse_err(path, line_no, format!("vertex {v} labeled twice")));
        }
    }
    let target = target.ok_or_else(|| {
        GraphError::Invalid(format!("{}: label file has no entries", path.display()))
    })?;
    LabelTable::new(graph, target, labels)
}

pub fn save_labels(labels: &LabelTable, path: &Path) -> Result<(), GraphError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    for (v, c) in labels.iter() {
        writeln!(w, "{v} {c}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;
    use tempfile::TempDir;

    fn write(dir: &TempDir, name: &str, contents: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, contents).unwrap();
        p
    }

    /// Desk-scale copy of a bibliographic schema: four edge types over
    /// paper/author/venue/term.
    fn dblp_fixture(dir: &TempDir) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf)
    {
        let schema = write(
            dir,
            "schema.txt",
            "paper-paper paper paper\n\
             author-paper author paper\n\
             venue-paper venue paper\n\
             paper-term paper term\n",
        );
        let vertices = write(
            dir,
            "vertices.txt",
            "# id type\n0 paper\n1 paper\n2 author\n3 author\n4 venue\n5 term\n",
        );
        let edges = write(
            dir,
            "edges.txt",
            "paper-paper 0 1\n\
             author-paper 2 0\n\
             author-paper 3 0\n\
             author-paper 3 1\n\
             venue-paper 4 0\n\
             venue-paper 4 1\n\
             paper-term 1 5\n",
        );
        (vertices, edges, schema)
    }

    #[test]
    fn loads_dblp_shaped_fixture() {
        let dir = TempDir::new().unwrap();
        let (v, e, s) = dblp_fixture(&dir);
        let load = load_graph(&v, &e, &s).unwrap();
        let g = &load.graph;
        assert_eq!(g.num_edge_types(), 4);
        assert_eq!(g.num_vertices(), 6);
        assert_eq!(g.num_vertex_types(), 4);
        assert_eq!(g.edges(EdgeTypeId(1)).len(), 3);
        assert_eq!(load.duplicate_edges, 0);
        assert!(validate(g).is_empty());
    }

    #[test]
    fn empty_edge_file_gives_zero_edges_per_type() {
        let dir = TempDir::new().unwrap();
        let schema = write(&dir, "s.txt", "author-paper author paper\n");
        let vertices = write(&dir, "v.txt", "0 author\n1 author\n2 paper\n");
        let edges = write(&dir, "e.txt", "# nothing here\n");
        let load = load_graph(&vertices, &edges, &schema).unwrap();
        assert_eq!(load.graph.num_vertices(), 3);
        assert!(load.graph.edges(EdgeTypeId(0)).is_empty());
    }

    #[test]
    fn schema_violation_names_the_line() {
        let dir = TempDir::new().unwrap();
        let schema = write(&dir, "s.txt", "author-paper author paper\n");
        let vertices = write(&dir, "v.txt", "0 author\n1 venue\n2 paper\n");
        // author->venue edge claimed under author-paper
        let edges = write(&dir, "e.txt", "# comment\nauthor-paper 0 1\n");
        let err = load_graph(&vertices, &edges, &schema).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2:"), "should name line 2, got {msg}");
        assert!(msg.contains("schema violation"), "got {msg}");
    }

    #[test]
    fn unknown_vertex_id_is_hard_error() {
        let dir = TempDir::new().unwrap();
        let schema = write(&dir, "s.txt", "author-paper author paper\n");
        let vertices = write(&dir, "v.txt", "0 author\n1 paper\n");
        let edges = write(&dir, "e.txt", "author-paper 0 7\n");
        let err = load_graph(&vertices, &edges, &schema).unwrap_err();
        assert!(err.to_string().contains("unknown vertex id"));
    }

    #[test]
    fn duplicates_collapse_and_loops_drop_with_counts() {
        let dir = TempDir::new().unwrap();
        let schema = write(&dir, "s.txt", "cites paper paper\n");
        let vertices = write(&dir, "v.txt", "0 paper\n1 paper\n");
        let edges = write(&dir, "e.txt", "cites 0 1\ncites 0 1\ncites 1 1\n");
        let load = load_graph(&vertices, &edges, &schema).unwrap();
        assert_eq!(load.duplicate_edges, 1);
        assert_eq!(load.dropped_self_loops, 1);
        assert_eq!(load.graph.edges(EdgeTypeId(0)), &[(0, 1)]);
    }

    #[test]
    fn graph_files_round_trip() {
        let dir = TempDir::new().unwrap();
        let (v, e, s) = dblp_fixture(&dir);
        let g = load_graph(&v, &e, &s).unwrap().graph;
        let v2 = dir.path().join("v2.txt");
        let e2 = dir.path().join("e2.txt");
        let s2 = dir.path().join("s2.txt");
        save_graph(&g, &v2, &e2, &s2).unwrap();
        let g2 = load_graph(&v2, &e2, &s2).unwrap().graph;
        assert_eq!(g, g2);
    }

    #[test]
    fn features_round_trip_and_reject_bad_rows() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "f.txt", "0.5 -1.25\n3 4\n# comment\n0.1 0.2\n");
        let f = load_features(&p, 3).unwrap();
        assert_eq!(f.dim(), 2);
        assert_eq!(f.data()[[1, 0]], 3.0);

        let out = dir.path().join("f2.txt");
        save_features(&f, &out).unwrap();
        assert_eq!(load_features(&out, 3).unwrap(), f);

        let ragged = write(&dir, "bad.txt", "1 2\n3\n4 5\n");
        assert!(load_features(&ragged, 3).is_err());
        let wrong_rows = write(&dir, "short.txt", "1 2\n");
        assert!(load_features(&wrong_rows, 3).is_err());
    }

    #[test]
    fn labels_round_trip_and_infer_target_type() {
        let dir = TempDir::new().unwrap();
        let (v, e, s) = dblp_fixture(&dir);
        let g = load_graph(&v, &e, &s).unwrap().graph;
        let p = write(&dir, "l.txt", "2 1\n3 0\n");
        let labels = load_labels(&p, &g).unwrap();
        assert_eq!(labels.target_type(), g.vertex_type_by_name("author").unwrap());
        assert_eq!(labels.num_classes(), 2);

        let out = dir.path().join("l2.txt");
        save_labels(&labels, &out).unwrap();
        assert_eq!(load_labels(&out, &g).unwrap(), labels);

        // mixing paper and author labels must fail
        let mixed = write(&dir, "mixed.txt", "2 0\n0 1\n");
        assert!(load_labels(&mixed, &g).is_err());
    }
}
