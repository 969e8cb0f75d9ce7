//! Relation-set construction.
//!
//! The graph is decomposed into one adjacency matrix per edge type; the
//! transposes join them as independent reversed relations. Higher-order
//! relations are sparse products of first-order matrices, enumerated
//! depth-first in lexicographic signed-relation order with unrealizable
//! type traversals skipped. Surviving matrices are binarized, given a full
//! unit diagonal, and deduplicated into the final relation set the
//! attention layers consume.

use crate::graph::{EdgeTypeId, HeteroGraph, VertexTypeId};
use crate::sparse::{CsrMatrix, CsrPattern, SparseError};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

/// Default cap on non-zeros per composed product; growth is exponential in
/// the order, so fail loudly instead of thrashing.
pub const DEFAULT_NNZ_CAP: usize = 50_000_000;

#[derive(Error, Debug)]
pub enum RelationError {
    #[error("composition resource limit: {0}")]
    Resource(#[from] SparseError),
    #[error("max relation order must be >= 1, got {0}")]
    InvalidOrder(usize),
    #[error("relation set is empty: every composed matrix was pruned as trivial")]
    EmptySet,
    #[error("relation dump failed at {path}: {source}")]
    Dump {
        path: String,
        source: std::io::Error,
    },
}

/// One first-order relation: an edge type traversed forward or against its
/// direction. Reversed traversal is an independent relation, not the same
/// edge seen backwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SignedRelation {
    pub edge_type: EdgeTypeId,
    pub reversed: bool,
}

impl SignedRelation {
    pub fn forward(edge_type: EdgeTypeId) -> Self {
        Self {
            edge_type,
            reversed: false,
        }
    }

    pub fn reverse(edge_type: EdgeTypeId) -> Self {
        Self {
            edge_type,
            reversed: true,
        }
    }

    /// Dense id used for enumeration order: forward types first, then the
    /// reversed block.
    pub fn signed_id(&self, num_edge_types: usize) -> usize {
        if self.reversed {
            num_edge_types + self.edge_type.0
        } else {
            self.edge_type.0
        }
    }
}

/// The edge-type/direction sequence identifying one composed relation.
pub type Signature = Vec<SignedRelation>;

/// A sparse `|V| x |V|` relation matrix with its signature. For order 1 the
/// entries are the adjacency (or its transpose); for higher orders entry
/// (i, j) counts the distinct typed paths i -> j matching the signature.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationMatrix {
    pub signature: Signature,
    pub src_type: VertexTypeId,
    pub dst_type: VertexTypeId,
    pub matrix: CsrMatrix,
}

impl RelationMatrix {
    pub fn order(&self) -> usize {
        self.signature.len()
    }
}

/// Split the graph into its first-order relation matrices, one per edge
/// type, forward direction only. Matrix `i` holds exactly the type-`i`
/// edges; all-zero matrices are kept here and pruned during composition.
pub fn decompose(graph: &HeteroGraph) -> Vec<RelationMatrix> {
    let n = graph.num_vertices();
    (0..graph.num_edge_types())
        .map(|t| {
            let t = EdgeTypeId(t);
            let schema = graph.schema(t);
            RelationMatrix {
                signature: vec![SignedRelation::forward(t)],
                src_type: schema.src,
                dst_type: schema.dst,
                matrix: CsrMatrix::from_edges(n, n, graph.edges(t)),
            }
        })
        .collect()
}

/// Extend the forward first-order list with the transposed relations:
/// element `c + i` is the transpose of element `i` with swapped endpoint
/// types and a reversed signature flag.
pub fn with_reverses(firsts: &[RelationMatrix]) -> Vec<RelationMatrix> {
    let mut out = firsts.to_vec();
    for rm in firsts {
        debug_assert_eq!(rm.order(), 1, "with_reverses expects first-order input");
        let rel = rm.signature[0];
        out.push(RelationMatrix {
            signature: vec![SignedRelation::reverse(rel.edge_type)],
            src_type: rm.dst_type,
            dst_type: rm.src_type,
            matrix: rm.matrix.transpose(),
        });
    }
    out
}

#[derive(Clone, Debug)]
pub struct ComposeOptions {
    /// Highest relation order K.
    pub max_order: usize,
    /// Hard error threshold on non-zeros per composed product.
    pub nnz_cap: usize,
    /// Compose the subtrees of different starting relations in parallel.
    /// Counts are exact integers, so the result is identical either way.
    pub parallel: bool,
}

impl Default for ComposeOptions {
    fn default() -> Self {
        Self {
            max_order: 3,
            nnz_cap: DEFAULT_NNZ_CAP,
            parallel: false,
        }
    }
}

/// Enumerate all relation products of order `1..=K` over the given
/// first-order set, depth-first so output signatures appear in
/// lexicographic signed-relation order. Extensions whose endpoint types do
/// not chain are skipped (unrealizable traversals), and all-zero products
/// are dropped.
pub fn compose(
    first_order: &[RelationMatrix],
    opts: &ComposeOptions,
) -> Result<Vec<RelationMatrix>, RelationError> {
    if opts.max_order < 1 {
        return Err(RelationError::InvalidOrder(opts.max_order));
    }

    fn extend(
        current: &RelationMatrix,
        first_order: &[RelationMatrix],
        opts: &ComposeOptions,
        out: &mut Vec<RelationMatrix>,
    ) -> Result<(), RelationError> {
        out.push(current.clone());
        if current.order() >= opts.max_order {
            return Ok(());
        }
        for next in first_order {
            if next.src_type != current.dst_type {
                continue; // unrealizable traversal
            }
            let product = current.matrix.matmul(&next.matrix, opts.nnz_cap)?;
            if product.is_zero() {
                continue; // trivial, and so is every further extension
            }
            let mut signature = current.signature.clone();
            signature.extend_from_slice(&next.signature);
            extend(
                &RelationMatrix {
                    signature,
                    src_type: current.src_type,
                    dst_type: next.dst_type,
                    matrix: product,
                },
                first_order,
                opts,
                out,
            )?;
        }
        Ok(())
    }

    let run_root = |root: &RelationMatrix| -> Result<Vec<RelationMatrix>, RelationError> {
        let mut out = Vec::new();
        if !root.matrix.is_zero() {
            extend(root, first_order, opts, &mut out)?;
        }
        Ok(out)
    };

    let per_root: Vec<Vec<RelationMatrix>> = if opts.parallel {
        use rayon::prelude::*;
        first_order
            .par_iter()
            .map(run_root)
            .collect::<Result<_, _>>()?
    } else {
        first_order
            .iter()
            .map(run_root)
            .collect::<Result<_, _>>()?
    };
    Ok(per_root.into_iter().flatten().collect())
}

/// Path-count summary for one signature. Attention only ever sees the
/// binary mask; multiplicities survive in the catalog for inspection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PathStats {
    /// Non-zero entries of the count matrix (before the unit diagonal).
    pub nnz: usize,
    /// Sum of all path counts (saturating).
    pub total_paths: u64,
    /// Largest single count.
    pub max_count: u64,
}

impl PathStats {
    fn of(matrix: &CsrMatrix) -> Self {
        let mut total: u64 = 0;
        let mut max = 0;
        for (_, _, v) in matrix.iter() {
            total = total.saturating_add(v);
            max = max.max(v);
        }
        Self {
            nnz: matrix.nnz(),
            total_paths: total,
            max_count: max,
        }
    }
}

/// One element of the final relation set: a binary mask with a full unit
/// diagonal, plus every signature that collapsed onto it.
#[derive(Clone, Debug)]
pub struct RetainedRelation {
    pub mask: Arc<CsrPattern>,
    /// Signatures merged into this mask, in enumeration order; never empty.
    pub provenance: Vec<Signature>,
    /// Path-count summaries aligned with `provenance`.
    pub stats: Vec<PathStats>,
    /// Endpoint types of the representative (first) signature. `None` for
    /// the homogenized union relation, which mixes types.
    pub endpoints: Option<(VertexTypeId, VertexTypeId)>,
}

impl RetainedRelation {
    pub fn order(&self) -> usize {
        self.provenance[0].len()
    }
}

/// The relation set the attention model runs over.
#[derive(Clone, Debug)]
pub struct RelationSet {
    relations: Vec<RetainedRelation>,
    num_vertices: usize,
    max_order: usize,
}

impl RelationSet {
    /// Fan-in of the fusion layer.
    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn relations(&self) -> &[RetainedRelation] {
        &self.relations
    }

    pub fn masks(&self) -> Vec<Arc<CsrPattern>> {
        self.relations.iter().map(|r| Arc::clone(&r.mask)).collect()
    }

    /// Digest of the relation structure (signatures and mask patterns);
    /// checkpoints refuse to load against a different value.
    pub fn catalog_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"relation-set-v1");
        h.update((self.num_vertices as u64).to_le_bytes());
        h.update((self.relations.len() as u64).to_le_bytes());
        for rel in &self.relations {
            h.update((rel.provenance.len() as u64).to_le_bytes());
            for sig in &rel.provenance {
                h.update((sig.len() as u64).to_le_bytes());
                for sr in sig {
                    h.update((sr.edge_type.0 as u64).to_le_bytes());
                    h.update([u8::from(sr.reversed)]);
                }
            }
            h.update((rel.mask.nnz() as u64).to_le_bytes());
            for (i, j) in rel.mask.iter() {
                h.update((i as u64).to_le_bytes());
                h.update((j as u64).to_le_bytes());
            }
        }
        let digest = h.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            let _ = write!(out, "{byte:02x}");
        }
        out
    }
}

/// Binarize, add the unit diagonal, and deduplicate the composed matrices
/// into the final relation set. Structurally identical masks merge with
/// their signatures recorded side by side.
pub fn finalize(composed: Vec<RelationMatrix>) -> Result<RelationSet, RelationError> {
    let mut relations: Vec<RetainedRelation> = Vec::new();
    let mut seen: HashMap<CsrPattern, usize> = HashMap::new();
    let mut num_vertices = 0;
    let mut max_order = 0;
    for rm in composed {
        debug_assert!(!rm.matrix.is_zero(), "compose must prune zero matrices");
        num_vertices = rm.matrix.nrows();
        max_order = max_order.max(rm.order());
        let mask = rm.matrix.pattern().with_unit_diagonal();
        let stats = PathStats::of(&rm.matrix);
        match seen.get(&mask) {
            Some(&idx) => {
                relations[idx].provenance.push(rm.signature);
                relations[idx].stats.push(stats);
            }
            None => {
                seen.insert(mask.clone(), relations.len());
                relations.push(RetainedRelation {
                    mask: Arc::new(mask),
                    provenance: vec![rm.signature],
                    stats: vec![stats],
                    endpoints: Some((rm.src_type, rm.dst_type)),
                });
            }
        }
    }
    if relations.is_empty() {
        return Err(RelationError::EmptySet);
    }
    Ok(RelationSet {
        relations,
        num_vertices,
        max_order,
    })
}

/// Full pipeline: decompose, add reverses, compose to order K, finalize.
pub fn build_relation_set(
    graph: &HeteroGraph,
    opts: &ComposeOptions,
) -> Result<RelationSet, RelationError> {
    let firsts = decompose(graph);
    let s1 = with_reverses(&firsts);
    finalize(compose(&s1, opts)?)
}

/// Heterogeneity-blind variant: a single relation whose mask is the union
/// of every edge, every transposed edge, and the unit diagonal. Provenance
/// lists all first-order signatures.
pub fn homogenized(graph: &HeteroGraph) -> RelationSet {
    let n = graph.num_vertices();
    let s1 = with_reverses(&decompose(graph));
    let patterns: Vec<CsrPattern> = s1.iter().map(|rm| rm.matrix.pattern()).collect();
    let refs: Vec<&CsrPattern> = patterns.iter().collect();
    let union = if refs.is_empty() {
        CsrPattern::from_coords(n, n, std::iter::empty())
    } else {
        CsrPattern::union(&refs)
    };
    RelationSet {
        relations: vec![RetainedRelation {
            mask: Arc::new(union.with_unit_diagonal()),
            stats: s1.iter().map(|rm| PathStats::of(&rm.matrix)).collect(),
            provenance: s1.into_iter().map(|rm| rm.signature).collect(),
            endpoints: None,
        }],
        num_vertices: n,
        max_order: 1,
    }
}

/// Meta-path string for a signature, e.g. `author→paper→author`.
pub fn signature_path(sig: &Signature, graph: &HeteroGraph) -> String {
    if sig.is_empty() {
        return String::new();
    }
    let start = {
        let s = graph.schema(sig[0].edge_type);
        if sig[0].reversed {
            s.dst
        } else {
            s.src
        }
    };
    let mut out = graph.vertex_type_name(start).to_string();
    for sr in sig {
        let s = graph.schema(sr.edge_type);
        let next = if sr.reversed { s.src } else { s.dst };
        out.push('→');
        out.push_str(graph.vertex_type_name(next));
    }
    out
}

/// Edge-type spelling of a signature, reversed steps marked with `^T`,
/// e.g. `author-paper·author-paper^T`.
pub fn signature_relations(sig: &Signature, graph: &HeteroGraph) -> String {
    sig.iter()
        .map(|sr| {
            let name = graph.edge_type_name(sr.edge_type);
            if sr.reversed {
                format!("{name}^T")
            } else {
                name.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("·")
}

/// Human-readable listing of every retained relation: order, mask size,
/// endpoint types, and all merged signatures as meta-path strings.
pub fn relation_catalog(set: &RelationSet, graph: &HeteroGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "relation set: P = {} (max order {}, |V| = {})",
        set.len(),
        set.max_order(),
        set.num_vertices()
    );
    for (idx, rel) in set.relations().iter().enumerate() {
        let endpoints = match rel.endpoints {
            Some((s, d)) => format!(
                "{}->{}",
                graph.vertex_type_name(s),
                graph.vertex_type_name(d)
            ),
            None => "mixed".to_string(),
        };
        let sigs = rel
            .provenance
            .iter()
            .zip(&rel.stats)
            .map(|(sig, st)| {
                format!(
                    "{} [{}; {} paths, max {}]",
                    signature_path(sig, graph),
                    signature_relations(sig, graph),
                    st.total_paths,
                    st.max_count,
                )
            })
            .collect::<Vec<_>>()
            .join(" | ");
        let _ = writeln!(
            out,
            "[{idx}] order {}  nnz {}  {endpoints}  {sigs}",
            rel.order(),
            rel.mask.nnz()
        );
    }
    out
}

/// Write each mask as a sorted `i j` coordinate file plus a JSON manifest
/// mapping file names to their signatures.
pub fn dump_relation_set(
    set: &RelationSet,
    graph: &HeteroGraph,
    dir: &Path,
) -> Result<(), RelationError> {
    let dump_err = |path: &Path, source: std::io::Error| RelationError::Dump {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| dump_err(dir, e))?;
    let mut manifest = Vec::new();
    for (idx, rel) in set.relations().iter().enumerate() {
        let name = format!("mask_{idx:03}.txt");
        let path = dir.join(&name);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| dump_err(&path, e))?);
        for (i, j) in rel.mask.iter() {
            writeln!(w, "{i} {j}").map_err(|e| dump_err(&path, e))?;
        }
        w.flush().map_err(|e| dump_err(&path, e))?;
        manifest.push(serde_json::json!({
            "file": name,
            "order": rel.order(),
            "nnz": rel.mask.nnz(),
            "endpoints": rel.endpoints.map(|(s, d)| {
                [graph.vertex_type_name(s), graph.vertex_type_name(d)]
            }),
            "signatures": rel.provenance.iter()
                .map(|sig| signature_relations(sig, graph))
                .collect::<Vec<_>>(),
            "meta_paths": rel.provenance.iter()
                .map(|sig| signature_path(sig, graph))
                .collect::<Vec<_>>(),
            "path_counts": rel.stats.iter()
                .map(|st| serde_json::json!({
                    "nnz": st.nnz,
                    "total": st.total_paths,
                    "max": st.max_count,
                }))
                .collect::<Vec<_>>(),
        }));
    }
    let manifest_path = dir.join("catalog.json");
    let doc = serde_json::json!({
        "num_vertices": set.num_vertices(),
        "max_order": set.max_order(),
        "catalog_hash": set.catalog_hash(),
        "relations": manifest,
    });
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&doc).expect("manifest serializes"),
    )
    .map_err(|e| dump_err(&manifest_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeSchema;

    /// Two authors co-writing one paper: a1->p, a2->p.
    fn coauthor_toy() -> HeteroGraph {
        HeteroGraph::from_parts(
            vec![VertexTypeId(0), VertexTypeId(0), VertexTypeId(1)],
            vec!["author".into(), "paper".into()],
            vec!["author-paper".into()],
            vec![EdgeSchema {
                src: VertexTypeId(0),
                dst: VertexTypeId(1),
            }],
            vec![vec![(0, 2), (1, 2)]],
        )
    }

    /// Bibliographic shape: paper-paper, author-paper, venue-paper,
    /// paper-term.
    fn dblp_shape() -> HeteroGraph {
        HeteroGraph::from_parts(
            vec![
                VertexTypeId(0), // p0
                VertexTypeId(0), // p1
                VertexTypeId(1), // a2
                VertexTypeId(1), // a3
                VertexTypeId(2), // v4
                VertexTypeId(3), // t5
            ],
            vec!["paper".into(), "author".into(), "venue".into(), "term".into()],
            vec![
                "paper-paper".into(),
                "author-paper".into(),
                "venue-paper".into(),
                "paper-term".into(),
            ],
            vec![
                EdgeSchema {
                    src: VertexTypeId(0),
                    dst: VertexTypeId(0),
                },
                EdgeSchema {
                    src: VertexTypeId(1),
                    dst: VertexTypeId(0),
                },
                EdgeSchema {
                    src: VertexTypeId(2),
                    dst: VertexTypeId(0),
                },
                EdgeSchema {
                    src: VertexTypeId(0),
                    dst: VertexTypeId(3),
                },
            ],
            vec![
                vec![(0, 1)],
                vec![(2, 0), (3, 0), (3, 1)],
                vec![(4, 0), (4, 1)],
                vec![(1, 5)],
            ],
        )
    }

    #[test]
    fn decompose_produces_one_matrix_per_edge_type() {
        let g = dblp_shape();
        let firsts = decompose(&g);
        assert_eq!(firsts.len(), 4);
        // union property: every input edge appears in exactly its type's matrix
        for t in 0..4 {
            let rm = &firsts[t];
            assert_eq!(rm.matrix.nnz(), g.edges(EdgeTypeId(t)).len());
            for &(s, d) in g.edges(EdgeTypeId(t)) {
                assert_eq!(rm.matrix.get(s, d), 1);
            }
        }
    }

    #[test]
    fn decompose_transcribes_toy_edges() {
        let firsts = decompose(&coauthor_toy());
        let m = &firsts[0].matrix;
        assert_eq!(m.get(0, 2), 1);
        assert_eq!(m.get(1, 2), 1);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn with_reverses_doubles_and_transposes() {
        let g = dblp_shape();
        let s1 = with_reverses(&decompose(&g));
        assert_eq!(s1.len(), 8);
        for i in 0..4 {
            let fwd = &s1[i];
            let rev = &s1[4 + i];
            assert!(rev.signature[0].reversed);
            assert_eq!(rev.signature[0].edge_type, fwd.signature[0].edge_type);
            assert_eq!(rev.src_type, fwd.dst_type);
            assert_eq!(rev.dst_type, fwd.src_type);
            // transpose involution
            assert_eq!(rev.matrix.transpose(), fwd.matrix);
        }
    }

    #[test]
    fn compose_counts_coauthor_paths() {
        let g = coauthor_toy();
        let s1 = with_reverses(&decompose(&g));
        let out = compose(&s1, &ComposeOptions::default()).unwrap();
        let sig = vec![
            SignedRelation::forward(EdgeTypeId(0)),
            SignedRelation::reverse(EdgeTypeId(0)),
        ];
        let m = &out
            .iter()
            .find(|rm| rm.signature == sig)
            .expect("author→paper→author relation exists")
            .matrix;
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(m.get(i, j), 1, "entry ({i},{j})");
            }
        }
        assert_eq!(m.nnz(), 4);
    }

    #[test]
    fn compose_skips_type_incompatible_signatures() {
        let g = coauthor_toy();
        let s1 = with_reverses(&decompose(&g));
        let out = compose(&s1, &ComposeOptions::default()).unwrap();
        let fwd = SignedRelation::forward(EdgeTypeId(0));
        assert!(
            !out.iter().any(|rm| rm.signature == vec![fwd, fwd]),
            "paper destination cannot chain into author source"
        );
    }

    #[test]
    fn compose_order_one_drops_only_zero_matrices() {
        let mut g = dblp_shape();
        // empty one edge type
        g = HeteroGraph::from_parts(
            g.vertex_types().to_vec(),
            g.vertex_type_names().to_vec(),
            g.edge_type_names().to_vec(),
            (0..4).map(|t| g.schema(EdgeTypeId(t))).collect(),
            vec![
                g.edges(EdgeTypeId(0)).to_vec(),
                g.edges(EdgeTypeId(1)).to_vec(),
                Vec::new(), // venue-paper emptied
                g.edges(EdgeTypeId(3)).to_vec(),
            ],
        );
        let s1 = with_reverses(&decompose(&g));
        let opts = ComposeOptions {
            max_order: 1,
            ..Default::default()
        };
        let out = compose(&s1, &opts).unwrap();
        assert_eq!(out.len(), 6); // 8 minus the empty pair
        let nonzero: Vec<_> = s1.iter().filter(|rm| !rm.matrix.is_zero()).collect();
        for (got, want) in out.iter().zip(nonzero) {
            assert_eq!(got.signature, want.signature);
            assert_eq!(got.matrix, want.matrix);
        }
    }

    #[test]
    fn compose_emits_lexicographic_signature_order() {
        let g = dblp_shape();
        let s1 = with_reverses(&decompose(&g));
        let c = g.num_edge_types();
        let out = compose(
            &s1,
            &ComposeOptions {
                max_order: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let ids: Vec<Vec<usize>> = out
            .iter()
            .map(|rm| rm.signature.iter().map(|sr| sr.signed_id(c)).collect())
            .collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted, "output must already be in lex order");
        // determinism: a second run is identical
        let out2 = compose(
            &s1,
            &ComposeOptions {
                max_order: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out, out2);
        // parallel mode must agree too
        let out3 = compose(
            &s1,
            &ComposeOptions {
                max_order: 3,
                parallel: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out, out3);
    }

    #[test]
    fn compose_enforces_nnz_cap() {
        let g = dblp_shape();
        let s1 = with_reverses(&decompose(&g));
        let err = compose(
            &s1,
            &ComposeOptions {
                max_order: 3,
                nnz_cap: 1,
                parallel: false,
            },
        )
        .unwrap_err();
        assert!(matches!(err, RelationError::Resource(_)));
    }

    #[test]
    fn compose_rejects_zero_order() {
        let g = coauthor_toy();
        let s1 = with_reverses(&decompose(&g));
        let err = compose(
            &s1,
            &ComposeOptions {
                max_order: 0,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, RelationError::InvalidOrder(0)));
    }

    #[test]
    fn finalize_binarizes_and_adds_diagonal() {
        let g = coauthor_toy();
        let s1 = with_reverses(&decompose(&g));
        let set = finalize(compose(&s1, &ComposeOptions::default()).unwrap()).unwrap();
        for rel in set.relations() {
            assert!(rel.mask.has_unit_diagonal());
        }
        // path count 1 at (0,1) in the coauthor relation became a mask bit
        let sig = vec![
            SignedRelation::forward(EdgeTypeId(0)),
            SignedRelation::reverse(EdgeTypeId(0)),
        ];
        let rel = set
            .relations()
            .iter()
            .find(|r| r.provenance.contains(&sig))
            .unwrap();
        assert!(rel.mask.contains(0, 1));
        // multiplicities survive as catalog stats: four 1-count paths
        let pos = rel.provenance.iter().position(|s| *s == sig).unwrap();
        assert_eq!(
            rel.stats[pos],
            PathStats {
                nnz: 4,
                total_paths: 4,
                max_count: 1
            }
        );
    }

    #[test]
    fn finalize_merges_symmetric_transpose_pair() {
        // symmetric actor-actor graph: forward and reversed masks coincide
        let g = HeteroGraph::from_parts(
            vec![VertexTypeId(0), VertexTypeId(0)],
            vec!["actor".into()],
            vec!["actor-actor".into()],
            vec![EdgeSchema {
                src: VertexTypeId(0),
                dst: VertexTypeId(0),
            }],
            vec![vec![(0, 1), (1, 0)]],
        );
        let s1 = with_reverses(&decompose(&g));
        let opts = ComposeOptions {
            max_order: 1,
            ..Default::default()
        };
        let set = finalize(compose(&s1, &opts).unwrap()).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.relations()[0].provenance.len(), 2);
    }

    #[test]
    fn finalize_errors_on_empty_set() {
        let g = HeteroGraph::from_parts(
            vec![VertexTypeId(0), VertexTypeId(1)],
            vec!["author".into(), "paper".into()],
            vec!["author-paper".into()],
            vec![EdgeSchema {
                src: VertexTypeId(0),
                dst: VertexTypeId(1),
            }],
            vec![vec![]],
        );
        let s1 = with_reverses(&decompose(&g));
        let composed = compose(&s1, &ComposeOptions::default()).unwrap();
        assert!(composed.is_empty());
        assert!(matches!(finalize(composed), Err(RelationError::EmptySet)));
    }

    #[test]
    fn catalog_names_meta_paths() {
        let g = coauthor_toy();
        let set = build_relation_set(
            &g,
            &ComposeOptions {
                max_order: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let catalog = relation_catalog(&set, &g);
        assert!(
            catalog.contains("author→paper→author"),
            "catalog was:\n{catalog}"
        );
        // every row carries at least one signature
        for rel in set.relations() {
            assert!(!rel.provenance.is_empty());
        }
    }

    #[test]
    fn homogenized_has_single_union_mask() {
        let g = dblp_shape();
        let set = homogenized(&g);
        assert_eq!(set.len(), 1);
        let rel = &set.relations()[0];
        assert!(rel.mask.has_unit_diagonal());
        assert_eq!(rel.provenance.len(), 8);
        // both directions of every edge present
        for t in 0..4 {
            for &(s, d) in g.edges(EdgeTypeId(t)) {
                assert!(rel.mask.contains(s, d));
                assert!(rel.mask.contains(d, s));
            }
        }
    }

    #[test]
    fn catalog_hash_tracks_structure() {
        let g = coauthor_toy();
        let opts = ComposeOptions::default();
        let a = build_relation_set(&g, &opts).unwrap();
        let b = build_relation_set(&g, &opts).unwrap();
        assert_eq!(a.catalog_hash(), b.catalog_hash());
        let k1 = build_relation_set(
            &g,
            &ComposeOptions {
                max_order: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_ne!(a.catalog_hash(), k1.catalog_hash());
    }
}
