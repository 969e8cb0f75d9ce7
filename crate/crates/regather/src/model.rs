//! Dual-level attention model.
//!
//! One branch per relation mask: a shared linear transform and a
//! single-head attention vector score each masked vertex pair, rows are
//! softmax-normalized, and neighborhoods are aggregated into per-relation
//! embeddings. A fusion head scores each relation with a small tanh
//! network, softmaxes the scores into relation weights, convex-combines
//! the embeddings, and a final linear classifier maps the fused embedding
//! to class logits.
//!
//! All stages run on an autodiff [`Tape`]; evaluation simply never calls
//! backward. Scores use the split identity `a·[x ∥ y] = a₁·x + a₂·y`, so
//! per-edge concatenations are never materialized.

use crate::autodiff::{DiffError, Scalar, SparseValues, Tape, Value, VarId};
use crate::sparse::CsrPattern;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

pub const DEFAULT_HIDDEN_DIM: usize = 64;
pub const DEFAULT_FUSION_DIM: usize = 128;
pub const DEFAULT_DROPOUT: f64 = 0.6;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Error, Debug)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("model configuration invalid: {0}")]
    Config(String),
    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),
    #[error("checkpoint I/O at {path}: {source}")]
    CheckpointIo {
        path: String,
        source: std::io::Error,
    },
    #[error("parameter {0} contains a non-finite entry")]
    NonFinite(String),
}

/// Hyperparameters and structural dimensions. `max_order` and `seed` are
/// carried for checkpoint provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_h: usize,
    pub d_q: usize,
    pub num_classes: usize,
    pub max_order: usize,
    pub leaky_slope: f64,
    pub dropout_rate: f64,
    pub seed: u64,
    /// Map the fused embedding through a trailing linear layer. When
    /// false, `d_h` must equal `num_classes` and the embedding is used as
    /// logits directly.
    pub use_classifier: bool,
    /// Average fusion scores over target-type vertices only instead of
    /// every vertex.
    pub restrict_fusion_mean: bool,
}

impl ModelConfig {
    /// Defaults for everything but the data-dependent dimensions.
    pub fn with_dims(d_in: usize, num_classes: usize) -> Self {
        Self {
            d_in,
            d_h: DEFAULT_HIDDEN_DIM,
            d_q: DEFAULT_FUSION_DIM,
            num_classes,
            max_order: 3,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            dropout_rate: DEFAULT_DROPOUT,
            seed: 0,
            use_classifier: true,
            restrict_fusion_mean: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("d_in", self.d_in),
            ("d_h", self.d_h),
            ("d_q", self.d_q),
            ("num_classes", self.num_classes),
            ("max_order", self.max_order),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be >= 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !self.leaky_slope.is_finite() {
            return Err(ModelError::Config("leaky slope must be finite".into()));
        }
        if !self.use_classifier && self.d_h != self.num_classes {
            return Err(ModelError::Config(format!(
                "without a classifier d_h ({}) must equal the class count ({})",
                self.d_h, self.num_classes
            )));
        }
        Ok(())
    }
}

/// Per-relation attention parameters: one shared transform and one
/// attention vector — the single-head contract.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeAttentionParams<F: Scalar> {
    /// d_in x d_h transform applied to every vertex.
    pub weight: Array2<F>,
    /// (2*d_h) x 1 attention vector over concatenated endpoint transforms.
    pub attention: Array2<F>,
}

/// Relation-fusion parameters shared across relations and vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams<F: Scalar> {
    /// d_h x d_q projection into the fusion space.
    pub weight: Array2<F>,
    /// 1 x d_q bias.
    pub bias: Array2<F>,
    /// d_q x 1 relation attention vector.
    pub query: Array2<F>,
}

/// Trailing linear classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams<F: Scalar> {
    /// d_h x L.
    pub weight: Array2<F>,
    /// 1 x L.
    pub bias: Array2<F>,
}

/// All learnable state.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F: Scalar> {
    pub node: Vec<NodeAttentionParams<F>>,
    pub fusion: FusionParams<F>,
    pub classifier: Option<ClassifierParams<F>>,
}

impl<F: Scalar> ModelParams<F> {
    pub fn num_relations(&self) -> usize {
        self.node.len()
    }

    /// Named views of every parameter matrix, in the fixed order the
    /// optimizer walks: node branches first, then fusion, then classifier.
    pub fn slots(&self) -> Vec<(String, &Array2<F>)> {
        let mut out = Vec::new();
        for (i, p) in self.node.iter().enumerate() {
            out.push((format!("node[{i}].weight"), &p.weight));
            out.push((format!("node[{i}].attention"), &p.attention));
        }
        out.push(("fusion.weight".into(), &self.fusion.weight));
        out.push(("fusion.bias".into(), &self.fusion.bias));
        out.push(("fusion.query".into(), &self.fusion.query));
        if let Some(c) = &self.classifier {
            out.push(("classifier.weight".into(), &c.weight));
            out.push(("classifier.bias".into(), &c.bias));
        }
        out
    }

    /// Mutable counterpart of [`ModelParams::slots`], same order.
    pub fn slots_mut(&mut self) -> Vec<(String, &mut Array2<F>)> {
        let mut out = Vec::new();
        for (i, p) in self.node.iter_mut().enumerate() {
            out.push((format!("node[{i}].weight"), &mut p.weight));
            out.push((format!("node[{i}].attention"), &mut p.attention));
        }
        out.push(("fusion.weight".into(), &mut self.fusion.weight));
        out.push(("fusion.bias".into(), &mut self.fusion.bias));
        out.push(("fusion.query".into(), &mut self.fusion.query));
        if let Some(c) = &mut self.classifier {
            out.push(("classifier.weight".into(), &mut c.weight));
            out.push(("classifier.bias".into(), &mut c.bias));
        }
        out
    }

    pub fn validate_finite(&self) -> Result<(), ModelError> {
        for (name, m) in self.slots() {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite(name));
            }
        }
        Ok(())
    }
}

/// Deterministically derive a sub-seed from a root seed and a tag path
/// (splitmix64-style mixing). Identical inputs give identical streams;
/// differing any tag decorrelates them.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut s = mix(root);
    for &t in tags {
        s = mix(s ^ mix(t));
    }
    s
}

fn glorot<F: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<F> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| F::from_f64(rng.gen_range(-limit..limit)))
}

/// Fresh parameters: uniform Glorot matrices and attention vectors, zero
/// biases, drawn in a fixed order from the config seed. Draws are made in
/// f64 so 32- and 64-bit runs share one random stream.
pub fn init_params<F: Scalar>(
    config: &ModelConfig,
    num_relations: usize,
) -> Result<ModelParams<F>, ModelError> {
    config.validate()?;
    if num_relations == 0 {
        return Err(ModelError::Config(
            "model needs at least one relation".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[b'i' as u64]));
    let node = (0..num_relations)
        .map(|_| NodeAttentionParams {
            weight: glorot(&mut rng, config.d_in, config.d_h),
            attention: glorot(&mut rng, 2 * config.d_h, 1),
        })
        .collect();
    let fusion = FusionParams {
        weight: glorot(&mut rng, config.d_h, config.d_q),
        bias: Array2::zeros((1, config.d_q)),
        query: glorot(&mut rng, config.d_q, 1),
    };
    let classifier = config.use_classifier.then(|| ClassifierParams {
        weight: glorot(&mut rng, config.d_h, config.num_classes),
        bias: Array2::zeros((1, config.num_classes)),
    });
    Ok(ModelParams {
        node,
        fusion,
        classifier,
    })
}

/// Forward-pass mode. Training applies dropout with masks derived from
/// the given seed; evaluation is deterministic and dropout-free.
#[derive(Clone, Copy, Debug)]
pub enum Mode {
    Eval,
    Train { dropout_seed: u64 },
}

/// Dropout sites within one relation branch.
const SITE_INPUT: u64 = 0;
const SITE_ALPHA: u64 = 1;

pub(crate) struct PhiVars {
    pub z: VarId,
    pub weight: VarId,
    pub attention: VarId,
}

/// Build one relation branch on the tape: features through transform,
/// masked pair scores, row softmax, aggregation, ELU.
pub(crate) fn build_phi_branch<F: Scalar>(
    tape: &mut Tape<F>,
    mask: &Arc<CsrPattern>,
    features: VarId,
    params: &NodeAttentionParams<F>,
    config: &ModelConfig,
    dropout_seeds: Option<(u64, u64)>,
) -> Result<PhiVars, ModelError> {
    let weight = tape.param_dense(params.weight.clone());
    let attention = tape.param_dense(params.attention.clone());
    let h = match dropout_seeds {
        Some((seed, _)) => tape.dropout(features, config.dropout_rate, seed)?,
        None => features,
    };
    let transformed = tape.matmul(h, weight)?;
    let a_src = tape.slice_rows(attention, 0, config.d_h)?;
    let a_dst = tape.slice_rows(attention, config.d_h, config.d_h)?;
    let left = tape.matmul(transformed, a_src)?;
    let right = tape.matmul(transformed, a_dst)?;
    let scores = tape.edge_pair_sum(left, right, Arc::clone(mask))?;
    let scores = tape.leaky_relu_sparse(scores, F::from_f64(config.leaky_slope))?;
    let alpha = tape.row_softmax_sparse(scores)?;
    let alpha = match dropout_seeds {
        Some((_, seed)) => tape.dropout(alpha, config.dropout_rate, seed)?,
        None => alpha,
    };
    let aggregated = tape.spmm(alpha, transformed)?;
    let z = tape.elu(aggregated)?;
    Ok(PhiVars {
        z,
        weight,
        attention,
    })
}

pub(crate) struct FusionVars {
    pub logits: VarId,
    pub beta: VarId,
    pub scores: VarId,
    pub weight: VarId,
    pub bias: VarId,
    pub query: VarId,
    pub classifier: Option<(VarId, VarId)>,
}

/// Build the fusion head over per-relation embeddings already on the
/// tape: score each relation, softmax into weights, combine, classify.
pub(crate) fn build_fusion_head<F: Scalar>(
    tape: &mut Tape<F>,
    z_vars: &[VarId],
    fusion: &FusionParams<F>,
    classifier: Option<&ClassifierParams<F>>,
    restrict_rows: Option<&Arc<Vec<usize>>>,
) -> Result<FusionVars, ModelError> {
    let weight = tape.param_dense(fusion.weight.clone());
    let bias = tape.param_dense(fusion.bias.clone());
    let query = tape.param_dense(fusion.query.clone());
    let mut per_relation = Vec::with_capacity(z_vars.len());
    for &z in z_vars {
        let projected = tape.matmul(z, weight)?;
        let shifted = tape.add_row_bias(projected, bias)?;
        let activated = tape.tanh(shifted)?;
        let scored = tape.matmul(activated, query)?;
        let mean = match restrict_rows {
            Some(rows) => tape.mean_rows(scored, Arc::clone(rows))?,
            None => tape.mean_all(scored)?,
        };
        per_relation.push(mean);
    }
    let scores = tape.stack_scalars(&per_relation)?;
    let beta = tape.softmax_vec(scores)?;
    let fused = tape.convex_combine(beta, z_vars)?;
    let (logits, classifier) = match classifier {
        Some(c) => {
            let cw = tape.param_dense(c.weight.clone());
            let cb = tape.param_dense(c.bias.clone());
            let projected = tape.matmul(fused, cw)?;
            let logits = tape.add_row_bias(projected, cb)?;
            (logits, Some((cw, cb)))
        }
        None => (fused, None),
    };
    Ok(FusionVars {
        logits,
        beta,
        scores,
        weight,
        bias,
        query,
        classifier,
    })
}

pub(crate) fn phi_dropout_seeds(mode: Mode, phi: usize) -> Option<(u64, u64)> {
    match mode {
        Mode::Eval => None,
        Mode::Train { dropout_seed } => Some((
            derive_seed(dropout_seed, &[phi as u64, SITE_INPUT]),
            derive_seed(dropout_seed, &[phi as u64, SITE_ALPHA]),
        )),
    }
}

/// Everything the full forward pass produces besides gradients.
#[derive(Clone, Debug)]
pub struct ForwardOutput<F: Scalar> {
    /// |V| x L class logits.
    pub logits: Array2<F>,
    /// Pre-softmax relation scores w, in relation order.
    pub fusion_scores: Vec<F>,
    /// Relation weights β (softmax of the scores).
    pub beta: Vec<F>,
}

/// Run the whole model. `masks` must be the relation-set masks in
/// relation order; `restrict_rows` supplies the target-type vertex list
/// when the config restricts the fusion mean.
pub fn forward<F: Scalar>(
    features: &Array2<F>,
    masks: &[Arc<CsrPattern>],
    params: &ModelParams<F>,
    config: &ModelConfig,
    restrict_rows: Option<&Arc<Vec<usize>>>,
    mode: Mode,
) -> Result<ForwardOutput<F>, ModelError> {
    if masks.len() != params.node.len() {
        return Err(ModelError::Config(format!(
            "{} masks but {} node-attention branches",
            masks.len(),
            params.node.len()
        )));
    }
    if masks.is_empty() {
        return Err(ModelError::Config("relation set is empty".into()));
    }
    if config.restrict_fusion_mean && restrict_rows.is_none() {
        return Err(ModelError::Config(
            "restricted fusion mean needs the target-type vertex list".into(),
        ));
    }
    let mut tape: Tape<F> = Tape::new();
    let x = tape.constant_dense(features.clone());
    let mut z_vars = Vec::with_capacity(masks.len());
    for (phi, mask) in masks.iter().enumerate() {
        let branch = build_phi_branch(
            &mut tape,
            mask,
            x,
            &params.node[phi],
            config,
            phi_dropout_seeds(mode, phi),
        )?;
        z_vars.push(branch.z);
    }
    let rows = config.restrict_fusion_mean.then(|| restrict_rows.unwrap());
    let head = build_fusion_head(
        &mut tape,
        &z_vars,
        &params.fusion,
        params.classifier.as_ref(),
        rows,
    )?;
    let logits = tape
        .value(head.logits)
        .as_dense()
        .expect("logits are dense")
        .clone();
    let column = |v: VarId| -> Vec<F> {
        tape.value(v)
            .as_dense()
            .expect("fusion columns are dense")
            .iter()
            .copied()
            .collect()
    };
    Ok(ForwardOutput {
        logits,
        fusion_scores: column(head.scores),
        beta: column(head.beta),
    })
}

// ----- staged operations (evaluation semantics, no dropout) -----

/// Unnormalized pair scores on the mask:
/// `LeakyReLU(a[0:d_h]·(W h_i) + a[d_h:2d_h]·(W h_j))` at every slot.
pub fn node_attention_scores<F: Scalar>(
    mask: &Arc<CsrPattern>,
    features: &Array2<F>,
    params: &NodeAttentionParams<F>,
    leaky_slope: f64,
) -> Result<SparseValues<F>, ModelError> {
    let d_h = params.weight.ncols();
    let mut tape: Tape<F> = Tape::new();
    let x = tape.constant_dense(features.clone());
    let w = tape.constant_dense(params.weight.clone());
    let a = tape.constant_dense(params.attention.clone());
    let transformed = tape.matmul(x, w)?;
    let a_src = tape.slice_rows(a, 0, d_h)?;
    let a_dst = tape.slice_rows(a, d_h, d_h)?;
    let left = tape.matmul(transformed, a_src)?;
    let right = tape.matmul(transformed, a_dst)?;
    let scores = tape.edge_pair_sum(left, right, Arc::clone(mask))?;
    let scores = tape.leaky_relu_sparse(scores, F::from_f64(leaky_slope))?;
    Ok(tape
        .value(scores)
        .as_sparse()
        .expect("scores are sparse")
        .clone())
}

/// Row-stochastic attention weights from raw scores.
pub fn node_attention_weights<F: Scalar>(
    scores: &SparseValues<F>,
) -> Result<SparseValues<F>, ModelError> {
    let mut tape: Tape<F> = Tape::new();
    let e = tape.constant(Value::Sparse(scores.clone()));
    let alpha = tape.row_softmax_sparse(e)?;
    Ok(tape
        .value(alpha)
        .as_sparse()
        .expect("weights are sparse")
        .clone())
}

/// Per-relation embedding `ELU(alpha · (features · W))`.
pub fn node_attention_output<F: Scalar>(
    alpha: &SparseValues<F>,
    features: &Array2<F>,
    params: &NodeAttentionParams<F>,
) -> Result<Array2<F>, ModelError> {
    let mut tape: Tape<F> = Tape::new();
    let x = tape.constant_dense(features.clone());
    let w = tape.constant_dense(params.weight.clone());
    let a = tape.constant(Value::Sparse(alpha.clone()));
    let transformed = tape.matmul(x, w)?;
    let aggregated = tape.spmm(a, transformed)?;
    let z = tape.elu(aggregated)?;
    Ok(tape.value(z).as_dense().expect("embedding is dense").clone())
}

/// One scalar per relation: the mean over vertices of
/// `q · tanh(F z_i + b)`, optionally restricted to the given rows.
pub fn fusion_scores<F: Scalar>(
    embeddings: &[Array2<F>],
    params: &FusionParams<F>,
    restrict_rows: Option<&Arc<Vec<usize>>>,
) -> Result<Vec<F>, ModelError> {
    let mut tape: Tape<F> = Tape::new();
    let weight = tape.constant_dense(params.weight.clone());
    let bias = tape.constant_dense(params.bias.clone());
    let query = tape.constant_dense(params.query.clone());
    let mut out = Vec::with_capacity(embeddings.len());
    for z in embeddings {
        let zv = tape.constant_dense(z.clone());
        let projected = tape.matmul(zv, weight)?;
        let shifted = tape.add_row_bias(projected, bias)?;
        let activated = tape.tanh(shifted)?;
        let scored = tape.matmul(activated, query)?;
        let mean = match restrict_rows {
            Some(rows) => tape.mean_rows(scored, Arc::clone(rows))?,
            None => tape.mean_all(scored)?,
        };
        out.push(tape.value(mean).as_dense().expect("score is dense")[[0, 0]]);
    }
    Ok(out)
}

/// Relation weights β: softmax over the fusion scores.
pub fn fusion_weights<F: Scalar>(scores: &[F]) -> Result<Vec<F>, ModelError> {
    if scores.is_empty() {
        return Err(ModelError::Config("no relation scores to weight".into()));
    }
    let mut tape: Tape<F> = Tape::new();
    let col = tape.constant_dense(Array2::from_shape_fn((scores.len(), 1), |(i, _)| scores[i]));
    let beta = tape.softmax_vec(col)?;
    Ok(tape
        .value(beta)
        .as_dense()
        .expect("weights are dense")
        .iter()
        .copied()
        .collect())
}

/// Convex combination of the per-relation embeddings.
pub fn fuse<F: Scalar>(
    embeddings: &[Array2<F>],
    weights: &[F],
) -> Result<Array2<F>, ModelError> {
    if embeddings.len() != weights.len() {
        return Err(ModelError::Config(format!(
            "{} embeddings but {} weights",
            embeddings.len(),
            weights.len()
        )));
    }
    let mut tape: Tape<F> = Tape::new();
    let col = tape.constant_dense(Array2::from_shape_fn((weights.len(), 1), |(i, _)| weights[i]));
    let items: Vec<VarId> = embeddings
        .iter()
        .map(|z| tape.constant_dense(z.clone()))
        .collect();
    let fused = tape.convex_combine(col, &items)?;
    Ok(tape
        .value(fused)
        .as_dense()
        .expect("fused embedding is dense")
        .clone())
}

// ----- checkpoints -----

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    weight: Vec<Vec<f64>>,
    attention: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct FusionDoc {
    weight: Vec<Vec<f64>>,
    bias: Vec<Vec<f64>>,
    query: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ClassifierDoc {
    weight: Vec<Vec<f64>>,
    bias: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format_version: u32,
    precision: String,
    catalog_hash: String,
    config: ModelConfig,
    node: Vec<NodeDoc>,
    fusion: FusionDoc,
    classifier: Option<ClassifierDoc>,
}

fn matrix_to_rows<F: Scalar>(m: &Array2<F>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect()
}

fn rows_to_matrix<F: Scalar>(
    rows: &[Vec<f64>],
    name: &str,
    shape: (usize, usize),
) -> Result<Array2<F>, ModelError> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(ModelError::Checkpoint(format!(
            "{name} must be {}x{}",
            shape.0, shape.1
        )));
    }
    let m = Array2::from_shape_fn(shape, |(i, j)| F::from_f64(rows[i][j]));
    if m.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Checkpoint(format!(
            "{name} contains a non-finite entry"
        )));
    }
    Ok(m)
}

/// Write a versioned JSON checkpoint. Values round-trip exactly: the JSON
/// encoder prints the shortest decimal that parses back to the same float.
pub fn save_checkpoint<F: Scalar>(
    path: &Path,
    config: &ModelConfig,
    params: &ModelParams<F>,
    catalog_hash: &str,
) -> Result<(), ModelError> {
    let doc = CheckpointDoc {
        format_version: CHECKPOINT_VERSION,
        precision: F::type_name().to_string(),
        catalog_hash: catalog_hash.to_string(),
        config: config.clone(),
        node: params
            .node
            .iter()
            .map(|p| NodeDoc {
                weight: matrix_to_rows(&p.weight),
                attention: matrix_to_rows(&p.attention),
            })
            .collect(),
        fusion: FusionDoc {
            weight: matrix_to_rows(&params.fusion.weight),
            bias: matrix_to_rows(&params.fusion.bias),
            query: matrix_to_rows(&params.fusion.query),
        },
        classifier: params.classifier.as_ref().map(|c| ClassifierDoc {
            weight: matrix_to_rows(&c.weight),
            bias: matrix_to_rows(&c.bias),
        }),
    };
    let text = serde_json::to_string(&doc).expect("checkpoint serializes");
    std::fs::write(path, text).map_err(|e| ModelError::CheckpointIo {
        path: path.display().to_string(),
        source: e,
    })
}

/// Relation-catalog hash stored in a checkpoint, without loading the
/// parameters into any particular precision.
pub fn checkpoint_catalog_hash(path: &Path) -> Result<String, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::CheckpointIo {
        path: path.display().to_string(),
        source: e,
    })?;
    let doc: CheckpointDoc = serde_json::from_str(&text)
        .map_err(|e| ModelError::Checkpoint(format!("malformed checkpoint: {e}")))?;
    Ok(doc.catalog_hash)
}

/// Load and validate a checkpoint. Refuses version, precision, or relation
/// catalog mismatches and malformed shapes.
pub fn load_checkpoint<F: Scalar>(
    path: &Path,
    expected_catalog_hash: Option<&str>,
) -> Result<(ModelConfig, ModelParams<F>), ModelError> {
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::CheckpointIo {
        path: path.display().to_string(),
        source: e,
    })?;
    let doc: CheckpointDoc = serde_json::from_str(&text)
        .map_err(|e| ModelError::Checkpoint(format!("malformed checkpoint: {e}")))?;
    if doc.format_version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "format version {} unsupported (expected {CHECKPOINT_VERSION})",
            doc.format_version
        )));
    }
    if doc.precision != F::type_name() {
        return Err(ModelError::Checkpoint(format!(
            "precision {} does not match this run's {}",
            doc.precision,
            F::type_name()
        )));
    }
    if let Some(expected) = expected_catalog_hash {
        if doc.catalog_hash != expected {
            return Err(ModelError::Checkpoint(
                "trained against a different relation set (catalog hash mismatch)".into(),
            ));
        }
    }
    let config = doc.config;
    config.validate()?;
    if doc.node.is_empty() {
        return Err(ModelError::Checkpoint("no node-attention branches".into()));
    }
    let mut node = Vec::with_capacity(doc.node.len());
    for (i, nd) in doc.node.iter().enumerate() {
        node.push(NodeAttentionParams {
            weight: rows_to_matrix(
                &nd.weight,
                &format!("node[{i}].weight"),
                (config.d_in, config.d_h),
            )?,
            attention: rows_to_matrix(
                &nd.attention,
                &format!("node[{i}].attention"),
                (2 * config.d_h, 1),
            )?,
        });
    }
    let fusion = FusionParams {
        weight: rows_to_matrix(&doc.fusion.weight, "fusion.weight", (config.d_h, config.d_q))?,
        bias: rows_to_matrix(&doc.fusion.bias, "fusion.bias", (1, config.d_q))?,
        query: rows_to_matrix(&doc.fusion.query, "fusion.query", (config.d_q, 1))?,
    };
    let classifier = match (&doc.classifier, config.use_classifier) {
        (Some(c), true) => Some(ClassifierParams {
            weight: rows_to_matrix(
                &c.weight,
                "classifier.weight",
                (config.d_h, config.num_classes),
            )?,
            bias: rows_to_matrix(&c.bias, "classifier.bias", (1, config.num_classes))?,
        }),
        (None, false) => None,
        _ => {
            return Err(ModelError::Checkpoint(
                "classifier presence disagrees with the config".into(),
            ))
        }
    };
    Ok((
        config,
        ModelParams {
            node,
            fusion,
            classifier,
        },
    ))
}
