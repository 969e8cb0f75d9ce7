//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive as it executes; [`Tape::backward`]
//! replays the record in exact reverse order and accumulates gradients on
//! the leaves. The op set is deliberately small: only the shapes and
//! kernels the attention model needs, no general broadcasting. Sparse
//! values share a mask's [`CsrPattern`] and their gradients live on the
//! same pattern — backward never densifies.
//!
//! Tapes are single-threaded; independent tapes may run in parallel and
//! merge their leaf gradients by ordered summation. Higher-order
//! derivatives are unsupported: a tape differentiates once.

use crate::sparse::CsrPattern;
use ndarray::{Array2, Axis, LinalgScalar};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Floating-point element type of tapes and parameters. `f64` is the
/// default throughout; `f32` is offered behind a runtime flag.
pub trait Scalar:
    LinalgScalar + Float + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self {
        num_traits::cast(x).expect("f64 value representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        num_traits::cast(self).expect("scalar value representable as f64")
    }

    /// Stable name used to tag serialized artifacts with their precision.
    fn type_name() -> &'static str;
}

impl Scalar for f32 {
    fn type_name() -> &'static str {
        "f32"
    }
}

impl Scalar for f64 {
    fn type_name() -> &'static str {
        "f64"
    }
}

#[derive(Error, Debug)]
pub enum DiffError {
    #[error("{op}: {details}")]
    Shape { op: &'static str, details: String },
    #[error("backward needs a scalar output, got {rows}x{cols}")]
    NonScalarOutput { rows: usize, cols: usize },
    #[error("backward already ran on this tape; higher-order derivatives are not supported")]
    DoubleBackward,
    #[error("cross-entropy mask is empty")]
    EmptyMask,
    #[error("dropout rate must be in [0, 1), got {0}")]
    DropoutRate(f64),
}

fn shape_err(op: &'static str, details: String) -> DiffError {
    DiffError::Shape { op, details }
}

/// Values aligned to a sparse mask: one entry per non-zero slot of the
/// pattern, in the pattern's row-major slot order.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseValues<F: Scalar> {
    pattern: Arc<CsrPattern>,
    values: Vec<F>,
}

impl<F: Scalar> SparseValues<F> {
    pub fn new(pattern: Arc<CsrPattern>, values: Vec<F>) -> Self {
        assert_eq!(
            values.len(),
            pattern.nnz(),
            "one value per pattern slot required"
        );
        Self { pattern, values }
    }

    pub fn zeros(pattern: Arc<CsrPattern>) -> Self {
        let n = pattern.nnz();
        Self::new(pattern, vec![F::zero(); n])
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    /// Value at (i, j), or zero outside the pattern.
    pub fn get(&self, i: usize, j: usize) -> F {
        let range = self.pattern.row_range(i);
        match self.pattern.row(i).binary_search(&j) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => F::zero(),
        }
    }

    /// (row, col, value) triples in slot order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, F)> + '_ {
        self.pattern
            .iter()
            .zip(self.values.iter())
            .map(|((i, j), &v)| (i, j, v))
    }
}

/// A tape value: dense matrix or mask-aligned sparse values. Vectors are
/// single-column matrices; scalars are 1x1.
#[derive(Clone, Debug, PartialEq)]
pub enum Value<F: Scalar> {
    Dense(Array2<F>),
    Sparse(SparseValues<F>),
}

impl<F: Scalar> Value<F> {
    pub fn scalar(x: F) -> Self {
        Value::Dense(Array2::from_elem((1, 1), x))
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Value::Dense(a) => (a.nrows(), a.ncols()),
            Value::Sparse(s) => (s.pattern.nrows(), s.pattern.ncols()),
        }
    }

    pub fn as_dense(&self) -> Option<&Array2<F>> {
        match self {
            Value::Dense(a) => Some(a),
            Value::Sparse(_) => None,
        }
    }

    pub fn as_sparse(&self) -> Option<&SparseValues<F>> {
        match self {
            Value::Sparse(s) => Some(s),
            Value::Dense(_) => None,
        }
    }

    fn add_assign(&mut self, other: &Value<F>) {
        match (self, other) {
            (Value::Dense(a), Value::Dense(b)) => *a = &*a + b,
            (Value::Sparse(a), Value::Sparse(b)) => {
                debug_assert_eq!(a.pattern, b.pattern, "gradient patterns must match");
                for (x, y) in a.values.iter_mut().zip(&b.values) {
                    *x = *x + *y;
                }
            }
            _ => unreachable!("gradient kind always matches the value kind"),
        }
    }
}

/// Cross-entropy reduction over the labeled mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    /// Mean over masked vertices (default; decouples lr from mask size).
    Mean,
    /// Plain sum, the literal objective.
    Sum,
}

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarId(usize);

enum Op<F: Scalar> {
    Leaf,
    /// inputs [a, b]: dense a · b
    Matmul,
    /// inputs [x, bias]: x + bias broadcast over rows
    AddRowBias,
    /// inputs [x]
    Elu,
    /// inputs [x]
    Tanh,
    /// inputs [x]
    LeakyRelu { slope: F },
    /// inputs [x] -> 1x1
    MeanAll,
    /// inputs [x] -> 1x1
    SumAll,
    /// inputs [x] -> 1x1; mean over the listed rows (all columns)
    MeanRows { rows: Arc<Vec<usize>> },
    /// inputs [x] -> contiguous row block
    SliceRows { start: usize },
    /// inputs: k scalars -> (k, 1)
    StackScalars,
    /// inputs [x]: softmax down a single column
    SoftmaxVec,
    /// inputs [w, x_0, .., x_{k-1}]: sum_i w_i * x_i
    ConvexCombine,
    /// inputs [x]: zero dropped slots, scale kept ones
    Dropout { keep: Arc<Vec<bool>>, scale: F },
    /// inputs [logits] -> 1x1
    MaskedCrossEntropy {
        targets: Arc<Vec<(usize, usize)>>,
        scale: F,
    },
    /// inputs [left, right]: sparse e_ij = left_i + right_j on the pattern
    EdgePairSum,
    /// inputs [e]
    LeakyReluSparse { slope: F },
    /// inputs [e]: softmax within each pattern row
    RowSoftmaxSparse,
    /// inputs [e] -> 1x1
    SumSparse,
    /// inputs [alpha, h]: sparse-times-dense product
    Spmm,
}

struct Node<F: Scalar> {
    value: Value<F>,
    op: Op<F>,
    inputs: Vec<VarId>,
    needs_grad: bool,
}

/// Leaf gradients produced by one backward pass.
pub struct Gradients<F: Scalar> {
    grads: Vec<Option<Value<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: VarId) -> Option<&Value<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: VarId) -> Option<Value<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Execution record: values are computed eagerly as ops are pushed, and
/// the op sequence is replayed in reverse by [`Tape::backward`].
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    backward_done: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: VarId) -> &Value<F> {
        &self.nodes[v.0].value
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Value<F>) -> VarId {
        self.push(value, Op::Leaf, vec![], true)
    }

    /// Leaf without a gradient (inputs, fixed masks).
    pub fn constant(&mut self, value: Value<F>) -> VarId {
        self.push(value, Op::Leaf, vec![], false)
    }

    pub fn param_dense(&mut self, value: Array2<F>) -> VarId {
        self.param(Value::Dense(value))
    }

    pub fn constant_dense(&mut self, value: Array2<F>) -> VarId {
        self.constant(Value::Dense(value))
    }

    fn push(&mut self, value: Value<F>, op: Op<F>, inputs: Vec<VarId>, needs_grad: bool) -> VarId {
        let id = VarId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            inputs,
            needs_grad,
        });
        id
    }

    fn any_grad(&self, inputs: &[VarId]) -> bool {
        inputs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn dense(&self, v: VarId, op: &'static str) -> Result<&Array2<F>, DiffError> {
        self.nodes[v.0]
            .value
            .as_dense()
            .ok_or_else(|| shape_err(op, "expected a dense operand".into()))
    }

    fn sparse(&self, v: VarId, op: &'static str) -> Result<&SparseValues<F>, DiffError> {
        self.nodes[v.0]
            .value
            .as_sparse()
            .ok_or_else(|| shape_err(op, "expected a sparse operand".into()))
    }

    // ----- dense ops -----

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId, DiffError> {
        let av = self.dense(a, "matmul")?;
        let bv = self.dense(b, "matmul")?;
        if av.ncols() != bv.nrows() {
            return Err(shape_err(
                "matmul",
                format!(
                    "inner dimensions disagree: {}x{} times {}x{}",
                    av.nrows(),
                    av.ncols(),
                    bv.nrows(),
                    bv.ncols()
                ),
            ));
        }
        let out = av.dot(bv);
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(Value::Dense(out), Op::Matmul, vec![a, b], needs))
    }

    pub fn add_row_bias(&mut self, x: VarId, bias: VarId) -> Result<VarId, DiffError> {
        let xv = self.dense(x, "add_row_bias")?;
        let bv = self.dense(bias, "add_row_bias")?;
        if bv.nrows() != 1 || bv.ncols() != xv.ncols() {
            return Err(shape_err(
                "add_row_bias",
                format!(
                    "bias must be 1x{}, got {}x{}",
                    xv.ncols(),
                    bv.nrows(),
                    bv.ncols()
                ),
            ));
        }
        let out = xv + bv;
        let needs = self.any_grad(&[x, bias]);
        Ok(self.push(Value::Dense(out), Op::AddRowBias, vec![x, bias], needs))
    }

    pub fn elu(&mut self, x: VarId) -> Result<VarId, DiffError> {
        let xv = self.dense(x, "elu")?;
        let out = xv.mapv(|v| if v > F::zero() { v } else { v.exp() - F::one() });
        let needs = self.any_grad(&[x]);
        Ok(self.push(Value::Dense(out), Op::Elu, vec![x], needs))
    }

    pub fn tanh(&mut self, x: VarId) -> Result<VarId, DiffError> {
        let xv = self.dense(x, "tanh")?;
        let out = xv.mapv(Float::tanh);
        let needs = self.any_grad(&[x]);
        Ok(self.push(Value::Dense(out), Op::Tanh, vec![x], needs))
    }

    pub fn leaky_relu(&mut self, x: VarId, slope: F) -> Result<VarId, DiffError> {
        let xv = self.dense(x, "leaky_relu")?;
        let out = xv.mapv(|v| if v > F::zero() { v } else { slope * v });
        let needs = self.any_grad(&[x]);
        Ok(self.push(Value::Dense(out), Op::LeakyRelu { slope }, vec![x], needs))
    }

    pub fn mean_all(&mut self, x: VarId) -> Result<VarId, DiffError> {
        let xv = self.dense(x, "mean_all")?;
        let count = F::from_f64((xv.nrows() * xv.ncols()) as f64);
        let total = xv.iter().fold(F::zero(), |acc, &v| acc + v);
        let needs = self.any_grad(&[x]);
        Ok(self.push(Value::scalar(total / count), Op::MeanAll, vec![x], needs))
    }

    pub fn sum_all(&mut self, x: VarId) -> Result<VarId, DiffError> {
        let xv = self.dense(x, "sum_all")?;
        let total = xv.iter().fold(F::zero(), |acc, &v| acc + v);
        let needs = self.any_grad(&[x]);
        Ok(self.push(Value::scalar(total), Op::SumAll, vec![x], needs))
    }

    /// Mean over all entries of the listed rows. Rows must be distinct and
    /// in bounds.
    pub fn mean_rows(&mut self, x: VarId, rows: Arc<Vec<usize>>) -> Result<VarId, DiffError> {
        let xv = self.dense(x, "mean_rows")?;
        if rows.is_empty() {
            return Err(shape_err("mean_rows", "row subset is empty".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= xv.nrows()) {
            return Err(shape_err(
                "mean_rows",
                format!("row {bad} out of bounds for {} rows", xv.nrows()),
            ));
        }
        let count = F::from_f64((rows.len() * xv.ncols()) as f64);
        let mut total = F::zero();
        for &r in rows.iter() {
            for &v in xv.row(r) {
                total = total + v;
            }
        }
        let needs = self.any_grad(&[x]);
        Ok(self.push(
            Value::scalar(total / count),
            Op::MeanRows { rows },
            vec![x],
            needs,
        ))
    }

    pub fn slice_rows(&mut self, x: VarId, start: usize, len: usize) -> Result<VarId, DiffError> {
        let xv = self.dense(x, "slice_rows")?;
        if len == 0 || start + len > xv.nrows() {
            return Err(shape_err(
                "slice_rows",
                format!(
                    "rows {start}..{} out of bounds for {} rows",
                    start + len,
                    xv.nrows()
                ),
            ));
        }
        let out = xv.slice(ndarray::s![start..start + len, ..]).to_owned();
        let needs = self.any_grad(&[x]);
        Ok(self.push(
            Value::Dense(out),
            Op::SliceRows { start },
            vec![x],
            needs,
        ))
    }

    /// Stack 1x1 values into a (k, 1) column.
    pub fn stack_scalars(&mut self, items: &[VarId]) -> Result<VarId, DiffError> {
        if items.is_empty() {
            return Err(shape_err("stack_scalars", "nothing to stack".into()));
        }
        let mut col = Array2::zeros((items.len(), 1));
        for (i, &v) in items.iter().enumerate() {
            let val = self.dense(v, "stack_scalars")?;
            if val.raw_dim() != ndarray::Dim([1, 1]) {
                return Err(shape_err(
                    "stack_scalars",
                    format!("item {i} is {}x{}, expected 1x1", val.nrows(), val.ncols()),
                ));
            }
            col[[i, 0]] = val[[0, 0]];
        }
        let needs = self.any_grad(items);
        Ok(self.push(
            Value::Dense(col),
            Op::StackScalars,
            items.to_vec(),
            needs,
        ))
    }

    /// Numerically stable softmax down a (k, 1) column.
    pub fn softmax_vec(&mut self, x: VarId) -> Result<VarId, DiffError> {
        let xv = self.dense(x, "softmax_vec")?;
        if xv.ncols() != 1 || xv.nrows() == 0 {
            return Err(shape_err(
                "softmax_vec",
                format!("expected a k x 1 column, got {}x{}", xv.nrows(), xv.ncols()),
            ));
        }
        let max = xv.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let exps = xv.mapv(|v| (v - max).exp());
        let total = exps.iter().fold(F::zero(), |acc, &v| acc + v);
        let out = exps.mapv(|v| v / total);
        let needs = self.any_grad(&[x]);
        Ok(self.push(Value::Dense(out), Op::SoftmaxVec, vec![x], needs))
    }

    /// `sum_i weights[i] * items[i]` for equally shaped dense items and a
    /// (k, 1) weight column.
    pub fn convex_combine(&mut self, weights: VarId, items: &[VarId]) -> Result<VarId, DiffError> {
        if items.is_empty() {
            return Err(shape_err("convex_combine", "no items to combine".into()));
        }
        let wv = self.dense(weights, "convex_combine")?;
        if wv.ncols() != 1 || wv.nrows() != items.len() {
            return Err(shape_err(
                "convex_combine",
                format!(
                    "weights must be {}x1, got {}x{}",
                    items.len(),
                    wv.nrows(),
                    wv.ncols()
                ),
            ));
        }
        let shape = self.dense(items[0], "convex_combine")?.raw_dim();
        let mut out = Array2::zeros(shape);
        for (i, &item) in items.iter().enumerate() {
            let iv = self.dense(item, "convex_combine")?;
            if iv.raw_dim() != shape {
                return Err(shape_err(
                    "convex_combine",
                    format!("item {i} shape differs from item 0"),
                ));
            }
            let w = self.dense(weights, "convex_combine")?[[i, 0]];
            out.scaled_add(w, iv);
        }
        let mut inputs = vec![weights];
        inputs.extend_from_slice(items);
        let needs = self.any_grad(&inputs);
        Ok(self.push(Value::Dense(out), Op::ConvexCombine, inputs, needs))
    }

    /// Inverted dropout with a stored keep-mask, so backward differentiates
    /// exactly the sampled network. The mask depends only on `seed` and the
    /// operand's element count. Works on dense and sparse values alike;
    /// rate 0 is the identity.
    pub fn dropout(&mut self, x: VarId, rate: f64, seed: u64) -> Result<VarId, DiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(DiffError::DropoutRate(rate));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let scale = F::from_f64(1.0 / (1.0 - rate));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = match &self.nodes[x.0].value {
            Value::Dense(a) => a.len(),
            Value::Sparse(s) => s.values.len(),
        };
        let keep: Vec<bool> = (0..count).map(|_| rng.gen::<f64>() >= rate).collect();
        let out = match &self.nodes[x.0].value {
            Value::Dense(a) => {
                let mut it = keep.iter();
                Value::Dense(a.mapv(|v| if *it.next().unwrap() { v * scale } else { F::zero() }))
            }
            Value::Sparse(s) => {
                let values = s
                    .values
                    .iter()
                    .zip(&keep)
                    .map(|(&v, &k)| if k { v * scale } else { F::zero() })
                    .collect();
                Value::Sparse(SparseValues::new(Arc::clone(&s.pattern), values))
            }
        };
        let needs = self.any_grad(&[x]);
        Ok(self.push(
            out,
            Op::Dropout {
                keep: Arc::new(keep),
                scale,
            },
            vec![x],
            needs,
        ))
    }

    /// Masked multiclass cross-entropy: mean or sum over `targets` of
    /// `-ln softmax(logits[row])[class]`, computed via a stable
    /// log-sum-exp.
    pub fn masked_cross_entropy(
        &mut self,
        logits: VarId,
        targets: &[(usize, usize)],
        reduction: Reduction,
    ) -> Result<VarId, DiffError> {
        let lv = self.dense(logits, "masked_cross_entropy")?;
        if targets.is_empty() {
            return Err(DiffError::EmptyMask);
        }
        for &(r, c) in targets {
            if r >= lv.nrows() || c >= lv.ncols() {
                return Err(shape_err(
                    "masked_cross_entropy",
                    format!(
                        "target ({r}, {c}) out of bounds for {}x{} logits",
                        lv.nrows(),
                        lv.ncols()
                    ),
                ));
            }
        }
        let scale = match reduction {
            Reduction::Mean => F::from_f64(1.0 / targets.len() as f64),
            Reduction::Sum => F::one(),
        };
        let mut total = F::zero();
        for &(r, c) in targets {
            let row = lv.row(r);
            let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
            let lse = max
                + row
                    .iter()
                    .fold(F::zero(), |acc, &v| acc + (v - max).exp())
                    .ln();
            total = total + (lse - row[c]);
        }
        let needs = self.any_grad(&[logits]);
        Ok(self.push(
            Value::scalar(total * scale),
            Op::MaskedCrossEntropy {
                targets: Arc::new(targets.to_vec()),
                scale,
            },
            vec![logits],
            needs,
        ))
    }

    // ----- sparse ops -----

    /// Per-slot score `e_ij = left_i + right_j` on the mask: the split
    /// form of a dot product against a concatenated pair.
    pub fn edge_pair_sum(
        &mut self,
        left: VarId,
        right: VarId,
        pattern: Arc<CsrPattern>,
    ) -> Result<VarId, DiffError> {
        let lv = self.dense(left, "edge_pair_sum")?;
        let rv = self.dense(right, "edge_pair_sum")?;
        if lv.ncols() != 1 || rv.ncols() != 1 {
            return Err(shape_err(
                "edge_pair_sum",
                "left and right must be single-column".into(),
            ));
        }
        if lv.nrows() != pattern.nrows() || rv.nrows() != pattern.ncols() {
            return Err(shape_err(
                "edge_pair_sum",
                format!(
                    "pattern is {}x{} but sides have {} and {} rows",
                    pattern.nrows(),
                    pattern.ncols(),
                    lv.nrows(),
                    rv.nrows()
                ),
            ));
        }
        let mut values = Vec::with_capacity(pattern.nnz());
        for i in 0..pattern.nrows() {
            for &j in pattern.row(i) {
                values.push(lv[[i, 0]] + rv[[j, 0]]);
            }
        }
        let out = Value::Sparse(SparseValues::new(pattern, values));
        let needs = self.any_grad(&[left, right]);
        Ok(self.push(out, Op::EdgePairSum, vec![left, right], needs))
    }

    pub fn leaky_relu_sparse(&mut self, e: VarId, slope: F) -> Result<VarId, DiffError> {
        let ev = self.sparse(e, "leaky_relu_sparse")?;
        let values = ev
            .values
            .iter()
            .map(|&v| if v > F::zero() { v } else { slope * v })
            .collect();
        let out = Value::Sparse(SparseValues::new(Arc::clone(&ev.pattern), values));
        let needs = self.any_grad(&[e]);
        Ok(self.push(out, Op::LeakyReluSparse { slope }, vec![e], needs))
    }

    /// Softmax within each pattern row (stable, max-subtracted). Empty
    /// rows stay empty; mask diagonals guarantee the model never has any.
    pub fn row_softmax_sparse(&mut self, e: VarId) -> Result<VarId, DiffError> {
        let ev = self.sparse(e, "row_softmax_sparse")?;
        let mut values = ev.values.clone();
        for i in 0..ev.pattern.nrows() {
            let range = ev.pattern.row_range(i);
            if range.is_empty() {
                continue;
            }
            let row = &mut values[range];
            let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
            let mut total = F::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        let out = Value::Sparse(SparseValues::new(Arc::clone(&ev.pattern), values));
        let needs = self.any_grad(&[e]);
        Ok(self.push(out, Op::RowSoftmaxSparse, vec![e], needs))
    }

    pub fn sum_sparse(&mut self, e: VarId) -> Result<VarId, DiffError> {
        let ev = self.sparse(e, "sum_sparse")?;
        let total = ev.values.iter().fold(F::zero(), |acc, &v| acc + v);
        let needs = self.any_grad(&[e]);
        Ok(self.push(Value::scalar(total), Op::SumSparse, vec![e], needs))
    }

    /// Sparse-times-dense product `alpha · h`.
    pub fn spmm(&mut self, alpha: VarId, h: VarId) -> Result<VarId, DiffError> {
        let av = self.sparse(alpha, "spmm")?;
        let hv = self.dense(h, "spmm")?;
        if av.pattern.ncols() != hv.nrows() {
            return Err(shape_err(
                "spmm",
                format!(
                    "inner dimensions disagree: {}x{} times {}x{}",
                    av.pattern.nrows(),
                    av.pattern.ncols(),
                    hv.nrows(),
                    hv.ncols()
                ),
            ));
        }
        let mut out = Array2::zeros((av.pattern.nrows(), hv.ncols()));
        for (i, j, v) in av.iter() {
            out.row_mut(i).scaled_add(v, &hv.row(j));
        }
        let needs = self.any_grad(&[alpha, h]);
        Ok(self.push(Value::Dense(out), Op::Spmm, vec![alpha, h], needs))
    }

    // ----- backward -----

    /// Differentiate a 1x1 output with seed 1.
    pub fn backward(&mut self, output: VarId) -> Result<Gradients<F>, DiffError> {
        let (rows, cols) = self.nodes[output.0].value.shape();
        if !matches!(&self.nodes[output.0].value, Value::Dense(_)) || (rows, cols) != (1, 1) {
            return Err(DiffError::NonScalarOutput { rows, cols });
        }
        self.backward_with_seed(output, Value::scalar(F::one()))
    }

    /// Differentiate from an arbitrary output with an explicit seed
    /// gradient of the same shape and kind — the glue that lets a branch
    /// tape continue another tape's backward pass.
    pub fn backward_with_seed(
        &mut self,
        output: VarId,
        seed: Value<F>,
    ) -> Result<Gradients<F>, DiffError> {
        if self.backward_done {
            return Err(DiffError::DoubleBackward);
        }
        self.backward_done = true;
        let out_val = &self.nodes[output.0].value;
        let kind_matches = matches!(
            (out_val, &seed),
            (Value::Dense(_), Value::Dense(_)) | (Value::Sparse(_), Value::Sparse(_))
        );
        if !kind_matches || out_val.shape() != seed.shape() {
            return Err(shape_err(
                "backward_with_seed",
                format!(
                    "seed shape {:?} does not match output shape {:?}",
                    seed.shape(),
                    out_val.shape()
                ),
            ));
        }

        let mut grads: Vec<Option<Value<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[output.0].needs_grad {
            grads[output.0] = Some(seed);
        }
        let mut leaf_grads: Vec<Option<Value<F>>> = (0..self.nodes.len()).map(|_| None).collect();

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                leaf_grads[idx] = Some(g);
                continue;
            }
            self.dispatch_backward(idx, &g, &mut grads);
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn accumulate(&self, grads: &mut [Option<Value<F>>], target: VarId, delta: Value<F>) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn dispatch_backward(&self, idx: usize, g: &Value<F>, grads: &mut [Option<Value<F>>]) {
        let node = &self.nodes[idx];
        let ins = &node.inputs;
        match &node.op {
            Op::Leaf => unreachable!("leaves handled by the caller"),
            Op::Matmul => {
                let gd = g.as_dense().unwrap();
                let a = self.nodes[ins[0].0].value.as_dense().unwrap();
                let b = self.nodes[ins[1].0].value.as_dense().unwrap();
                self.accumulate(grads, ins[0], Value::Dense(gd.dot(&b.t())));
                self.accumulate(grads, ins[1], Value::Dense(a.t().dot(gd)));
            }
            Op::AddRowBias => {
                let gd = g.as_dense().unwrap();
                self.accumulate(grads, ins[0], Value::Dense(gd.clone()));
                let bias_grad = gd.sum_axis(Axis(0)).insert_axis(Axis(0));
                self.accumulate(grads, ins[1], Value::Dense(bias_grad));
            }
            Op::Elu => {
                let gd = g.as_dense().unwrap();
                let y = node.value.as_dense().unwrap();
                let x = self.nodes[ins[0].0].value.as_dense().unwrap();
                let mut dx = gd.clone();
                ndarray::Zip::from(&mut dx).and(x).and(y).for_each(|d, &xv, &yv| {
                    if xv <= F::zero() {
                        *d = *d * (yv + F::one()); // y + 1 = exp(x)
                    }
                });
                self.accumulate(grads, ins[0], Value::Dense(dx));
            }
            Op::Tanh => {
                let gd = g.as_dense().unwrap();
                let y = node.value.as_dense().unwrap();
                let mut dx = gd.clone();
                ndarray::Zip::from(&mut dx).and(y).for_each(|d, &yv| {
                    *d = *d * (F::one() - yv * yv);
                });
                self.accumulate(grads, ins[0], Value::Dense(dx));
            }
            Op::LeakyRelu { slope } => {
                let gd = g.as_dense().unwrap();
                let x = self.nodes[ins[0].0].value.as_dense().unwrap();
                let mut dx = gd.clone();
                ndarray::Zip::from(&mut dx).and(x).for_each(|d, &xv| {
                    if xv <= F::zero() {
                        *d = *d * *slope;
                    }
                });
                self.accumulate(grads, ins[0], Value::Dense(dx));
            }
            Op::MeanAll => {
                let g0 = g.as_dense().unwrap()[[0, 0]];
                let x = self.nodes[ins[0].0].value.as_dense().unwrap();
                let count = F::from_f64((x.nrows() * x.ncols()) as f64);
                let dx = Array2::from_elem(x.raw_dim(), g0 / count);
                self.accumulate(grads, ins[0], Value::Dense(dx));
            }
            Op::SumAll => {
                let g0 = g.as_dense().unwrap()[[0, 0]];
                let x = self.nodes[ins[0].0].value.as_dense().unwrap();
                let dx = Array2::from_elem(x.raw_dim(), g0);
                self.accumulate(grads, ins[0], Value::Dense(dx));
            }
            Op::MeanRows { rows } => {
                let g0 = g.as_dense().unwrap()[[0, 0]];
                let x = self.nodes[ins[0].0].value.as_dense().unwrap();
                let per = g0 / F::from_f64((rows.len() * x.ncols()) as f64);
                let mut dx = Array2::zeros(x.raw_dim());
                for &r in rows.iter() {
                    dx.row_mut(r).fill(per);
                }
                self.accumulate(grads, ins[0], Value::Dense(dx));
            }
            Op::SliceRows { start } => {
                let gd = g.as_dense().unwrap();
                let x = self.nodes[ins[0].0].value.as_dense().unwrap();
                let mut dx = Array2::zeros(x.raw_dim());
                dx.slice_mut(ndarray::s![*start..start + gd.nrows(), ..])
                    .assign(gd);
                self.accumulate(grads, ins[0], Value::Dense(dx));
            }
            Op::StackScalars => {
                let gd = g.as_dense().unwrap();
                for (i, &inp) in ins.iter().enumerate() {
                    self.accumulate(grads, inp, Value::scalar(gd[[i, 0]]));
                }
            }
            Op::SoftmaxVec => {
                let gd = g.as_dense().unwrap();
                let y = node.value.as_dense().unwrap();
                let dot = y
                    .iter()
                    .zip(gd.iter())
                    .fold(F::zero(), |acc, (&yv, &gv)| acc + yv * gv);
                let mut dx = y.clone();
                ndarray::Zip::from(&mut dx).and(gd).for_each(|d, &gv| {
                    *d = *d * (gv - dot);
                });
                self.accumulate(grads, ins[0], Value::Dense(dx));
            }
            Op::ConvexCombine => {
                let gd = g.as_dense().unwrap();
                let w = self.nodes[ins[0].0].value.as_dense().unwrap();
                let mut dw = Array2::zeros((ins.len() - 1, 1));
                for (i, &item) in ins[1..].iter().enumerate() {
                    let iv = self.nodes[item.0].value.as_dense().unwrap();
                    dw[[i, 0]] = iv
                        .iter()
                        .zip(gd.iter())
                        .fold(F::zero(), |acc, (&a, &b)| acc + a * b);
                    self.accumulate(grads, item, Value::Dense(gd.mapv(|v| v * w[[i, 0]])));
                }
                self.accumulate(grads, ins[0], Value::Dense(dw));
            }
            Op::Dropout { keep, scale } => {
                let dx = match g {
                    Value::Dense(gd) => {
                        let mut it = keep.iter();
                        Value::Dense(gd.mapv(|v| {
                            if *it.next().unwrap() {
                                v * *scale
                            } else {
                                F::zero()
                            }
                        }))
                    }
                    Value::Sparse(gs) => {
                        let values = gs
                            .values
                            .iter()
                            .zip(keep.iter())
                            .map(|(&v, &k)| if k { v * *scale } else { F::zero() })
                            .collect();
                        Value::Sparse(SparseValues::new(Arc::clone(&gs.pattern), values))
                    }
                };
                self.accumulate(grads, ins[0], dx);
            }
            Op::MaskedCrossEntropy { targets, scale } => {
                let g0 = g.as_dense().unwrap()[[0, 0]];
                let logits = self.nodes[ins[0].0].value.as_dense().unwrap();
                let mut dx = Array2::zeros(logits.raw_dim());
                for &(r, c) in targets.iter() {
                    let row = logits.row(r);
                    let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
                    let mut exps: Vec<F> = row.iter().map(|&v| (v - max).exp()).collect();
                    let total = exps.iter().fold(F::zero(), |acc, &v| acc + v);
                    for e in &mut exps {
                        *e = *e / total;
                    }
                    let mut drow = dx.row_mut(r);
                    for (j, &p) in exps.iter().enumerate() {
                        let target = if j == c { F::one() } else { F::zero() };
                        drow[j] = drow[j] + (p - target) * *scale * g0;
                    }
                }
                self.accumulate(grads, ins[0], Value::Dense(dx));
            }
            Op::EdgePairSum => {
                let gs = g.as_sparse().unwrap();
                let n_left = self.nodes[ins[0].0].value.shape().0;
                let n_right = self.nodes[ins[1].0].value.shape().0;
                let mut dl = Array2::zeros((n_left, 1));
                let mut dr = Array2::zeros((n_right, 1));
                for (i, j, v) in gs.iter() {
                    dl[[i, 0]] = dl[[i, 0]] + v;
                    dr[[j, 0]] = dr[[j, 0]] + v;
                }
                self.accumulate(grads, ins[0], Value::Dense(dl));
                self.accumulate(grads, ins[1], Value::Dense(dr));
            }
            Op::LeakyReluSparse { slope } => {
                let gs = g.as_sparse().unwrap();
                let x = self.nodes[ins[0].0].value.as_sparse().unwrap();
                let values = gs
                    .values
                    .iter()
                    .zip(&x.values)
                    .map(|(&gv, &xv)| if xv > F::zero() { gv } else { gv * *slope })
                    .collect();
                self.accumulate(
                    grads,
                    ins[0],
                    Value::Sparse(SparseValues::new(Arc::clone(&gs.pattern), values)),
                );
            }
            Op::RowSoftmaxSparse => {
                let gs = g.as_sparse().unwrap();
                let y = node.value.as_sparse().unwrap();
                let mut values = vec![F::zero(); y.values.len()];
                for i in 0..y.pattern.nrows() {
                    let range = y.pattern.row_range(i);
                    let dot = range.clone().fold(F::zero(), |acc, s| {
                        acc + y.values[s] * gs.values[s]
                    });
                    for s in range {
                        values[s] = y.values[s] * (gs.values[s] - dot);
                    }
                }
                self.accumulate(
                    grads,
                    ins[0],
                    Value::Sparse(SparseValues::new(Arc::clone(&y.pattern), values)),
                );
            }
            Op::SumSparse => {
                let g0 = g.as_dense().unwrap()[[0, 0]];
                let x = self.nodes[ins[0].0].value.as_sparse().unwrap();
                let values = vec![g0; x.values.len()];
                self.accumulate(
                    grads,
                    ins[0],
                    Value::Sparse(SparseValues::new(Arc::clone(&x.pattern), values)),
                );
            }
            Op::Spmm => {
                let gd = g.as_dense().unwrap();
                let alpha = self.nodes[ins[0].0].value.as_sparse().unwrap();
                let h = self.nodes[ins[1].0].value.as_dense().unwrap();
                if self.nodes[ins[0].0].needs_grad || self.any_grad(&[ins[0]]) {
                    let mut values = Vec::with_capacity(alpha.values.len());
                    for (i, j, _) in alpha.iter() {
                        values.push(gd.row(i).dot(&h.row(j)));
                    }
                    self.accumulate(
                        grads,
                        ins[0],
                        Value::Sparse(SparseValues::new(Arc::clone(&alpha.pattern), values)),
                    );
                }
                if self.nodes[ins[1].0].needs_grad {
                    let mut dh = Array2::zeros(h.raw_dim());
                    for (i, j, v) in alpha.iter() {
                        dh.row_mut(j).scaled_add(v, &gd.row(i));
                    }
                    self.accumulate(grads, ins[1], Value::Dense(dh));
                }
            }
        }
    }
}

// ----- gradient checking -----

/// Per-parameter outcome of a [`grad_check`] run.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
}

/// Diagnostic report comparing analytic and central-difference gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub pass: bool,
}

/// Elements where both gradients are below this magnitude count as equal;
/// central differences cannot resolve anything smaller reliably.
const ZERO_FLOOR: f64 = 1e-6;

/// Compare the tape's gradients of `build`'s scalar output against central
/// finite differences, perturbing every element of every named parameter
/// by ±eps. `build` must be deterministic (seeded dropout is fine).
pub fn grad_check<F: Scalar>(
    build: &dyn Fn(&mut Tape<F>, &[VarId]) -> Result<VarId, DiffError>,
    params: &[(&str, Value<F>)],
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport, DiffError> {
    let run = |values: &[Value<F>]| -> Result<f64, DiffError> {
        let mut tape = Tape::new();
        let vars: Vec<VarId> = values.iter().map(|v| tape.param(v.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let val = tape.value(out);
        let (r, c) = val.shape();
        match val.as_dense() {
            Some(d) if (r, c) == (1, 1) => Ok(d[[0, 0]].as_f64()),
            _ => Err(DiffError::NonScalarOutput { rows: r, cols: c }),
        }
    };

    // analytic gradients
    let mut tape = Tape::new();
    let vars: Vec<VarId> = params.iter().map(|(_, v)| tape.param(v.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut values: Vec<Value<F>> = params.iter().map(|(_, v)| v.clone()).collect();
    let mut per_param = Vec::with_capacity(params.len());
    let mut overall: f64 = 0.0;

    for (p, (name, _)) in params.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(vars[p]) {
            Some(Value::Dense(a)) => a.iter().map(|v| v.as_f64()).collect(),
            Some(Value::Sparse(s)) => s.values().iter().map(|v| v.as_f64()).collect(),
            None => vec![
                0.0;
                match &values[p] {
                    Value::Dense(a) => a.len(),
                    Value::Sparse(s) => s.values().len(),
                }
            ],
        };
        let count = analytic.len();
        let mut max_rel: f64 = 0.0;
        for e in 0..count {
            let orig = element(&values[p], e);
            set_element(&mut values[p], e, orig + eps);
            let up = run(&values)?;
            set_element(&mut values[p], e, orig - eps);
            let down = run(&values)?;
            set_element(&mut values[p], e, orig);
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[e];
            let denom = a.abs().max(numeric.abs());
            if denom >= ZERO_FLOOR {
                max_rel = max_rel.max((a - numeric).abs() / denom);
            }
        }
        overall = overall.max(max_rel);
        per_param.push(ParamCheck {
            name: name.to_string(),
            max_rel_error: max_rel,
        });
    }

    Ok(GradCheckReport {
        per_param,
        max_rel_error: overall,
        pass: overall < tol,
    })
}

fn element<F: Scalar>(v: &Value<F>, e: usize) -> f64 {
    match v {
        Value::Dense(a) => a.as_slice().expect("standard layout")[e].as_f64(),
        Value::Sparse(s) => s.values()[e].as_f64(),
    }
}

fn set_element<F: Scalar>(v: &mut Value<F>, e: usize, x: f64) {
    match v {
        Value::Dense(a) => a.as_slice_mut().expect("standard layout")[e] = F::from_f64(x),
        Value::Sparse(s) => s.values[e] = F::from_f64(x),
    }
}
