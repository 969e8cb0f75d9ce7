//! Training: split management, the masked cross-entropy objective, Adam,
//! and early stopping.
//!
//! Labeled target-type vertices are split per class with a seeded shuffle:
//! the training fraction is carved off first, then a validation slice is
//! held out of the training portion for early stopping. Each epoch runs a
//! full-batch step — per-relation branches forward, fusion head backward,
//! branch parameters pulled back through rebuilt branch tapes — followed by
//! a dropout-free evaluation pass that records train/val losses. Training
//! halts when the monitored validation signal has not strictly improved
//! for `patience` epochs (or at the epoch cap), the best-epoch parameters
//! are restored, and test metrics are computed once.

use crate::autodiff::{DiffError, Reduction, Scalar, Tape, Value, VarId};
use crate::graph::{FeatureMatrix, HeteroGraph, LabelTable};
use crate::metrics::{f1_scores, MetricsError};
use crate::model::{
    build_fusion_head, build_phi_branch, derive_seed, forward, init_params, phi_dropout_seeds,
    Mode, ModelConfig, ModelError, ModelParams,
};
use crate::relation::RelationSet;
use crate::sparse::CsrPattern;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

pub const DEFAULT_LR: f64 = 0.005;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;
pub const DEFAULT_MAX_EPOCHS: usize = 200;
pub const DEFAULT_PATIENCE: usize = 100;
pub const DEFAULT_VAL_FRACTION: f64 = 0.1;

#[derive(Error, Debug)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("split invalid: {0}")]
    Split(String),
    #[error("training setup invalid: {0}")]
    Config(String),
    #[error("{0} became non-finite")]
    NonFinite(String),
}

/// How labeled vertices are partitioned.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Fraction of labeled vertices used for training (validation is
    /// carved out of this portion).
    pub train_fraction: f64,
    /// Fraction of the training portion held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        Self {
            train_fraction,
            val_fraction: DEFAULT_VAL_FRACTION,
            seed,
        }
    }
}

/// Disjoint index sets over labeled target-type vertices, each sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Distribute `total` picks over classes proportionally to `caps`,
/// assigning leftover picks round-robin in class order.
fn allocate(total: usize, caps: &[usize]) -> Vec<usize> {
    let pool: usize = caps.iter().sum();
    let mut take: Vec<usize> = caps
        .iter()
        .map(|&c| total * c / pool.max(1))
        .collect();
    let mut assigned: usize = take.iter().sum();
    let mut class = 0;
    while assigned < total {
        if take[class] < caps[class] {
            take[class] += 1;
            assigned += 1;
        }
        class = (class + 1) % caps.len();
    }
    take
}

/// Stratified, seeded train/val/test split of the labeled vertices.
pub fn split_labels(labels: &LabelTable, spec: &SplitSpec) -> Result<Splits, TrainError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(TrainError::Split(format!(
            "training fraction must be in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    if !(spec.val_fraction > 0.0 && spec.val_fraction < 1.0) {
        return Err(TrainError::Split(format!(
            "validation fraction must be in (0, 1), got {}",
            spec.val_fraction
        )));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); labels.num_classes()];
    for (v, c) in labels.iter() {
        per_class[c].push(v);
    }
    for (c, pool) in per_class.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[3, c as u64]));
        pool.shuffle(&mut rng);
    }
    let total = labels.len();
    let train_total = (spec.train_fraction * total as f64).round() as usize;
    if train_total == 0 || train_total >= total {
        return Err(TrainError::Split(format!(
            "training fraction {} leaves an empty train or test set over {total} labeled vertices",
            spec.train_fraction
        )));
    }
    let caps: Vec<usize> = per_class.iter().map(Vec::len).collect();
    let train_take = allocate(train_total, &caps);
    let val_total = ((spec.val_fraction * train_total as f64).round() as usize).max(1);
    if val_total >= train_total {
        return Err(TrainError::Split(format!(
            "training portion of {train_total} cannot hold out {val_total} validation vertices"
        )));
    }
    let val_take = allocate(val_total, &train_take);
    let mut splits = Splits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (c, pool) in per_class.iter().enumerate() {
        splits.val.extend(&pool[..val_take[c]]);
        splits.train.extend(&pool[val_take[c]..train_take[c]]);
        splits.test.extend(&pool[train_take[c]..]);
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();
    if splits.test.is_empty() {
        return Err(TrainError::Split("test set is empty".into()));
    }
    Ok(splits)
}

/// How early stopping judges an epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Monitor {
    /// Minimize validation loss (default).
    Loss,
    /// Maximize validation Micro-F1.
    MicroF1,
}

/// Optimizer and loop settings.
#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss_reduction: Reduction,
    pub monitor: Monitor,
    /// Run per-relation branches on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            weight_decay: 0.0,
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            loss_reduction: Reduction::Mean,
            monitor: Monitor::Loss,
            parallel: false,
        }
    }
}

impl TrainOptions {
    fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(TrainError::Config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(TrainError::Config(format!(
                "weight decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(TrainError::Config(
                "epoch cap and patience must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Bias-corrected Adam with optional L2 weight decay folded into the
/// gradient. Moment buffers align with [`ModelParams::slots`] order.
pub struct AdamState<F: Scalar> {
    step: u64,
    lr: f64,
    weight_decay: f64,
    first: Vec<Array2<F>>,
    second: Vec<Array2<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &ModelParams<F>, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Array2<F>> = params
            .slots()
            .iter()
            .map(|(_, p)| Array2::zeros(p.raw_dim()))
            .collect();
        Self {
            step: 0,
            lr,
            weight_decay,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameters; `grads` must follow slot order.
    pub fn step(
        &mut self,
        params: &mut ModelParams<F>,
        grads: &[Array2<F>],
    ) -> Result<(), TrainError> {
        let slots = params.slots_mut();
        if slots.len() != grads.len() {
            return Err(TrainError::Config(format!(
                "{} gradients for {} parameters",
                grads.len(),
                slots.len()
            )));
        }
        self.step += 1;
        let b1 = F::from_f64(ADAM_BETA1);
        let b2 = F::from_f64(ADAM_BETA2);
        let one = F::one();
        let correction1 = F::from_f64(1.0 - ADAM_BETA1.powi(self.step as i32));
        let correction2 = F::from_f64(1.0 - ADAM_BETA2.powi(self.step as i32));
        let lr = F::from_f64(self.lr);
        let eps = F::from_f64(ADAM_EPSILON);
        let decay = F::from_f64(self.weight_decay);
        for (slot, ((name, param), grad)) in slots.into_iter().zip(grads).enumerate() {
            if param.raw_dim() != grad.raw_dim() {
                return Err(TrainError::Config(format!(
                    "gradient shape mismatch for {name}"
                )));
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFinite(format!("gradient for {name}")));
            }
            let moments = self.first[slot].iter_mut().zip(self.second[slot].iter_mut());
            for ((p, &g), (m, v)) in param.iter_mut().zip(grad.iter()).zip(moments) {
                let g = g + decay * *p;
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// (vertex, class) pairs for the given vertices, which must be labeled.
fn targets_for(labels: &LabelTable, vertices: &[usize]) -> Result<Vec<(usize, usize)>, TrainError> {
    vertices
        .iter()
        .map(|&v| {
            labels
                .get(v)
                .map(|c| (v, c))
                .ok_or_else(|| TrainError::Split(format!("split vertex {v} is unlabeled")))
        })
        .collect()
}

/// Masked cross-entropy of fixed logits (no gradients).
pub fn masked_loss<F: Scalar>(
    logits: &Array2<F>,
    targets: &[(usize, usize)],
    reduction: Reduction,
) -> Result<f64, TrainError> {
    let mut tape: Tape<F> = Tape::new();
    let l = tape.constant_dense(logits.clone());
    let loss = tape.masked_cross_entropy(l, targets, reduction)?;
    Ok(tape.value(loss).as_dense().expect("loss is dense")[[0, 0]].as_f64())
}

/// Class predictions at the given vertices: per-row argmax, lowest class
/// id on ties.
pub fn predictions<F: Scalar>(logits: &Array2<F>, vertices: &[usize]) -> Vec<usize> {
    vertices
        .iter()
        .map(|&v| {
            let row = logits.row(v);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn run_per_phi<T, E, G>(count: usize, parallel: bool, job: G) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    G: Fn(usize) -> Result<T, E> + Sync,
{
    if parallel {
        (0..count).into_par_iter().map(&job).collect()
    } else {
        (0..count).map(job).collect()
    }
}

struct StepOutput<F: Scalar> {
    loss: f64,
    /// Gradients in slot order.
    grads: Vec<Array2<F>>,
}

/// One full-batch gradient evaluation. Branch tapes run twice — once
/// forward for the embeddings, once rebuilt for the backward sweep — so
/// only one branch tape is alive per worker; the fusion tape in between
/// yields the loss, head gradients, and the per-branch seed gradients.
#[allow(clippy::too_many_arguments)]
fn training_step<F: Scalar>(
    features: &Array2<F>,
    masks: &[Arc<CsrPattern>],
    params: &ModelParams<F>,
    config: &ModelConfig,
    options: &TrainOptions,
    restrict_rows: Option<&Arc<Vec<usize>>>,
    targets: &[(usize, usize)],
    dropout_seed: u64,
) -> Result<StepOutput<F>, TrainError> {
    let mode = Mode::Train { dropout_seed };
    let embeddings: Vec<Array2<F>> = run_per_phi(masks.len(), options.parallel, |phi| {
        let mut tape: Tape<F> = Tape::new();
        let x = tape.constant_dense(features.clone());
        let branch = build_phi_branch(
            &mut tape,
            &masks[phi],
            x,
            &params.node[phi],
            config,
            phi_dropout_seeds(mode, phi),
        )?;
        Ok::<_, TrainError>(
            tape.value(branch.z)
                .as_dense()
                .expect("embedding is dense")
                .clone(),
        )
    })?;

    let mut tape: Tape<F> = Tape::new();
    let z_vars: Vec<VarId> = embeddings
        .iter()
        .map(|z| tape.param_dense(z.clone()))
        .collect();
    let head = build_fusion_head(
        &mut tape,
        &z_vars,
        &params.fusion,
        params.classifier.as_ref(),
        restrict_rows,
    )?;
    let loss_var = tape.masked_cross_entropy(head.logits, targets, options.loss_reduction)?;
    let loss = tape.value(loss_var).as_dense().expect("loss is dense")[[0, 0]].as_f64();
    let mut grads = tape.backward(loss_var)?;
    let mut dense_grad = |v: VarId, shape: &Array2<F>| -> Array2<F> {
        match grads.take(v) {
            Some(Value::Dense(g)) => g,
            _ => Array2::zeros(shape.raw_dim()),
        }
    };
    let fusion_grads = [
        dense_grad(head.weight, &params.fusion.weight),
        dense_grad(head.bias, &params.fusion.bias),
        dense_grad(head.query, &params.fusion.query),
    ];
    let classifier_grads = head.classifier.map(|(w, b)| {
        let c = params.classifier.as_ref().expect("classifier params");
        [dense_grad(w, &c.weight), dense_grad(b, &c.bias)]
    });
    let seeds: Vec<Option<Value<F>>> = z_vars.iter().map(|&z| grads.take(z)).collect();

    let node_grads: Vec<(Array2<F>, Array2<F>)> =
        run_per_phi(masks.len(), options.parallel, |phi| {
            let node = &params.node[phi];
            let zero = || {
                (
                    Array2::zeros(node.weight.raw_dim()),
                    Array2::zeros(node.attention.raw_dim()),
                )
            };
            let Some(seed) = seeds[phi].clone() else {
                return Ok::<_, TrainError>(zero());
            };
            let mut tape: Tape<F> = Tape::new();
            let x = tape.constant_dense(features.clone());
            let branch = build_phi_branch(
                &mut tape,
                &masks[phi],
                x,
                node,
                config,
                phi_dropout_seeds(mode, phi),
            )?;
            let mut grads = tape.backward_with_seed(branch.z, seed)?;
            let weight = match grads.take(branch.weight) {
                Some(Value::Dense(g)) => g,
                _ => Array2::zeros(node.weight.raw_dim()),
            };
            let attention = match grads.take(branch.attention) {
                Some(Value::Dense(g)) => g,
                _ => Array2::zeros(node.attention.raw_dim()),
            };
            Ok((weight, attention))
        })?;

    let mut ordered = Vec::with_capacity(2 * masks.len() + 5);
    for (w, a) in node_grads {
        ordered.push(w);
        ordered.push(a);
    }
    ordered.extend(fusion_grads);
    if let Some(cg) = classifier_grads {
        ordered.extend(cg);
    }
    Ok(StepOutput {
        loss,
        grads: ordered,
    })
}

/// One epoch's recorded signals, all from the dropout-free evaluation pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_micro_f1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Everything a training run reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub stopping_epoch: usize,
    pub best_epoch: usize,
    pub test_macro_f1: f64,
    pub test_micro_f1: f64,
    /// Relation weights β of the restored best parameters.
    pub beta: Vec<f64>,
    pub split_sizes: SplitSizes,
    /// Filled by callers that persist the best parameters.
    pub checkpoint: Option<String>,
}

/// A finished run: the report plus the restored best parameters.
pub struct TrainOutcome<F: Scalar> {
    pub report: TrainReport,
    pub params: ModelParams<F>,
    pub splits: Splits,
}

/// Split the labels, then train.
#[allow(clippy::too_many_arguments)]
pub fn train<F: Scalar>(
    graph: &HeteroGraph,
    features: &FeatureMatrix,
    labels: &LabelTable,
    relations: &RelationSet,
    config: &ModelConfig,
    options: &TrainOptions,
    split: &SplitSpec,
) -> Result<TrainOutcome<F>, TrainError> {
    let splits = split_labels(labels, split)?;
    train_with_splits(graph, features, labels, relations, config, options, &splits)
}

/// Train against a fixed split. Test indices influence nothing but the
/// final metrics.
#[allow(clippy::too_many_arguments)]
pub fn train_with_splits<F: Scalar>(
    graph: &HeteroGraph,
    features: &FeatureMatrix,
    labels: &LabelTable,
    relations: &RelationSet,
    config: &ModelConfig,
    options: &TrainOptions,
    splits: &Splits,
) -> Result<TrainOutcome<F>, TrainError> {
    options.validate()?;
    let n = graph.num_vertices();
    if features.data().nrows() != n {
        return Err(TrainError::Config(format!(
            "feature matrix has {} rows for {n} vertices",
            features.data().nrows()
        )));
    }
    if config.d_in != features.data().ncols() {
        return Err(TrainError::Config(format!(
            "model d_in {} but features have width {}",
            config.d_in,
            features.data().ncols()
        )));
    }
    if config.num_classes != labels.num_classes() {
        return Err(TrainError::Config(format!(
            "model has {} classes but labels have {}",
            config.num_classes,
            labels.num_classes()
        )));
    }
    if relations.num_vertices() != n {
        return Err(TrainError::Config(format!(
            "relation set spans {} vertices but the graph has {n}",
            relations.num_vertices()
        )));
    }
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(TrainError::Split(
            "train and validation sets must be non-empty".into(),
        ));
    }
    let train_targets = targets_for(labels, &splits.train)?;
    let val_targets = targets_for(labels, &splits.val)?;
    let test_targets = targets_for(labels, &splits.test)?;

    let x: Array2<F> = features.data().mapv(F::from_f64);
    let masks = relations.masks();
    let restrict = config
        .restrict_fusion_mean
        .then(|| Arc::new(graph.vertices_of_type(labels.target_type())));
    let mut params: ModelParams<F> = init_params(config, masks.len())?;
    let mut adam = AdamState::new(&params, options.lr, options.weight_decay);

    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(f64, usize, ModelParams<F>)> = None;
    let mut epochs_since_best = 0;
    let mut stopping_epoch = options.max_epochs;
    for epoch in 1..=options.max_epochs {
        let step = training_step(
            &x,
            &masks,
            &params,
            config,
            options,
            restrict.as_ref(),
            &train_targets,
            derive_seed(config.seed, &[4, epoch as u64]),
        )?;
        if !step.loss.is_finite() {
            return Err(TrainError::NonFinite("training loss".into()));
        }
        adam.step(&mut params, &step.grads)?;
        params.validate_finite()?;

        let out = forward(&x, &masks, &params, config, restrict.as_ref(), Mode::Eval)?;
        let train_loss = masked_loss(&out.logits, &train_targets, options.loss_reduction)?;
        let val_loss = masked_loss(&out.logits, &val_targets, options.loss_reduction)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(TrainError::NonFinite("evaluation loss".into()));
        }
        let val_pred = predictions(&out.logits, &splits.val);
        let val_truth: Vec<usize> = val_targets.iter().map(|&(_, c)| c).collect();
        let val_micro_f1 = f1_scores(&val_truth, &val_pred, config.num_classes)?.micro_f1;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_micro_f1,
        });

        // Uniform "smaller is better" scale for both monitors.
        let monitored = match options.monitor {
            Monitor::Loss => val_loss,
            Monitor::MicroF1 => -val_micro_f1,
        };
        if best.as_ref().map_or(true, |(b, _, _)| monitored < *b) {
            best = Some((monitored, epoch, params.clone()));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= options.patience {
                stopping_epoch = epoch;
                break;
            }
        }
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");

    let out = forward(
        &x,
        &masks,
        &best_params,
        config,
        restrict.as_ref(),
        Mode::Eval,
    )?;
    let test_pred = predictions(&out.logits, &splits.test);
    let test_truth: Vec<usize> = test_targets.iter().map(|&(_, c)| c).collect();
    let scores = f1_scores(&test_truth, &test_pred, config.num_classes)?;

    Ok(TrainOutcome {
        report: TrainReport {
            epochs,
            stopping_epoch,
            best_epoch,
            test_macro_f1: scores.macro_f1,
            test_micro_f1: scores.micro_f1,
            beta: out.beta.iter().map(|b| b.as_f64()).collect(),
            split_sizes: SplitSizes {
                train: splits.train.len(),
                val: splits.val.len(),
                test: splits.test.len(),
            },
            checkpoint: None,
        },
        params: best_params,
        splits: splits.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relation::{build_relation_set, ComposeOptions};
    use crate::synth::{generate, learnability_fixture, SynthOutput};
    use approx::assert_relative_eq;
    use ndarray::array;

    fn tiny_dataset(seed: u64) -> (SynthOutput, RelationSet) {
        let mut spec = learnability_fixture(seed);
        spec.vertex_types = vec![("author".into(), 32), ("paper".into(), 32)];
        let out = generate(&spec).unwrap();
        let relations = build_relation_set(
            &out.graph,
            &ComposeOptions {
                max_order: 2,
                ..ComposeOptions::default()
            },
        )
        .unwrap();
        (out, relations)
    }

    fn tiny_config(out: &SynthOutput, seed: u64) -> ModelConfig {
        let mut config = ModelConfig::with_dims(
            out.features.data().ncols(),
            out.labels.num_classes(),
        );
        config.d_h = 8;
        config.d_q = 8;
        config.max_order = 2;
        config.dropout_rate = 0.3;
        config.seed = seed;
        config
    }

    #[test]
    fn split_is_stratified_disjoint_and_deterministic() {
        let (out, _) = tiny_dataset(1);
        // 32 authors: 30 labeled regulars (hubs are scaffolding), 15/15
        let spec = SplitSpec::new(0.4, 9);
        let splits = split_labels(&out.labels, &spec).unwrap();
        assert_eq!(splits.train.len() + splits.val.len(), 12); // 0.4 * 30
        assert_eq!(splits.val.len(), 1);
        assert_eq!(splits.test.len(), 18);

        let mut all: Vec<usize> = splits
            .train
            .iter()
            .chain(&splits.val)
            .chain(&splits.test)
            .copied()
            .collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 30);
        assert_eq!(all, out.labels.vertices());

        // stratification: each class contributes 6 of its 15 to train+val
        for class in 0..2 {
            let in_portion = splits
                .train
                .iter()
                .chain(&splits.val)
                .filter(|&&v| out.labels.get(v) == Some(class))
                .count();
            assert_eq!(in_portion, 6);
        }

        assert_eq!(splits, split_labels(&out.labels, &spec).unwrap());
        let other = split_labels(&out.labels, &SplitSpec::new(0.4, 10)).unwrap();
        assert_ne!(splits, other);
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let (out, _) = tiny_dataset(2);
        for bad in [0.0, 1.0, -0.2, 1.5] {
            assert!(matches!(
                split_labels(&out.labels, &SplitSpec::new(bad, 1)),
                Err(TrainError::Split(_))
            ));
        }
        // a training portion of 1 cannot hold out validation
        let spec = SplitSpec::new(0.034, 1); // round(0.034 * 30) = 1
        assert!(matches!(
            split_labels(&out.labels, &spec),
            Err(TrainError::Split(_))
        ));
    }

    #[test]
    fn adam_zero_gradients_keep_parameters() {
        let (out, relations) = tiny_dataset(3);
        let config = tiny_config(&out, 0);
        let params: ModelParams<f64> = init_params(&config, relations.len()).unwrap();
        let mut updated = params.clone();
        let zeros: Vec<Array2<f64>> = params
            .slots()
            .iter()
            .map(|(_, p)| Array2::zeros(p.raw_dim()))
            .collect();
        let mut adam = AdamState::new(&params, 0.01, 0.0);
        adam.step(&mut updated, &zeros).unwrap();
        adam.step(&mut updated, &zeros).unwrap();
        assert_eq!(updated, params);
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn adam_first_step_moves_by_signed_lr() {
        // with bias correction, the first update is lr * g / (|g| + eps')
        let config = ModelConfig {
            d_in: 2,
            d_h: 2,
            d_q: 2,
            num_classes: 2,
            max_order: 1,
            leaky_slope: 0.2,
            dropout_rate: 0.0,
            seed: 0,
            use_classifier: true,
            restrict_fusion_mean: false,
        };
        let mut params: ModelParams<f64> = init_params(&config, 1).unwrap();
        let before = params.clone();
        let grads: Vec<Array2<f64>> = params
            .slots()
            .iter()
            .enumerate()
            .map(|(k, (_, p))| {
                Array2::from_shape_fn(p.raw_dim(), |(i, j)| {
                    if (i + j + k) % 2 == 0 { 0.3 } else { -0.7 }
                })
            })
            .collect();
        let mut adam = AdamState::new(&params, 0.005, 0.0);
        adam.step(&mut params, &grads).unwrap();
        for (slot, ((_, after), (_, before))) in params
            .slots()
            .iter()
            .zip(before.slots().iter())
            .enumerate()
        {
            for ((a, b), g) in after.iter().zip(before.iter()).zip(grads[slot].iter()) {
                let delta = a - b;
                assert_relative_eq!(delta, -0.005 * g.signum(), epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn adam_identical_parameters_stay_identical() {
        let config = ModelConfig {
            d_in: 3,
            d_h: 2,
            d_q: 2,
            num_classes: 2,
            max_order: 1,
            leaky_slope: 0.2,
            dropout_rate: 0.0,
            seed: 5,
            use_classifier: true,
            restrict_fusion_mean: false,
        };
        let mut params: ModelParams<f64> = init_params(&config, 2).unwrap();
        params.node[1] = params.node[0].clone();
        let grads: Vec<Array2<f64>> = params
            .slots()
            .iter()
            .map(|(_, p)| Array2::from_elem(p.raw_dim(), 0.3))
            .collect();
        let mut adam = AdamState::new(&params, 0.01, 0.5);
        for _ in 0..3 {
            adam.step(&mut params, &grads).unwrap();
        }
        assert_eq!(params.node[0], params.node[1]);
        assert_ne!(params.node[0].weight[[0, 0]], 0.3); // parameters moved
    }

    #[test]
    fn adam_rejects_non_finite_gradients_by_name() {
        let (out, relations) = tiny_dataset(4);
        let config = tiny_config(&out, 0);
        let mut params: ModelParams<f64> = init_params(&config, relations.len()).unwrap();
        let mut grads: Vec<Array2<f64>> = params
            .slots()
            .iter()
            .map(|(_, p)| Array2::zeros(p.raw_dim()))
            .collect();
        grads[0][[0, 0]] = f64::NAN;
        let mut adam = AdamState::new(&params, 0.01, 0.0);
        let err = adam.step(&mut params, &grads).unwrap_err();
        assert!(
            err.to_string().contains("node[0].weight"),
            "error should name the parameter: {err}"
        );
    }

    #[test]
    fn masked_loss_matches_hand_values() {
        // uniform logits over L classes -> ln L per vertex
        let logits = Array2::<f64>::zeros((4, 3));
        let targets = vec![(0, 0), (2, 1), (3, 2)];
        let mean = masked_loss(&logits, &targets, Reduction::Mean).unwrap();
        assert_relative_eq!(mean, 3.0f64.ln(), max_relative = 1e-12);
        let sum = masked_loss(&logits, &targets, Reduction::Sum).unwrap();
        assert_relative_eq!(sum, 3.0 * 3.0f64.ln(), max_relative = 1e-12);

        // near-certain predictions -> near-zero loss
        let mut confident = Array2::<f64>::zeros((2, 2));
        confident[[0, 0]] = 40.0;
        confident[[1, 1]] = 40.0;
        let loss = masked_loss(&confident, &[(0, 0), (1, 1)], Reduction::Mean).unwrap();
        assert!(loss < 1e-12, "{loss}");

        // 3-vertex hand fixture
        let logits = array![[2.0, 0.0], [0.0, 1.0], [1.0, 3.0]];
        let targets = vec![(0, 0), (1, 1), (2, 1)];
        let want = ((1.0 + (-2.0f64).exp()).ln()
            + (1.0 + (-1.0f64).exp()).ln()
            + (1.0 + (-2.0f64).exp()).ln())
            / 3.0;
        let got = masked_loss(&logits, &targets, Reduction::Mean).unwrap();
        assert_relative_eq!(got, want, max_relative = 1e-12);
    }

    #[test]
    fn zero_lr_freezes_parameters_and_stops_at_patience() {
        let (out, relations) = tiny_dataset(5);
        let config = tiny_config(&out, 11);
        let options = TrainOptions {
            lr: 0.0,
            ..TrainOptions::default()
        };
        let split = SplitSpec::new(0.4, 11);
        let outcome: TrainOutcome<f64> = train(
            &out.graph,
            &out.features,
            &out.labels,
            &relations,
            &config,
            &options,
            &split,
        )
        .unwrap();
        let report = &outcome.report;
        assert_eq!(report.stopping_epoch, 101);
        assert_eq!(report.best_epoch, 1);
        assert_eq!(report.epochs.len(), 101);
        let first = &report.epochs[0];
        for rec in &report.epochs {
            assert_eq!(rec.train_loss.to_bits(), first.train_loss.to_bits());
            assert_eq!(rec.val_loss.to_bits(), first.val_loss.to_bits());
        }
        // frozen parameters equal a fresh initialization
        let fresh: ModelParams<f64> = init_params(&config, relations.len()).unwrap();
        assert_eq!(outcome.params, fresh);
    }

    #[test]
    fn separable_fixture_reaches_high_train_accuracy() {
        let (out, relations) = tiny_dataset(6);
        let config = tiny_config(&out, 21);
        let options = TrainOptions::default();
        let split = SplitSpec::new(0.6, 21);
        let outcome: TrainOutcome<f64> = train(
            &out.graph,
            &out.features,
            &out.labels,
            &relations,
            &config,
            &options,
            &split,
        )
        .unwrap();
        let report = &outcome.report;
        assert!(report.stopping_epoch <= options.max_epochs);
        assert!(report.best_epoch <= report.stopping_epoch);
        // the reported best epoch attains the minimum recorded val loss
        let min_val = report
            .epochs
            .iter()
            .map(|r| r.val_loss)
            .fold(f64::INFINITY, f64::min);
        let best_rec = &report.epochs[report.best_epoch - 1];
        assert_eq!(best_rec.val_loss, min_val);

        // train accuracy of the restored parameters
        let x = out.features.data().clone();
        let eval = forward(
            &x,
            &relations.masks(),
            &outcome.params,
            &config,
            None,
            Mode::Eval,
        )
        .unwrap();
        let pred = predictions(&eval.logits, &outcome.splits.train);
        let truth: Vec<usize> = outcome
            .splits
            .train
            .iter()
            .map(|&v| out.labels.get(v).unwrap())
            .collect();
        let hits = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
        let accuracy = hits as f64 / truth.len() as f64;
        assert!(
            accuracy >= 0.99,
            "train accuracy {accuracy} below 0.99 (stopping epoch {})",
            report.stopping_epoch
        );
    }

    #[test]
    fn test_labels_never_influence_checkpoints() {
        let (out, relations) = tiny_dataset(7);
        let config = tiny_config(&out, 31);
        let options = TrainOptions {
            max_epochs: 12,
            patience: 12,
            ..TrainOptions::default()
        };
        let splits = split_labels(&out.labels, &SplitSpec::new(0.4, 31)).unwrap();

        // swap the classes of two test vertices from different classes
        let mut relabeled = std::collections::BTreeMap::new();
        for (v, c) in out.labels.iter() {
            relabeled.insert(v, c);
        }
        let a = *splits
            .test
            .iter()
            .find(|&&v| out.labels.get(v) == Some(0))
            .unwrap();
        let b = *splits
            .test
            .iter()
            .find(|&&v| out.labels.get(v) == Some(1))
            .unwrap();
        relabeled.insert(a, 1);
        relabeled.insert(b, 0);
        let perturbed = LabelTable::new(&out.graph, out.labels.target_type(), relabeled).unwrap();

        let run = |labels: &LabelTable| -> (ModelParams<f64>, Vec<u8>) {
            let outcome: TrainOutcome<f64> = train_with_splits(
                &out.graph,
                &out.features,
                labels,
                &relations,
                &config,
                &options,
                &splits,
            )
            .unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("ckpt.json");
            crate::model::save_checkpoint(&path, &config, &outcome.params, "hash").unwrap();
            (outcome.params, std::fs::read(&path).unwrap())
        };
        let (params_a, bytes_a) = run(&out.labels);
        let (params_b, bytes_b) = run(&perturbed);
        assert_eq!(params_a, params_b);
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn same_seed_reproduces_the_report() {
        let (out, relations) = tiny_dataset(8);
        let config = tiny_config(&out, 41);
        let options = TrainOptions {
            max_epochs: 8,
            patience: 8,
            ..TrainOptions::default()
        };
        let split = SplitSpec::new(0.4, 41);
        let run = || -> TrainReport {
            train::<f64>(
                &out.graph,
                &out.features,
                &out.labels,
                &relations,
                &config,
                &options,
                &split,
            )
            .unwrap()
            .report
        };
        let a = run();
        let b = run();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let mut other_config = config.clone();
        other_config.seed = 42;
        let c: TrainReport = train::<f64>(
            &out.graph,
            &out.features,
            &out.labels,
            &relations,
            &other_config,
            &options,
            &split,
        )
        .unwrap()
        .report;
        assert_ne!(a.epochs[0].train_loss, c.epochs[0].train_loss);
    }

    #[test]
    fn f1_monitor_and_parallel_branches_work() {
        let (out, relations) = tiny_dataset(9);
        let config = tiny_config(&out, 51);
        let split = SplitSpec::new(0.4, 51);
        let sequential = TrainOptions {
            max_epochs: 6,
            patience: 6,
            monitor: Monitor::MicroF1,
            ..TrainOptions::default()
        };
        let parallel = TrainOptions {
            parallel: true,
            ..sequential.clone()
        };
        let a: TrainOutcome<f64> = train(
            &out.graph,
            &out.features,
            &out.labels,
            &relations,
            &config,
            &sequential,
            &split,
        )
        .unwrap();
        let b: TrainOutcome<f64> = train(
            &out.graph,
            &out.features,
            &out.labels,
            &relations,
            &config,
            &parallel,
            &split,
        )
        .unwrap();
        // per-branch merges are ordered, so thread count cannot change results
        assert_eq!(a.params, b.params);
        assert_eq!(a.report, b.report);
        assert!(a.report.best_epoch <= a.report.stopping_epoch);
    }
}
