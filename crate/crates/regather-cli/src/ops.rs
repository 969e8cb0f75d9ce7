//! Command implementations behind the subcommands.

use crate::config::{FileConfig, Resolver};
use crate::manifest::ManifestBuilder;
use anyhow::{bail, Context, Result};
use clap::Args;
use regather::autodiff::{Reduction, Scalar};
use regather::graph::{
    load_features, load_graph, load_labels, save_features, save_graph, save_labels,
    FeatureMatrix, HeteroGraph, LabelTable,
};
use regather::metrics::{aggregate, f1_scores, machine_rows, render_table, ResultRow};
use regather::model::{
    checkpoint_catalog_hash, derive_seed, forward, load_checkpoint, save_checkpoint, Mode,
    ModelConfig, ModelParams, DEFAULT_DROPOUT, DEFAULT_FUSION_DIM, DEFAULT_HIDDEN_DIM,
    DEFAULT_LEAKY_SLOPE,
};
use regather::relation::{
    build_relation_set, dump_relation_set, homogenized, relation_catalog, signature_path,
    ComposeOptions, RelationSet, DEFAULT_NNZ_CAP,
};
use regather::synth::{default_fixture, generate, learnability_fixture};
use regather::train::{
    predictions, split_labels, train, Monitor, SplitSpec, TrainOptions, TrainReport, DEFAULT_LR,
    DEFAULT_MAX_EPOCHS, DEFAULT_PATIENCE, DEFAULT_VAL_FRACTION,
};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const VERTICES_FILE: &str = "vertices.tsv";
pub const EDGES_FILE: &str = "edges.tsv";
pub const SCHEMA_FILE: &str = "schema.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const LABELS_FILE: &str = "labels.tsv";

const DEFAULT_TRAIN_FRACTION: f64 = 0.6;

// ----- small flag enums (FromStr/Display so config files can set them) -----

macro_rules! flag_enum {
    ($name:ident { $($variant:ident => $text:literal),+ } $expected:literal) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq)]
        pub enum $name {
            $($variant),+
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok(Self::$variant),)+
                    other => Err(format!("expected {}, got `{other}`", $expected)),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match self {
                    $(Self::$variant => f.write_str($text)),+
                }
            }
        }
    };
}

flag_enum!(LossReductionArg { Mean => "mean", Sum => "sum" } "mean or sum");
flag_enum!(MonitorArg { Loss => "loss", F1 => "f1" } "loss or f1");
flag_enum!(PrecisionArg { F64 => "f64", F32 => "f32" } "f64 or f32");
flag_enum!(FixtureArg { Bibliographic => "bibliographic", Planted => "planted" } "bibliographic or planted");

impl From<LossReductionArg> for Reduction {
    fn from(a: LossReductionArg) -> Self {
        match a {
            LossReductionArg::Mean => Reduction::Mean,
            LossReductionArg::Sum => Reduction::Sum,
        }
    }
}

impl From<MonitorArg> for Monitor {
    fn from(a: MonitorArg) -> Self {
        match a {
            MonitorArg::Loss => Monitor::Loss,
            MonitorArg::F1 => Monitor::MicroF1,
        }
    }
}

// ----- shared plumbing -----

fn init_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        bail!("--threads must be >= 1");
    }
    if threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("initializing the thread pool")?;
    }
    Ok(())
}

fn load_graph_dir(dir: &Path, inputs: &mut Vec<PathBuf>) -> Result<HeteroGraph> {
    let vertices = dir.join(VERTICES_FILE);
    let edges = dir.join(EDGES_FILE);
    let schema = dir.join(SCHEMA_FILE);
    let loaded = load_graph(&vertices, &edges, &schema)
        .with_context(|| format!("loading graph from {}", dir.display()))?;
    if loaded.duplicate_edges > 0 {
        eprintln!("warning: merged {} duplicate edges", loaded.duplicate_edges);
    }
    if loaded.dropped_self_loops > 0 {
        eprintln!("warning: dropped {} self-loops", loaded.dropped_self_loops);
    }
    inputs.extend([vertices, edges, schema]);
    Ok(loaded.graph)
}

fn load_dataset_dir(
    dir: &Path,
    inputs: &mut Vec<PathBuf>,
) -> Result<(HeteroGraph, FeatureMatrix, LabelTable)> {
    let graph = load_graph_dir(dir, inputs)?;
    let features_path = dir.join(FEATURES_FILE);
    let labels_path = dir.join(LABELS_FILE);
    let features = load_features(&features_path, graph.num_vertices())
        .with_context(|| format!("loading features {}", features_path.display()))?;
    let labels = load_labels(&labels_path, &graph)
        .with_context(|| format!("loading labels {}", labels_path.display()))?;
    inputs.extend([features_path, labels_path]);
    Ok((graph, features, labels))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    write_text(path, &text)
}

/// Human-readable tag for a relation: the vertex-type path of its first
/// signature, noting how many more signatures merged into the same mask.
fn relation_label(relations: &RelationSet, index: usize, graph: &HeteroGraph) -> String {
    let rel = &relations.relations()[index];
    let mut label = rel
        .provenance
        .first()
        .map(|sig| signature_path(sig, graph))
        .unwrap_or_default();
    if rel.provenance.len() > 1 {
        label.push_str(&format!(" (+{} merged)", rel.provenance.len() - 1));
    }
    label
}

fn print_beta_table(
    tag: &str,
    beta: &[f64],
    relations: &RelationSet,
    graph: &HeteroGraph,
) {
    println!("learned relation weights ({tag}):");
    for (i, b) in beta.iter().enumerate() {
        println!(
            "  [{i:02}] beta = {b:.4}  order {}  {}",
            relations.relations()[i].order(),
            relation_label(relations, i, graph)
        );
    }
}

// ----- decompose -----

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    /// Directory holding vertices.tsv, edges.tsv, and schema.tsv
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Highest relation order K (>= 1)
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_order: Option<u64>,
    /// Where to write the catalog, manifest, and optional mask dump
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also write one text file per relation mask (needs --out-dir)
    #[arg(long)]
    pub dump_masks: bool,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Hard cap on non-zeros per composed product
    #[arg(long)]
    pub nnz_cap: Option<usize>,
}

pub fn run_decompose(args: &DecomposeArgs) -> Result<()> {
    let threads = args.threads.unwrap_or(1);
    init_threads(threads)?;
    if args.dump_masks && args.out_dir.is_none() {
        bail!("--dump-masks needs --out-dir");
    }
    let max_order = args.max_order.unwrap_or(3) as usize;
    let mut inputs = Vec::new();
    let graph = load_graph_dir(&args.data_dir, &mut inputs)?;
    let relations = build_relation_set(
        &graph,
        &ComposeOptions {
            max_order,
            nnz_cap: args.nnz_cap.unwrap_or(DEFAULT_NNZ_CAP),
            parallel: threads > 1,
        },
    )?;
    let catalog = relation_catalog(&relations, &graph);
    print!("{catalog}");

    if let Some(out_dir) = &args.out_dir {
        std::fs::create_dir_all(out_dir)
            .with_context(|| format!("creating {}", out_dir.display()))?;
        let mut manifest = ManifestBuilder::new("decompose", 0);
        for p in &inputs {
            manifest.input(p)?;
        }
        manifest.config(
            [
                ("max-order".to_string(), max_order.to_string()),
                ("threads".to_string(), threads.to_string()),
            ]
            .into(),
        );
        let catalog_path = out_dir.join("catalog.txt");
        write_text(&catalog_path, &catalog)?;
        manifest.output(&catalog_path);
        if args.dump_masks {
            dump_relation_set(&relations, &graph, out_dir)?;
            manifest.output(&out_dir.join("catalog.json"));
        }
        manifest.write(out_dir)?;
    }
    Ok(())
}

// ----- train / baseline -----

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory holding vertices.tsv, edges.tsv, schema.tsv,
    /// features.tsv, and labels.tsv
    #[arg(long)]
    pub data_dir: PathBuf,
    /// `key = value` settings file; flags override its entries
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where checkpoints, reports, and results land (default regather-out)
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Highest relation order K (>= 1); ignored by `baseline`
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_order: Option<u64>,
    /// Node-attention embedding width
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Fusion projection width
    #[arg(long)]
    pub fusion_dim: Option<usize>,
    /// Dropout rate on input features and attention weights
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Adam learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Upper bound on training epochs
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Epochs without validation improvement before stopping
    #[arg(long)]
    pub patience: Option<usize>,
    /// Fraction of labeled vertices trained on
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Fraction of the training portion held out for validation
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Repeat training with derived seeds and aggregate the metrics
    #[arg(long)]
    pub trials: Option<usize>,
    /// Root seed; every random choice derives from it
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for per-relation branches (1 = sequential)
    #[arg(long)]
    pub threads: Option<usize>,
    /// Aggregate the masked cross-entropy by `mean` or `sum`
    #[arg(long)]
    pub loss_reduction: Option<LossReductionArg>,
    /// Average fusion scores over target-type vertices only
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub restrict_fusion_mean: Option<bool>,
    /// L2 penalty folded into gradients (0 disables)
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Early-stopping signal: validation `loss` or Micro-`f1`
    #[arg(long)]
    pub monitor: Option<MonitorArg>,
    /// Float width for parameters and arithmetic
    #[arg(long)]
    pub precision: Option<PrecisionArg>,
    /// Use the fused embedding as logits (hidden-dim must equal classes)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_classifier: Option<bool>,
    /// Hard cap on non-zeros per composed product
    #[arg(long)]
    pub nnz_cap: Option<usize>,
}

struct ResolvedTrain {
    max_order: usize,
    train_fraction: f64,
    val_fraction: f64,
    trials: usize,
    seed: u64,
    threads: usize,
    precision: PrecisionArg,
    nnz_cap: usize,
    base_config: ModelConfig,
    options: TrainOptions,
}

fn resolve_train(args: &TrainArgs, resolver: &mut Resolver) -> Result<ResolvedTrain> {
    let max_order = resolver.value("max-order", args.max_order, 3)? as usize;
    let hidden_dim = resolver.value("hidden-dim", args.hidden_dim, DEFAULT_HIDDEN_DIM)?;
    let fusion_dim = resolver.value("fusion-dim", args.fusion_dim, DEFAULT_FUSION_DIM)?;
    let dropout = resolver.value("dropout", args.dropout, DEFAULT_DROPOUT)?;
    let lr = resolver.value("lr", args.lr, DEFAULT_LR)?;
    let max_epochs = resolver.value("max-epochs", args.max_epochs, DEFAULT_MAX_EPOCHS)?;
    let patience = resolver.value("patience", args.patience, DEFAULT_PATIENCE)?;
    let train_fraction =
        resolver.value("train-fraction", args.train_fraction, DEFAULT_TRAIN_FRACTION)?;
    let val_fraction =
        resolver.value("val-fraction", args.val_fraction, DEFAULT_VAL_FRACTION)?;
    let trials = resolver.value("trials", args.trials, 1)?;
    let seed = resolver.value("seed", args.seed, 0)?;
    let threads = resolver.value("threads", args.threads, 1)?;
    let loss_reduction =
        resolver.value("loss-reduction", args.loss_reduction, LossReductionArg::Mean)?;
    let restrict_fusion_mean =
        resolver.value("restrict-fusion-mean", args.restrict_fusion_mean, false)?;
    let weight_decay = resolver.value("weight-decay", args.weight_decay, 0.0)?;
    let monitor = resolver.value("monitor", args.monitor, MonitorArg::Loss)?;
    let precision = resolver.value("precision", args.precision, PrecisionArg::F64)?;
    let no_classifier = resolver.value("no-classifier", args.no_classifier, false)?;
    let nnz_cap = resolver.value("nnz-cap", args.nnz_cap, DEFAULT_NNZ_CAP)?;
    if max_order == 0 {
        bail!("max-order must be >= 1");
    }
    if trials == 0 {
        bail!("trials must be >= 1");
    }
    Ok(ResolvedTrain {
        max_order,
        train_fraction,
        val_fraction,
        trials,
        seed,
        threads,
        precision,
        nnz_cap,
        base_config: ModelConfig {
            d_in: 0,        // filled from the features
            num_classes: 0, // filled from the labels
            d_h: hidden_dim,
            d_q: fusion_dim,
            max_order,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            dropout_rate: dropout,
            seed: 0, // per trial
            use_classifier: !no_classifier,
            restrict_fusion_mean,
        },
        options: TrainOptions {
            lr,
            weight_decay,
            max_epochs,
            patience,
            loss_reduction: loss_reduction.into(),
            monitor: monitor.into(),
            parallel: threads > 1,
        },
    })
}

#[allow(clippy::too_many_arguments)]
fn run_trial<F: Scalar>(
    graph: &HeteroGraph,
    features: &FeatureMatrix,
    labels: &LabelTable,
    relations: &RelationSet,
    config: &ModelConfig,
    options: &TrainOptions,
    split: &SplitSpec,
    checkpoint_path: &Path,
) -> Result<TrainReport> {
    let outcome = train::<F>(graph, features, labels, relations, config, options, split)?;
    save_checkpoint(checkpoint_path, config, &outcome.params, &relations.catalog_hash())?;
    let mut report = outcome.report;
    report.checkpoint = Some(
        checkpoint_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    );
    Ok(report)
}

pub fn run_train(args: &TrainArgs, baseline: bool) -> Result<()> {
    let file_config = FileConfig::load(args.config.as_deref())?;
    let mut resolver = Resolver::new(&file_config);
    let resolved = resolve_train(args, &mut resolver)?;
    init_threads(resolved.threads)?;

    let command = if baseline { "baseline" } else { "train" };
    let mut inputs = Vec::new();
    if let Some(cfg) = &args.config {
        inputs.push(cfg.clone());
    }
    let (graph, features, labels) = load_dataset_dir(&args.data_dir, &mut inputs)?;
    let relations = if baseline {
        homogenized(&graph)
    } else {
        build_relation_set(
            &graph,
            &ComposeOptions {
                max_order: resolved.max_order,
                nnz_cap: resolved.nnz_cap,
                parallel: resolved.threads > 1,
            },
        )?
    };
    let catalog = relation_catalog(&relations, &graph);
    println!("{}", catalog.lines().next().unwrap_or(""));

    let out_dir = args
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("regather-out"));
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let mut manifest = ManifestBuilder::new(command, resolved.seed);
    for p in &inputs {
        manifest.input(p)?;
    }
    manifest.config(resolver.into_resolved());
    let catalog_path = out_dir.join("catalog.txt");
    write_text(&catalog_path, &catalog)?;
    manifest.output(&catalog_path);

    let mut base_config = resolved.base_config.clone();
    base_config.d_in = features.data().ncols();
    base_config.num_classes = labels.num_classes();
    if baseline {
        base_config.max_order = 1;
    }

    let mut macro_values = Vec::with_capacity(resolved.trials);
    let mut micro_values = Vec::with_capacity(resolved.trials);
    for trial in 0..resolved.trials {
        let mut config = base_config.clone();
        config.seed = derive_seed(resolved.seed, &[7, trial as u64]);
        let split = SplitSpec {
            train_fraction: resolved.train_fraction,
            val_fraction: resolved.val_fraction,
            seed: derive_seed(resolved.seed, &[8, trial as u64]),
        };
        let checkpoint_path = out_dir.join(format!("trial{trial:03}.checkpoint.json"));
        let report_path = out_dir.join(format!("trial{trial:03}.report.json"));
        let report = match resolved.precision {
            PrecisionArg::F64 => run_trial::<f64>(
                &graph,
                &features,
                &labels,
                &relations,
                &config,
                &resolved.options,
                &split,
                &checkpoint_path,
            )?,
            PrecisionArg::F32 => run_trial::<f32>(
                &graph,
                &features,
                &labels,
                &relations,
                &config,
                &resolved.options,
                &split,
                &checkpoint_path,
            )?,
        };
        write_json(&report_path, &report)?;
        manifest.output(&checkpoint_path).output(&report_path);
        println!(
            "trial {trial:03}: test Macro-F1 {:.2}  Micro-F1 {:.2}  (stopped at epoch {}, best epoch {})",
            report.test_macro_f1, report.test_micro_f1, report.stopping_epoch, report.best_epoch
        );
        if trial == 0 {
            print_beta_table("trial 000", &report.beta, &relations, &graph);
        }
        macro_values.push(report.test_macro_f1);
        micro_values.push(report.test_micro_f1);
    }

    let dataset_name = args
        .data_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let train_size = format!("{:.0}%", resolved.train_fraction * 100.0);
    let rows = vec![
        ResultRow::from_aggregate(
            &dataset_name,
            &train_size,
            &aggregate("Macro-F1", &macro_values)?,
        ),
        ResultRow::from_aggregate(
            &dataset_name,
            &train_size,
            &aggregate("Micro-F1", &micro_values)?,
        ),
    ];
    print!("{}", render_table(&rows));
    let results_json = out_dir.join("results.json");
    write_json(&results_json, &rows)?;
    let results_tsv = out_dir.join("results.tsv");
    write_text(&results_tsv, &machine_rows(&rows))?;
    manifest.output(&results_json).output(&results_tsv);
    manifest.write(&out_dir)?;
    Ok(())
}

// ----- eval -----

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory holding the dataset files
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Checkpoint written by `train` or `baseline`
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluate only the test portion of this split instead of all
    /// labeled vertices
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Root seed of the original run (for reproducing its split)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trial index of the original run the split belongs to
    #[arg(long)]
    pub trial: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Float width; must match the checkpoint
    #[arg(long)]
    pub precision: Option<PrecisionArg>,
    #[arg(long)]
    pub nnz_cap: Option<usize>,
}

pub fn run_eval(args: &EvalArgs) -> Result<()> {
    let threads = args.threads.unwrap_or(1);
    init_threads(threads)?;
    match args.precision.unwrap_or(PrecisionArg::F64) {
        PrecisionArg::F64 => eval_typed::<f64>(args, threads),
        PrecisionArg::F32 => eval_typed::<f32>(args, threads),
    }
}

fn eval_typed<F: Scalar>(args: &EvalArgs, threads: usize) -> Result<()> {
    let mut inputs = Vec::new();
    let (graph, features, labels) = load_dataset_dir(&args.data_dir, &mut inputs)?;
    let (config, params): (ModelConfig, ModelParams<F>) =
        load_checkpoint(&args.checkpoint, None)
            .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let stored_hash = checkpoint_catalog_hash(&args.checkpoint)?;

    // The checkpoint decides which relation set it was trained against.
    let composed = build_relation_set(
        &graph,
        &ComposeOptions {
            max_order: config.max_order,
            nnz_cap: args.nnz_cap.unwrap_or(DEFAULT_NNZ_CAP),
            parallel: threads > 1,
        },
    )?;
    let relations = if composed.catalog_hash() == stored_hash {
        composed
    } else {
        let union = homogenized(&graph);
        if union.catalog_hash() == stored_hash {
            union
        } else {
            bail!(
                "checkpoint {} was trained against a different relation set (catalog hash mismatch)",
                args.checkpoint.display()
            );
        }
    };
    if params.num_relations() != relations.len() {
        bail!(
            "checkpoint has {} relation branches but the relation set has {}",
            params.num_relations(),
            relations.len()
        );
    }
    if config.d_in != features.data().ncols() {
        bail!(
            "checkpoint expects {}-wide features but the dataset has {}",
            config.d_in,
            features.data().ncols()
        );
    }
    if config.num_classes != labels.num_classes() {
        bail!(
            "checkpoint has {} classes but the labels have {}",
            config.num_classes,
            labels.num_classes()
        );
    }

    let x = features.data().mapv(F::from_f64);
    let restrict = config
        .restrict_fusion_mean
        .then(|| std::sync::Arc::new(graph.vertices_of_type(labels.target_type())));
    let out = forward(
        &x,
        &relations.masks(),
        &params,
        &config,
        restrict.as_ref(),
        Mode::Eval,
    )?;

    let (vertices, scope) = match args.train_fraction {
        Some(train_fraction) => {
            let split = SplitSpec {
                train_fraction,
                val_fraction: args.val_fraction.unwrap_or(DEFAULT_VAL_FRACTION),
                seed: derive_seed(args.seed.unwrap_or(0), &[8, args.trial.unwrap_or(0)]),
            };
            (split_labels(&labels, &split)?.test, "test split")
        }
        None => (labels.vertices(), "all labeled vertices"),
    };
    let pred = predictions(&out.logits, &vertices);
    let truth: Vec<usize> = vertices
        .iter()
        .map(|&v| labels.get(v).expect("labeled vertex"))
        .collect();
    let scores = f1_scores(&truth, &pred, labels.num_classes())?;

    println!("evaluated {} vertices ({scope})", vertices.len());
    let dataset_name = args
        .data_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let rows = vec![
        ResultRow {
            dataset: dataset_name.clone(),
            train_size: scope.to_string(),
            metric: "Macro-F1".to_string(),
            mean: scores.macro_f1,
            std: None,
        },
        ResultRow {
            dataset: dataset_name,
            train_size: scope.to_string(),
            metric: "Micro-F1".to_string(),
            mean: scores.micro_f1,
            std: None,
        },
    ];
    print!("{}", render_table(&rows));
    let beta: Vec<f64> = out.beta.iter().map(|b| b.as_f64()).collect();
    print_beta_table("checkpoint", &beta, &relations, &graph);
    Ok(())
}

// ----- synth -----

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory the dataset files are written into
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Built-in recipe: `bibliographic` (4-type schema) or `planted`
    /// (2-class learnability fixture)
    #[arg(long, default_value = "bibliographic")]
    pub fixture: FixtureArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run_synth(args: &SynthArgs) -> Result<()> {
    let spec = match args.fixture {
        FixtureArg::Bibliographic => default_fixture(args.seed),
        FixtureArg::Planted => learnability_fixture(args.seed),
    };
    let out = generate(&spec)?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let vertices = args.out_dir.join(VERTICES_FILE);
    let edges = args.out_dir.join(EDGES_FILE);
    let schema = args.out_dir.join(SCHEMA_FILE);
    let features = args.out_dir.join(FEATURES_FILE);
    let labels = args.out_dir.join(LABELS_FILE);
    save_graph(&out.graph, &vertices, &edges, &schema)?;
    save_features(&out.features, &features)?;
    save_labels(&out.labels, &labels)?;

    let mut manifest = ManifestBuilder::new("synth", args.seed);
    manifest.config(
        [
            ("fixture".to_string(), args.fixture.to_string()),
            ("seed".to_string(), args.seed.to_string()),
        ]
        .into(),
    );
    for p in [&vertices, &edges, &schema, &features, &labels] {
        manifest.output(p);
    }
    manifest.write(&args.out_dir)?;

    println!(
        "wrote {} vertices, {} edges, {} labeled vertices over {} classes to {}",
        out.graph.num_vertices(),
        out.graph.num_edges(),
        out.labels.len(),
        out.labels.num_classes(),
        args.out_dir.display()
    );
    Ok(())
}

// ----- report -----

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// results.json files produced by `train` or `baseline`
    #[arg(required = true)]
    pub results: Vec<PathBuf>,
    /// Also print tab-separated machine rows
    #[arg(long)]
    pub machine: bool,
}

pub fn run_report(args: &ReportArgs) -> Result<()> {
    let mut rows: Vec<ResultRow> = Vec::new();
    for path in &args.results {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading results {}", path.display()))?;
        let mut file_rows: Vec<ResultRow> = serde_json::from_str(&text)
            .with_context(|| format!("parsing results {}", path.display()))?;
        rows.append(&mut file_rows);
    }
    print!("{}", render_table(&rows));
    if args.machine {
        print!("{}", machine_rows(&rows));
    }
    Ok(())
}
