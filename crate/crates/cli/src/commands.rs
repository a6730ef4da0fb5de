//! Subcommand argument types and implementations.
//!
//! Every stage wraps its errors with a stage-naming context so failures
//! surface as `error: <stage> failed: ...` with a nonzero exit status.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, ValueEnum};

use crf_core::branches::{
    branch_histogram, crossbreed_prune, decompose_to_branches, evaluate_branch_stats,
    histogram_csv, BranchMetric, EvaluationScope, PruneCriterion,
};
use crf_core::dataset::{
    feature_summary, feature_summary_csv, generate_synthetic, load_csv, merge_classes,
    train_test_split, CsvSchema, Dataset, SyntheticSpec,
};
use crf_core::forest::{fit_forest, ForestConfig, Task};
use crf_core::predict::{batch_csv, build_fallback, CrfModel, FallbackKind};
use crf_core::seed::derive_seed;

use crate::model_file::{
    dataset_fingerprint, load_model, save_model, ModelFile, Provenance, FORMAT_VERSION,
};

// Seed stream ids, one per randomized stage.
const STREAM_DATA: u64 = 1;
const STREAM_FOREST: u64 = 2;
const STREAM_FALLBACK: u64 = 3;
const STREAM_SPLIT: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeChoice {
    /// Score branches over the full training set.
    Full,
    /// Score branches over their own tree's bootstrap rows.
    Bootstrap,
}

impl From<ScopeChoice> for EvaluationScope {
    fn from(v: ScopeChoice) -> Self {
        match v {
            ScopeChoice::Full => EvaluationScope::FullTrainingSet,
            ScopeChoice::Bootstrap => EvaluationScope::OwnBootstrap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FallbackChoice {
    Random,
    Majority,
    Centroid,
}

impl FallbackChoice {
    pub fn to_kind(self, seed: u64) -> FallbackKind {
        match self {
            FallbackChoice::Random => FallbackKind::RandomUniform { seed },
            FallbackChoice::Majority => FallbackKind::MajorityClass,
            FallbackChoice::Centroid => FallbackKind::NearestClassCentroid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HoldoutSide {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricChoice {
    Accuracy,
    Impact,
}

impl From<MetricChoice> for BranchMetric {
    fn from(v: MetricChoice) -> Self {
        match v {
            MetricChoice::Accuracy => BranchMetric::Accuracy,
            MetricChoice::Impact => BranchMetric::ImpactFactor,
        }
    }
}

/// Where training or evaluation data comes from.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV data file; requires --label-col.
    #[arg(long, conflicts_with = "synthetic")]
    pub csv: Option<PathBuf>,

    /// Zero-based CSV column holding the integer class label.
    #[arg(long, requires = "csv")]
    pub label_col: Option<usize>,

    /// First CSV line is a header.
    #[arg(long, requires = "csv")]
    pub header: bool,

    /// Comma-separated zero-based CSV columns to drop (ids etc.).
    #[arg(long, requires = "csv")]
    pub ignore_cols: Option<String>,

    /// Merge these class indices (after contiguous re-indexing) into the
    /// positive class of a binary task.
    #[arg(long)]
    pub merge_positive: Option<String>,

    /// Synthetic source: n_samples,n_features,n_informative,n_classes,n_clusters.
    #[arg(long)]
    pub synthetic: Option<String>,

    /// Keep only one side of a deterministic split of the source, so train
    /// and eval can share a dataset: same --seed, opposite sides.
    #[arg(long, value_enum)]
    pub holdout: Option<HoldoutSide>,

    /// Training fraction used with --holdout.
    #[arg(long, default_value_t = 0.75, requires = "holdout")]
    pub train_fraction: f64,
}

impl DataArgs {
    pub fn load(&self, seed: u64) -> anyhow::Result<Dataset> {
        let data = match (&self.csv, &self.synthetic) {
            (Some(path), None) => {
                let label_column = self
                    .label_col
                    .ok_or_else(|| anyhow::anyhow!("--csv requires --label-col"))
                    .context("ingestion failed")?;
                let ignore_columns = match &self.ignore_cols {
                    Some(list) => parse_usize_list(list).context("ingestion failed")?,
                    None => Vec::new(),
                };
                let schema = CsvSchema {
                    label_column,
                    has_header: self.header,
                    ignore_columns,
                };
                load_csv(path, &schema).context("ingestion failed")?
            }
            (None, Some(spec)) => {
                let spec = parse_synthetic_spec(spec, derive_seed(seed, STREAM_DATA))
                    .context("ingestion failed")?;
                generate_synthetic(&spec).context("ingestion failed")?
            }
            _ => anyhow::bail!("ingestion failed: specify exactly one of --csv or --synthetic"),
        };
        let data = match &self.merge_positive {
            None => data,
            Some(list) => {
                let positive: BTreeSet<usize> = parse_usize_list(list)
                    .context("merge failed")?
                    .into_iter()
                    .collect();
                merge_classes(&data, &positive).context("merge failed")?
            }
        };
        match self.holdout {
            None => Ok(data),
            Some(side) => {
                let pair =
                    train_test_split(&data, self.train_fraction, derive_seed(seed, STREAM_SPLIT))
                        .context("split failed")?;
                Ok(match side {
                    HoldoutSide::Train => pair.train,
                    HoldoutSide::Test => pair.test,
                })
            }
        }
    }
}

pub fn parse_usize_list(s: &str) -> anyhow::Result<Vec<usize>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| anyhow::anyhow!("'{t}' is not a non-negative integer"))
        })
        .collect()
}

pub fn parse_f64_list(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| anyhow::anyhow!("'{t}' is not a number"))
        })
        .collect()
}

fn parse_synthetic_spec(s: &str, seed: u64) -> anyhow::Result<SyntheticSpec> {
    let parts = parse_usize_list(s)?;
    if parts.len() != 5 {
        anyhow::bail!(
            "--synthetic takes 5 values: n_samples,n_features,n_informative,n_classes,n_clusters"
        );
    }
    Ok(SyntheticSpec {
        n_samples: parts[0],
        n_features: parts[1],
        n_informative: parts[2],
        n_classes: parts[3],
        n_clusters_per_class: parts[4],
        seed,
    })
}

#[derive(Debug, Clone, Copy, Args)]
pub struct ForestArgs {
    /// Number of trees.
    #[arg(long, default_value_t = 50)]
    pub trees: usize,

    /// Candidate features per split; defaults to floor(sqrt(p)).
    #[arg(long)]
    pub mtry: Option<usize>,

    /// Nodes smaller than this become leaves; 1 grows to purity.
    #[arg(long, default_value_t = 1)]
    pub min_leaf: usize,

    /// Optional depth bound.
    #[arg(long)]
    pub max_depth: Option<usize>,
}

impl ForestArgs {
    pub fn to_config(self, seed: u64) -> ForestConfig {
        ForestConfig {
            n_trees: self.trees,
            mtry: self.mtry,
            min_leaf_size: self.min_leaf,
            max_depth: self.max_depth,
            task: Task::Classification,
            seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub forest: ForestArgs,

    /// Rows branch statistics are computed over.
    #[arg(long, value_enum, default_value_t = ScopeChoice::Full)]
    pub scope: ScopeChoice,

    /// Decision for inputs no branch covers.
    #[arg(long, value_enum, default_value_t = FallbackChoice::Centroid)]
    pub fallback: FallbackChoice,

    /// Also write a per-feature mean/std CSV here.
    #[arg(long)]
    pub feature_summary: Option<PathBuf>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_train(args: &TrainArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let data = args.data.load(args.seed)?;
    println!(
        "loaded {} rows x {} features, {} classes",
        data.n_rows(),
        data.feature_count(),
        data.class_count().unwrap_or(0)
    );

    if let Some(path) = &args.feature_summary {
        let summary = feature_summary(&data).context("feature summary failed")?;
        std::fs::write(path, feature_summary_csv(&summary)).context("feature summary failed")?;
        println!("feature summary written to {}", path.display());
    }

    let config = args.forest.to_config(derive_seed(args.seed, STREAM_FOREST));
    let forest = fit_forest(&data, &config).context("training failed")?;
    let branch_set = decompose_to_branches(&forest);
    let branch_set = evaluate_branch_stats(&branch_set, &data, args.scope.into())
        .context("evaluation failed")?;
    let fallback = build_fallback(
        &data,
        args.fallback
            .to_kind(derive_seed(args.seed, STREAM_FALLBACK)),
    )
    .context("fallback construction failed")?;
    // Validate the parts assemble into a model before persisting them.
    CrfModel::classification(branch_set.clone(), fallback.clone())
        .context("model assembly failed")?;

    let model = ModelFile {
        format_version: FORMAT_VERSION,
        forest_config: config,
        forest,
        branch_set,
        fallback,
        provenance: Provenance::new(dataset_fingerprint(&data), args.seed),
    };
    save_model(&args.out, &model).context("persistence failed")?;

    println!(
        "trained {} trees -> {} branches ({} predicates) in {:.3}s",
        model.forest.trees.len(),
        model.branch_set.len(),
        model.branch_set.total_predicates(),
        started.elapsed().as_secs_f64()
    );
    println!("model written to {}", args.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    /// Input model file.
    #[arg(long)]
    pub model: PathBuf,

    #[arg(long, value_enum)]
    pub criterion: MetricChoice,

    /// Survival threshold in [0, 1]; branches with metric >= tau are kept.
    #[arg(long)]
    pub tau: f64,

    /// Accepted for interface uniformity; pruning is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_prune(args: &PruneArgs) -> anyhow::Result<()> {
    let model = load_model(&args.model).context("model load failed")?;
    let criterion =
        PruneCriterion::new(args.criterion.into(), args.tau).context("pruning failed")?;
    let pruned = crossbreed_prune(&model.branch_set, &criterion).context("pruning failed")?;
    println!(
        "kept {}/{} branches ({}/{} predicates) with {} >= {}",
        pruned.len(),
        model.branch_set.len(),
        pruned.total_predicates(),
        model.branch_set.total_predicates(),
        criterion.kind,
        criterion.threshold
    );
    let out_model = ModelFile {
        branch_set: pruned,
        ..model
    };
    save_model(&args.out, &out_model).context("persistence failed")?;
    println!("model written to {}", args.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model file to evaluate.
    #[arg(long)]
    pub model: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Per-row prediction CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let file = load_model(&args.model).context("model load failed")?;
    let model = file.crf_model().context("model load failed")?;
    let data = args.data.load(args.seed)?;
    if data.feature_count() != model.feature_count {
        return Err(anyhow::anyhow!(
            "model expects {} features, data has {}",
            model.feature_count,
            data.feature_count()
        ))
        .context("prediction failed");
    }

    let started = Instant::now();
    let metrics = model.classify_batch(&data).context("prediction failed")?;
    let elapsed = started.elapsed();

    println!("rows: {}", data.n_rows());
    println!("accuracy: {}", metrics.accuracy);
    println!("fallback_rate: {}", metrics.fallback_rate);
    println!("mean_covering_branches: {}", metrics.mean_covering);
    println!(
        "mean_prediction_time_us: {:.3}",
        elapsed.as_secs_f64() * 1e6 / data.n_rows() as f64
    );

    let csv = batch_csv(&metrics, &data);
    write_csv_output(args.out.as_deref(), &csv).context("persistence failed")?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct HistArgs {
    /// Model file whose branch statistics are binned.
    #[arg(long)]
    pub model: PathBuf,

    #[arg(long, value_enum, default_value_t = MetricChoice::Accuracy)]
    pub metric: MetricChoice,

    #[arg(long, default_value_t = 10)]
    pub bins: usize,

    /// Accepted for interface uniformity; the histogram is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Histogram CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_hist(args: &HistArgs) -> anyhow::Result<()> {
    let model = load_model(&args.model).context("model load failed")?;
    let hist = branch_histogram(&model.branch_set, args.metric.into(), args.bins)
        .context("histogram failed")?;
    let csv = histogram_csv(&hist);
    write_csv_output(args.out.as_deref(), &csv).context("persistence failed")?;
    Ok(())
}

pub fn write_csv_output(out: Option<&std::path::Path>, csv: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, csv)?;
            println!("csv written to {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}
