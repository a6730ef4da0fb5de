//! Grid experiments comparing the pruned branch model against the plain
//! forest vote across cluster counts, tree counts, criteria, and thresholds.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use clap::Args;

use crf_core::branches::{
    crossbreed_prune, decompose_to_branches, evaluate_branch_stats, BranchMetric, EvaluationScope,
    PruneCriterion,
};
use crf_core::dataset::{generate_synthetic, train_test_split, SyntheticSpec};
use crf_core::forest::{fit_forest, predict_forest, ForestConfig, Task};
use crf_core::predict::{build_fallback, CrfModel};
use crf_core::seed::derive_seed;

use crate::commands::{parse_f64_list, parse_usize_list, write_csv_output, FallbackChoice};

/// One sweep grid. Every cell owns a seed derived from `seed`, so the whole
/// report is a pure function of this value.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub tree_counts: Vec<usize>,
    pub clusters_per_class: Vec<usize>,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_informative: usize,
    pub n_classes: usize,
    pub criteria: Vec<BranchMetric>,
    pub taus: Vec<f64>,
    pub repetitions: usize,
    pub mtry: Option<usize>,
    pub min_leaf_size: usize,
    pub max_depth: Option<usize>,
    pub fallback: FallbackChoice,
    /// Measure mean single-input prediction wall time. Off by default so
    /// the report CSV stays byte-reproducible.
    pub timing: bool,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            tree_counts: vec![1, 10, 20, 30, 40, 50],
            clusters_per_class: vec![1, 5, 10],
            n_samples: 1000,
            n_features: 20,
            n_informative: 10,
            n_classes: 2,
            criteria: vec![BranchMetric::Accuracy],
            taus: vec![0.9],
            repetitions: 1,
            mtry: None,
            min_leaf_size: 1,
            max_depth: None,
            fallback: FallbackChoice::Centroid,
            timing: false,
            seed: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.tree_counts.is_empty()
            || self.clusters_per_class.is_empty()
            || self.criteria.is_empty()
            || self.taus.is_empty()
            || self.repetitions == 0
        {
            anyhow::bail!("sweep lists must be nonempty and repetitions >= 1");
        }
        Ok(())
    }
}

/// Measured outcome of one successful cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    pub rf_test_accuracy: f64,
    pub crf_test_accuracy: f64,
    pub branches_before: usize,
    pub branches_after: usize,
    pub predicates_before: usize,
    pub predicates_after: usize,
    pub rf_node_count: usize,
    pub fallback_rate: f64,
    pub rf_predict_us: Option<f64>,
    pub crf_predict_us: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub criterion: BranchMetric,
    pub tau: f64,
    pub rep: usize,
    pub clusters: usize,
    pub trees: usize,
    pub status: String,
    pub metrics: Option<CellMetrics>,
}

/// Run every cell of the grid in deterministic order. Cell failures are
/// recorded in their row and do not abort the remaining cells.
pub fn run_sweep(spec: &SweepSpec) -> anyhow::Result<Vec<SweepRow>> {
    spec.validate()?;
    let mut rows = Vec::new();
    for &criterion in &spec.criteria {
        for &tau in &spec.taus {
            for rep in 0..spec.repetitions {
                for &clusters in &spec.clusters_per_class {
                    for &trees in &spec.tree_counts {
                        let outcome = run_cell(spec, criterion, tau, rep, clusters, trees);
                        let (status, metrics) = match outcome {
                            Ok(m) => ("ok".to_string(), Some(m)),
                            Err(e) => (format!("error: {e:#}").replace(',', ";"), None),
                        };
                        rows.push(SweepRow {
                            criterion,
                            tau,
                            rep,
                            clusters,
                            trees,
                            status,
                            metrics,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

fn run_cell(
    spec: &SweepSpec,
    criterion: BranchMetric,
    tau: f64,
    rep: usize,
    clusters: usize,
    trees: usize,
) -> anyhow::Result<CellMetrics> {
    // The dataset depends on (seed, rep, clusters) only, so all tree counts
    // of one panel see the same data.
    let rep_seed = derive_seed(spec.seed, 1000 + rep as u64);
    let data_seed = derive_seed(rep_seed, 100 + clusters as u64);
    let data = generate_synthetic(&SyntheticSpec {
        n_samples: spec.n_samples,
        n_features: spec.n_features,
        n_informative: spec.n_informative,
        n_classes: spec.n_classes,
        n_clusters_per_class: clusters,
        seed: data_seed,
    })
    .context("generation failed")?;
    let pair = train_test_split(&data, 0.75, derive_seed(data_seed, 2)).context("split failed")?;

    let config = ForestConfig {
        n_trees: trees,
        mtry: spec.mtry,
        min_leaf_size: spec.min_leaf_size,
        max_depth: spec.max_depth,
        task: Task::Classification,
        seed: derive_seed(data_seed, 3 + trees as u64),
    };
    let forest = fit_forest(&pair.train, &config).context("training failed")?;

    let test = &pair.test;
    let mut rf_correct = 0usize;
    for r in 0..test.n_rows() {
        let vote = predict_forest(&forest, test.row(r)).context("prediction failed")?;
        if vote == test.class_of(r) {
            rf_correct += 1;
        }
    }
    let rf_test_accuracy = rf_correct as f64 / test.n_rows() as f64;

    let branch_set = decompose_to_branches(&forest);
    let evaluated =
        evaluate_branch_stats(&branch_set, &pair.train, EvaluationScope::FullTrainingSet)
            .context("evaluation failed")?;
    let pruned = crossbreed_prune(&evaluated, &PruneCriterion::new(criterion, tau)?)
        .context("pruning failed")?;
    let fallback = build_fallback(
        &pair.train,
        spec.fallback.to_kind(derive_seed(data_seed, 4)),
    )
    .context("fallback construction failed")?;
    let model = CrfModel::classification(pruned, fallback).context("model assembly failed")?;
    let metrics = model.classify_batch(test).context("prediction failed")?;

    let (rf_predict_us, crf_predict_us) = if spec.timing {
        let t0 = Instant::now();
        for r in 0..test.n_rows() {
            let _ = predict_forest(&forest, test.row(r))?;
        }
        let rf = t0.elapsed().as_secs_f64() * 1e6 / test.n_rows() as f64;
        let t1 = Instant::now();
        for r in 0..test.n_rows() {
            let _ = model.classify_with_ordinal(test.row(r), r as u64)?;
        }
        let crf = t1.elapsed().as_secs_f64() * 1e6 / test.n_rows() as f64;
        (Some(rf), Some(crf))
    } else {
        (None, None)
    };

    Ok(CellMetrics {
        rf_test_accuracy,
        crf_test_accuracy: metrics.accuracy,
        branches_before: evaluated.len(),
        branches_after: model.branch_set.len(),
        predicates_before: evaluated.total_predicates(),
        predicates_after: model.branch_set.total_predicates(),
        rf_node_count: forest.node_count(),
        fallback_rate: metrics.fallback_rate,
        rf_predict_us,
        crf_predict_us,
    })
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "criterion,tau,rep,clusters,trees,status,rf_test_accuracy,crf_test_accuracy,\
         branches_before,branches_after,predicates_before,predicates_after,rf_node_count,\
         fallback_rate,rf_predict_us,crf_predict_us\n",
    );
    for row in rows {
        let head = format!(
            "{},{},{},{},{},{}",
            row.criterion, row.tau, row.rep, row.clusters, row.trees, row.status
        );
        match &row.metrics {
            Some(m) => {
                let fmt_us = |v: Option<f64>| v.map(|u| u.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{head},{},{},{},{},{},{},{},{},{},{}\n",
                    m.rf_test_accuracy,
                    m.crf_test_accuracy,
                    m.branches_before,
                    m.branches_after,
                    m.predicates_before,
                    m.predicates_after,
                    m.rf_node_count,
                    m.fallback_rate,
                    fmt_us(m.rf_predict_us),
                    fmt_us(m.crf_predict_us)
                ));
            }
            None => out.push_str(&format!("{head},,,,,,,,,,\n")),
        }
    }
    out
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Base synthetic data: n_samples,n_features,n_informative,n_classes.
    #[arg(long, default_value = "1000,20,10,2")]
    pub synthetic: String,

    #[arg(long, default_value = "1,10,20,30,40,50")]
    pub tree_counts: String,

    /// Clusters-per-class settings to sweep.
    #[arg(long, default_value = "1,5,10")]
    pub clusters: String,

    /// Comma-separated criteria: accuracy, impact.
    #[arg(long, default_value = "accuracy")]
    pub criteria: String,

    #[arg(long, default_value = "0.9")]
    pub taus: String,

    /// Repetitions per cell, each with its own derived seed.
    #[arg(long, default_value_t = 1)]
    pub reps: usize,

    #[arg(long)]
    pub mtry: Option<usize>,

    #[arg(long, default_value_t = 1)]
    pub min_leaf: usize,

    #[arg(long)]
    pub max_depth: Option<usize>,

    #[arg(long, value_enum, default_value_t = FallbackChoice::Centroid)]
    pub fallback: FallbackChoice,

    /// Measure prediction wall time (makes the report CSV nondeterministic).
    #[arg(long)]
    pub timing: bool,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Report CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl SweepArgs {
    pub fn to_spec(&self) -> anyhow::Result<SweepSpec> {
        let base = parse_usize_list(&self.synthetic).context("report failed")?;
        if base.len() != 4 {
            anyhow::bail!(
                "report failed: --synthetic takes 4 values: n_samples,n_features,n_informative,n_classes"
            );
        }
        let criteria = self
            .criteria
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| match t.trim() {
                "accuracy" => Ok(BranchMetric::Accuracy),
                "impact" => Ok(BranchMetric::ImpactFactor),
                other => Err(anyhow::anyhow!("unknown criterion '{other}'")),
            })
            .collect::<anyhow::Result<Vec<_>>>()
            .context("report failed")?;
        Ok(SweepSpec {
            tree_counts: parse_usize_list(&self.tree_counts).context("report failed")?,
            clusters_per_class: parse_usize_list(&self.clusters).context("report failed")?,
            n_samples: base[0],
            n_features: base[1],
            n_informative: base[2],
            n_classes: base[3],
            criteria,
            taus: parse_f64_list(&self.taus).context("report failed")?,
            repetitions: self.reps,
            mtry: self.mtry,
            min_leaf_size: self.min_leaf,
            max_depth: self.max_depth,
            fallback: self.fallback,
            timing: self.timing,
            seed: self.seed,
        })
    }
}

pub fn run_sweep_cmd(args: &SweepArgs) -> anyhow::Result<()> {
    let spec = args.to_spec()?;
    let rows = run_sweep(&spec).context("report failed")?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    let csv = sweep_csv(&rows);
    write_csv_output(args.out.as_deref(), &csv).context("persistence failed")?;
    eprintln!("sweep finished: {} cells, {failed} failed", rows.len());
    if failed > 0 {
        anyhow::bail!("report failed: {failed} sweep cells reported errors");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> SweepSpec {
        SweepSpec {
            tree_counts: vec![1, 3],
            clusters_per_class: vec![1, 2],
            n_samples: 80,
            n_features: 6,
            n_informative: 4,
            n_classes: 2,
            taus: vec![0.5],
            seed: 9,
            ..SweepSpec::default()
        }
    }

    #[test]
    fn sweep_emits_full_grid_in_order() {
        let rows = run_sweep(&tiny_spec()).unwrap();
        assert_eq!(rows.len(), 4);
        let cells: Vec<(usize, usize)> = rows.iter().map(|r| (r.clusters, r.trees)).collect();
        assert_eq!(cells, vec![(1, 1), (1, 3), (2, 1), (2, 3)]);
        assert!(rows.iter().all(|r| r.status == "ok"));
    }

    #[test]
    fn sweep_rows_satisfy_pruning_subset_bounds() {
        for row in run_sweep(&tiny_spec()).unwrap() {
            let m = row.metrics.expect("cell succeeded");
            assert!(m.branches_after <= m.branches_before);
            assert!(m.predicates_after <= m.predicates_before);
            assert!(m.rf_test_accuracy >= 0.0 && m.rf_test_accuracy <= 1.0);
        }
    }

    #[test]
    fn sweep_repetitions_use_distinct_seeds() {
        let spec = SweepSpec {
            repetitions: 2,
            tree_counts: vec![3],
            clusters_per_class: vec![1],
            n_samples: 60,
            n_features: 5,
            n_informative: 3,
            n_classes: 2,
            seed: 1,
            ..SweepSpec::default()
        };
        let rows = run_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 2);
        let a = rows[0].metrics.as_ref().unwrap();
        let b = rows[1].metrics.as_ref().unwrap();
        assert_ne!(
            (a.branches_before, a.rf_test_accuracy.to_bits()),
            (b.branches_before, b.rf_test_accuracy.to_bits())
        );
    }

    #[test]
    fn timing_columns_stay_empty_without_the_flag() {
        let rows = run_sweep(&tiny_spec()).unwrap();
        let csv = sweep_csv(&rows);
        for line in csv.lines().skip(1) {
            assert!(line.ends_with(",,"), "{line}");
        }
        assert!(rows
            .iter()
            .all(|r| r.metrics.as_ref().unwrap().rf_predict_us.is_none()));
    }

    #[test]
    fn failed_cells_are_isolated() {
        let spec = SweepSpec {
            // 2^2 informative vertices cannot host 2x3 clusters -> cell error,
            // while the 1-cluster cells still succeed.
            clusters_per_class: vec![1, 3],
            tree_counts: vec![2],
            n_samples: 40,
            n_features: 4,
            n_informative: 2,
            n_classes: 2,
            seed: 3,
            ..SweepSpec::default()
        };
        let rows = run_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].status, "ok");
        assert!(rows[1].status.starts_with("error:"), "{}", rows[1].status);
        assert!(rows[1].metrics.is_none());
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
    }
}
