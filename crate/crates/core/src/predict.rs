//! Branch-vote prediction with a fallback decision for uncovered inputs.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::branches::BranchSet;
use crate::dataset::Dataset;
use crate::error::{CrfError, Result};
use crate::forest::{argmax_lowest, LeafLabel, Task};
use crate::seed::derive_seed;

/// How to pick a fallback policy from training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackKind {
    RandomUniform { seed: u64 },
    MajorityClass,
    NearestClassCentroid,
}

/// The decision function g(x) applied when no branch covers an input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FallbackPolicy {
    /// Uniform class draw, deterministic per (seed, query ordinal).
    RandomUniform { seed: u64, class_count: usize },
    /// The training set's modal class (ties to the lowest index).
    MajorityClass { label: usize },
    /// Nearest per-class feature-mean vector under Euclidean distance.
    NearestClassCentroid { centroids: Vec<Vec<f64>> },
}

impl FallbackPolicy {
    fn decide(&self, x: &[f64], ordinal: u64) -> usize {
        match self {
            FallbackPolicy::RandomUniform { seed, class_count } => {
                let mut rng = StdRng::seed_from_u64(derive_seed(*seed, ordinal));
                rng.random_range(0..*class_count)
            }
            FallbackPolicy::MajorityClass { label } => *label,
            FallbackPolicy::NearestClassCentroid { centroids } => {
                let mut best = 0usize;
                let mut best_dist = f64::INFINITY;
                for (class, centroid) in centroids.iter().enumerate() {
                    let dist: f64 = centroid.iter().zip(x).map(|(c, v)| (c - v) * (c - v)).sum();
                    if dist < best_dist {
                        best_dist = dist;
                        best = class;
                    }
                }
                best
            }
        }
    }
}

/// Derive a fallback policy from labeled training data.
pub fn build_fallback(d: &Dataset, kind: FallbackKind) -> Result<FallbackPolicy> {
    if d.n_rows() == 0 {
        return Err(CrfError::EmptyDataset);
    }
    let class_count = d.class_count().ok_or_else(|| {
        CrfError::TaskMismatch("fallback policies are built from class labels".into())
    })?;
    match kind {
        FallbackKind::RandomUniform { seed } => {
            Ok(FallbackPolicy::RandomUniform { seed, class_count })
        }
        FallbackKind::MajorityClass => {
            let mut counts = vec![0usize; class_count];
            for &l in d.class_indices().unwrap() {
                counts[l] += 1;
            }
            Ok(FallbackPolicy::MajorityClass {
                label: argmax_lowest(&counts),
            })
        }
        FallbackKind::NearestClassCentroid => {
            let p = d.feature_count();
            let mut sums = vec![vec![0.0f64; p]; class_count];
            let mut counts = vec![0usize; class_count];
            for r in 0..d.n_rows() {
                let class = d.class_of(r);
                counts[class] += 1;
                for (s, v) in sums[class].iter_mut().zip(d.row(r)) {
                    *s += v;
                }
            }
            if let Some(empty) = counts.iter().position(|&c| c == 0) {
                return Err(CrfError::InvalidParameter(format!(
                    "class {empty} has no samples; centroid undefined"
                )));
            }
            let centroids = sums
                .into_iter()
                .zip(&counts)
                .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
                .collect();
            Ok(FallbackPolicy::NearestClassCentroid { centroids })
        }
    }
}

/// One prediction: the label, how many branches covered the input (J'),
/// the per-class vote counts, and whether the fallback decided.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutput {
    pub label: LeafLabel,
    /// Number of covering branches.
    pub covering: usize,
    pub votes: Vec<usize>,
    pub used_fallback: bool,
}

/// The deployable model: a (possibly pruned) branch set plus a fallback.
#[derive(Debug, Serialize, Deserialize)]
pub struct CrfModel {
    pub branch_set: BranchSet,
    pub fallback: FallbackPolicy,
    pub task: Task,
    pub class_count: Option<usize>,
    pub feature_count: usize,
    /// Global training-target mean; the regression fallback value.
    pub target_mean: Option<f64>,
    #[serde(skip, default)]
    fallback_ordinal: AtomicU64,
}

/// Batch prediction metrics over a labeled dataset.
#[derive(Debug, Clone)]
pub struct BatchMetrics {
    pub outputs: Vec<PredictionOutput>,
    pub accuracy: f64,
    pub fallback_rate: f64,
    /// Mean number of covering branches per input.
    pub mean_covering: f64,
}

impl CrfModel {
    pub fn classification(branch_set: BranchSet, fallback: FallbackPolicy) -> Result<Self> {
        let class_count = branch_set
            .class_count
            .ok_or_else(|| CrfError::TaskMismatch("branch set carries no class count".into()))?;
        let feature_count = branch_set.feature_count;
        match &fallback {
            FallbackPolicy::RandomUniform { class_count: c, .. } if *c != class_count => {
                return Err(CrfError::InvalidParameter(
                    "fallback class count does not match the branch set".into(),
                ))
            }
            FallbackPolicy::MajorityClass { label } if *label >= class_count => {
                return Err(CrfError::InvalidParameter(
                    "fallback majority label out of class range".into(),
                ))
            }
            FallbackPolicy::NearestClassCentroid { centroids }
                if (centroids.len() != class_count
                    || centroids.iter().any(|c| c.len() != feature_count)) =>
            {
                return Err(CrfError::InvalidParameter(
                    "fallback centroids do not match the branch set shape".into(),
                ));
            }
            _ => {}
        }
        Ok(Self {
            branch_set,
            fallback,
            task: Task::Classification,
            class_count: Some(class_count),
            feature_count,
            target_mean: None,
            fallback_ordinal: AtomicU64::new(0),
        })
    }

    pub fn regression(branch_set: BranchSet, target_mean: f64) -> Result<Self> {
        if !target_mean.is_finite() {
            return Err(CrfError::InvalidParameter(
                "regression fallback mean must be finite".into(),
            ));
        }
        let feature_count = branch_set.feature_count;
        Ok(Self {
            branch_set,
            fallback: FallbackPolicy::MajorityClass { label: 0 }, // unused in regression
            task: Task::Regression,
            class_count: None,
            feature_count,
            target_mean: Some(target_mean),
            fallback_ordinal: AtomicU64::new(0),
        })
    }

    fn check_dims(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_count {
            return Err(CrfError::DimensionMismatch {
                expected: self.feature_count,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Branch-vote classification. With at least one covering branch the
    /// label is the plurality of covering-branch leaf labels (ties to the
    /// lowest class); otherwise the fallback decides and is flagged.
    pub fn classify(&self, x: &[f64]) -> Result<PredictionOutput> {
        let ordinal = self.fallback_ordinal.fetch_add(1, Ordering::Relaxed);
        self.classify_with_ordinal(x, ordinal)
    }

    /// Same as [`classify`](Self::classify) with a caller-supplied fallback
    /// ordinal, for deterministic batch use.
    pub fn classify_with_ordinal(&self, x: &[f64], ordinal: u64) -> Result<PredictionOutput> {
        if self.task != Task::Classification {
            return Err(CrfError::TaskMismatch(
                "classify called on a regression model".into(),
            ));
        }
        self.check_dims(x)?;
        let class_count = self.class_count.expect("classification model");
        let mut votes = vec![0usize; class_count];
        let mut covering = 0usize;
        for branch in &self.branch_set.branches {
            if branch.covers(x) {
                match branch.leaf_label {
                    LeafLabel::Class(c) => votes[c] += 1,
                    LeafLabel::Value(_) => {
                        return Err(CrfError::TaskMismatch(
                            "regression branch in a classification model".into(),
                        ))
                    }
                }
                covering += 1;
            }
        }
        if covering > 0 {
            Ok(PredictionOutput {
                label: LeafLabel::Class(argmax_lowest(&votes)),
                covering,
                votes,
                used_fallback: false,
            })
        } else {
            Ok(PredictionOutput {
                label: LeafLabel::Class(self.fallback.decide(x, ordinal)),
                covering: 0,
                votes,
                used_fallback: true,
            })
        }
    }

    /// Branch-average regression: the mean leaf value over covering
    /// branches, or the training-target mean when nothing covers.
    pub fn regress(&self, x: &[f64]) -> Result<PredictionOutput> {
        if self.task != Task::Regression {
            return Err(CrfError::TaskMismatch(
                "regress called on a classification model".into(),
            ));
        }
        self.check_dims(x)?;
        let mut covering = 0usize;
        let mut sum = 0.0f64;
        for branch in &self.branch_set.branches {
            if branch.covers(x) {
                match branch.leaf_label {
                    LeafLabel::Value(v) => sum += v,
                    LeafLabel::Class(_) => {
                        return Err(CrfError::TaskMismatch(
                            "classification branch in a regression model".into(),
                        ))
                    }
                }
                covering += 1;
            }
        }
        if covering > 0 {
            Ok(PredictionOutput {
                label: LeafLabel::Value(sum / covering as f64),
                covering,
                votes: Vec::new(),
                used_fallback: false,
            })
        } else {
            Ok(PredictionOutput {
                label: LeafLabel::Value(self.target_mean.expect("regression model")),
                covering: 0,
                votes: Vec::new(),
                used_fallback: true,
            })
        }
    }

    /// Classify every row; fallback ordinals are the row indices, so the
    /// result does not depend on evaluation order.
    pub fn classify_batch(&self, d: &Dataset) -> Result<BatchMetrics> {
        if !d.is_classification() {
            return Err(CrfError::TaskMismatch(
                "classify_batch needs a labeled classification dataset".into(),
            ));
        }
        let outputs: Vec<PredictionOutput> = (0..d.n_rows())
            .into_par_iter()
            .map(|r| self.classify_with_ordinal(d.row(r), r as u64))
            .collect::<Result<_>>()?;

        let n = d.n_rows() as f64;
        let correct = outputs
            .iter()
            .enumerate()
            .filter(|(r, o)| o.label == LeafLabel::Class(d.class_of(*r)))
            .count();
        let fallbacks = outputs.iter().filter(|o| o.used_fallback).count();
        let covering_sum: usize = outputs.iter().map(|o| o.covering).sum();
        Ok(BatchMetrics {
            accuracy: correct as f64 / n,
            fallback_rate: fallbacks as f64 / n,
            mean_covering: covering_sum as f64 / n,
            outputs,
        })
    }
}

/// `row_index,predicted,actual,J_prime,used_fallback` CSV for a batch run.
pub fn batch_csv(metrics: &BatchMetrics, d: &Dataset) -> String {
    let mut out = String::from("row_index,predicted,actual,J_prime,used_fallback\n");
    for (r, o) in metrics.outputs.iter().enumerate() {
        let predicted = match o.label {
            LeafLabel::Class(c) => c.to_string(),
            LeafLabel::Value(v) => v.to_string(),
        };
        out.push_str(&format!(
            "{r},{predicted},{},{},{}\n",
            d.class_of(r),
            o.covering,
            o.used_fallback
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branches::{decompose_to_branches, Branch, BranchSet, SplitPredicate};
    use crate::dataset::Dataset;
    use crate::forest::{fit_forest, ForestConfig};

    fn six_points() -> Dataset {
        Dataset::classification(
            vec![1.0, 2.0, 3.0, 10.0, 11.0, 12.0],
            1,
            vec![0, 0, 0, 1, 1, 1],
            2,
        )
        .unwrap()
    }

    fn branch(predicates: Vec<SplitPredicate>, class: usize) -> Branch {
        Branch {
            tree_index: 0,
            branch_index: 0,
            predicates,
            leaf_label: LeafLabel::Class(class),
            stats: None,
        }
    }

    fn set_of(branches: Vec<Branch>, class_count: usize, p: usize) -> BranchSet {
        BranchSet {
            branches,
            tree_count: 1,
            feature_count: p,
            class_count: Some(class_count),
            bootstrap_index_sets: vec![],
            evaluation_scope: None,
        }
    }

    #[test]
    fn classify_majority_of_covering_branches() {
        let bs = set_of(
            vec![branch(vec![], 0), branch(vec![], 0), branch(vec![], 1)],
            2,
            1,
        );
        let model =
            CrfModel::classification(bs, FallbackPolicy::MajorityClass { label: 1 }).unwrap();
        let out = model.classify(&[0.0]).unwrap();
        assert_eq!(out.label, LeafLabel::Class(0));
        assert_eq!(out.covering, 3);
        assert_eq!(out.votes, vec![2, 1]);
        assert!(!out.used_fallback);
    }

    #[test]
    fn classify_tie_goes_to_lowest_class() {
        let bs = set_of(vec![branch(vec![], 1), branch(vec![], 0)], 2, 1);
        let model =
            CrfModel::classification(bs, FallbackPolicy::MajorityClass { label: 1 }).unwrap();
        assert_eq!(model.classify(&[0.0]).unwrap().label, LeafLabel::Class(0));
    }

    #[test]
    fn classify_falls_back_when_nothing_covers() {
        let bs = set_of(vec![], 2, 1);
        let model =
            CrfModel::classification(bs, FallbackPolicy::MajorityClass { label: 0 }).unwrap();
        let out = model.classify(&[5.0]).unwrap();
        assert_eq!(out.label, LeafLabel::Class(0));
        assert_eq!(out.covering, 0);
        assert!(out.used_fallback);
        assert_eq!(out.votes, vec![0, 0]);
    }

    #[test]
    fn classify_unpruned_six_point_model() {
        let d = six_points();
        let config = ForestConfig {
            n_trees: 1,
            mtry: Some(1),
            seed: 0,
            ..ForestConfig::default()
        };
        let forest = fit_forest(&d, &config).unwrap();
        let bs = decompose_to_branches(&forest);
        let fallback = build_fallback(&d, FallbackKind::MajorityClass).unwrap();
        let model = CrfModel::classification(bs, fallback).unwrap();
        let out = model.classify(&[11.0]).unwrap();
        assert_eq!(out.covering, 1);
        assert_eq!(
            out.label,
            LeafLabel::Class(
                match crate::forest::predict_tree(&forest.trees[0], &[11.0]) {
                    LeafLabel::Class(c) => c,
                    _ => unreachable!(),
                }
            )
        );
    }

    #[test]
    fn classify_rejects_dimension_mismatch() {
        let bs = set_of(vec![branch(vec![], 0)], 2, 2);
        let model =
            CrfModel::classification(bs, FallbackPolicy::MajorityClass { label: 0 }).unwrap();
        assert!(matches!(
            model.classify(&[1.0]),
            Err(CrfError::DimensionMismatch {
                expected: 2,
                actual: 1
            })
        ));
    }

    #[test]
    fn regress_averages_covering_leaf_values() {
        let mut b1 = branch(vec![], 0);
        b1.leaf_label = LeafLabel::Value(2.0);
        let mut b2 = branch(vec![], 0);
        b2.leaf_label = LeafLabel::Value(4.0);
        let mut bs = set_of(vec![b1, b2], 2, 1);
        bs.class_count = None;
        let model = CrfModel::regression(bs, 9.0).unwrap();
        let out = model.regress(&[0.0]).unwrap();
        assert_eq!(out.label, LeafLabel::Value(3.0));
        assert_eq!(out.covering, 2);

        let single = {
            let mut b = branch(vec![], 0);
            b.leaf_label = LeafLabel::Value(7.5);
            let mut bs = set_of(vec![b], 2, 1);
            bs.class_count = None;
            CrfModel::regression(bs, 9.0).unwrap()
        };
        assert_eq!(single.regress(&[0.0]).unwrap().label, LeafLabel::Value(7.5));
    }

    #[test]
    fn regress_falls_back_to_target_mean() {
        let mut bs = set_of(vec![], 2, 1);
        bs.class_count = None;
        let model = CrfModel::regression(bs, 9.0).unwrap();
        let out = model.regress(&[0.0]).unwrap();
        assert_eq!(out.label, LeafLabel::Value(9.0));
        assert!(out.used_fallback);
    }

    #[test]
    fn task_mismatch_between_classify_and_regress() {
        let bs = set_of(vec![], 2, 1);
        let model =
            CrfModel::classification(bs, FallbackPolicy::MajorityClass { label: 0 }).unwrap();
        assert!(model.regress(&[0.0]).is_err());

        let mut bs = set_of(vec![], 2, 1);
        bs.class_count = None;
        let model = CrfModel::regression(bs, 0.0).unwrap();
        assert!(model.classify(&[0.0]).is_err());
    }

    #[test]
    fn build_fallback_majority_mode() {
        let d = Dataset::classification(vec![1.0, 2.0, 3.0], 1, vec![0, 0, 1], 2).unwrap();
        let f = build_fallback(&d, FallbackKind::MajorityClass).unwrap();
        assert_eq!(f, FallbackPolicy::MajorityClass { label: 0 });
    }

    #[test]
    fn build_fallback_centroid_distance_decision() {
        let d =
            Dataset::classification(vec![-0.5, 0.5, 9.5, 10.5], 1, vec![0, 0, 1, 1], 2).unwrap();
        let f = build_fallback(&d, FallbackKind::NearestClassCentroid).unwrap();
        match &f {
            FallbackPolicy::NearestClassCentroid { centroids } => {
                assert_eq!(centroids.len(), 2);
                assert!((centroids[0][0] - 0.0).abs() < 1e-12);
                assert!((centroids[1][0] - 10.0).abs() < 1e-12);
            }
            _ => panic!("expected centroids"),
        }
        assert_eq!(f.decide(&[2.0], 0), 0);
        assert_eq!(f.decide(&[7.0], 0), 1);
    }

    #[test]
    fn random_uniform_fallback_is_deterministic_per_ordinal() {
        let d = six_points();
        let f = build_fallback(&d, FallbackKind::RandomUniform { seed: 5 }).unwrap();
        let first: Vec<usize> = (0..20).map(|i| f.decide(&[0.0], i)).collect();
        let second: Vec<usize> = (0..20).map(|i| f.decide(&[0.0], i)).collect();
        assert_eq!(first, second);
        assert!(first.contains(&0) && first.contains(&1));
    }

    #[test]
    fn batch_metrics_on_unpruned_model() {
        let d = six_points();
        let config = ForestConfig {
            n_trees: 3,
            mtry: Some(1),
            seed: 8,
            ..ForestConfig::default()
        };
        let forest = fit_forest(&d, &config).unwrap();
        let bs = decompose_to_branches(&forest);
        let fallback = build_fallback(&d, FallbackKind::NearestClassCentroid).unwrap();
        let model = CrfModel::classification(bs, fallback).unwrap();
        let metrics = model.classify_batch(&d).unwrap();
        assert_eq!(metrics.fallback_rate, 0.0);
        assert_eq!(metrics.accuracy, 1.0);
        assert_eq!(metrics.mean_covering, 3.0);
        for (r, o) in metrics.outputs.iter().enumerate() {
            assert_eq!(o.votes.iter().sum::<usize>(), o.covering);
            assert_eq!(o.used_fallback, o.covering == 0);
            assert_eq!(o.label, LeafLabel::Class(d.class_of(r)));
        }
    }

    #[test]
    fn batch_with_empty_branch_set_always_falls_back() {
        let d = six_points();
        let bs = set_of(vec![], 2, 1);
        let model =
            CrfModel::classification(bs, FallbackPolicy::MajorityClass { label: 0 }).unwrap();
        let metrics = model.classify_batch(&d).unwrap();
        assert_eq!(metrics.fallback_rate, 1.0);
        assert_eq!(metrics.accuracy, 0.5); // majority class matches half the rows
    }

    #[test]
    fn batch_csv_shape() {
        let d = six_points();
        let bs = set_of(vec![branch(vec![], 0)], 2, 1);
        let model =
            CrfModel::classification(bs, FallbackPolicy::MajorityClass { label: 0 }).unwrap();
        let metrics = model.classify_batch(&d).unwrap();
        let csv = batch_csv(&metrics, &d);
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[0], "row_index,predicted,actual,J_prime,used_fallback");
        assert_eq!(lines[1], "0,0,0,1,false");
    }
}
