//! Bagged random-subspace forest grown by binary recursive partitioning.

use rand::rngs::StdRng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{bootstrap_sample, Dataset, Labels};
use crate::error::{CrfError, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Classification,
    Regression,
}

/// Forest growth parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Candidate features drawn per node; `None` means `floor(sqrt(p))`.
    pub mtry: Option<usize>,
    /// Nodes with fewer rows than this become leaves. 1 grows to purity.
    pub min_leaf_size: usize,
    pub max_depth: Option<usize>,
    pub task: Task,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 50,
            mtry: None,
            min_leaf_size: 1,
            max_depth: None,
            task: Task::Classification,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self, feature_count: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(CrfError::InvalidParameter("n_trees must be >= 1".into()));
        }
        if self.min_leaf_size == 0 {
            return Err(CrfError::InvalidParameter(
                "min_leaf_size must be >= 1".into(),
            ));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > feature_count {
                return Err(CrfError::InvalidParameter(format!(
                    "mtry {m} out of range [1, {feature_count}]"
                )));
            }
        }
        Ok(())
    }

    /// mtry with the square-root default applied.
    pub fn resolved_mtry(&self, feature_count: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| ((feature_count as f64).sqrt().floor() as usize).max(1))
    }
}

/// Leaf prediction: a class index or a real value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LeafLabel {
    Class(usize),
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Internal {
        feature_index: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        label: LeafLabel,
        /// Growing-sample count per class; empty in regression.
        class_counts: Vec<usize>,
        depth: usize,
    },
}

impl TreeNode {
    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => 1 + left.node_count() + right.node_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<TreeNode>,
    pub config: ForestConfig,
    /// Row indices drawn for each tree's bootstrap sample.
    pub bootstrap_index_sets: Vec<Vec<usize>>,
    pub feature_count: usize,
    pub class_count: Option<usize>,
}

impl Forest {
    pub fn node_count(&self) -> usize {
        self.trees.iter().map(TreeNode::node_count).sum()
    }
}

/// Winning split of a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestSplit {
    pub feature_index: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Scan all candidate features and all midpoint thresholds for the split
/// with the greatest impurity decrease (Gini for classification, variance
/// reduction for regression).
///
/// Returns `None` when no split yields two nonempty children with positive
/// gain. Ties break toward the lowest feature index, then lowest threshold.
pub fn best_split(d: &Dataset, rows: &[usize], candidate_features: &[usize]) -> Option<BestSplit> {
    if rows.is_empty() || candidate_features.is_empty() {
        return None;
    }
    let mut candidates = candidate_features.to_vec();
    candidates.sort_unstable();
    candidates.dedup();

    match d.labels() {
        Labels::Classes { class_count, .. } => {
            best_split_classification(d, rows, &candidates, *class_count)
        }
        Labels::Values(_) => best_split_regression(d, rows, &candidates),
    }
}

fn gini(counts: &[usize], total: usize) -> f64 {
    let mut g = 1.0;
    for &c in counts {
        let p = c as f64 / total as f64;
        g -= p * p;
    }
    g
}

fn best_split_classification(
    d: &Dataset,
    rows: &[usize],
    candidates: &[usize],
    class_count: usize,
) -> Option<BestSplit> {
    let n = rows.len();
    let mut total_counts = vec![0usize; class_count];
    for &r in rows {
        total_counts[d.class_of(r)] += 1;
    }
    let parent = gini(&total_counts, n);

    let mut best: Option<BestSplit> = None;
    let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(n);
    for &feat in candidates {
        sorted.clear();
        sorted.extend(rows.iter().map(|&r| (d.value(r, feat), d.class_of(r))));
        sorted.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        let mut left_counts = vec![0usize; class_count];
        let mut right_counts = total_counts.clone();
        for i in 0..n - 1 {
            let (value, class) = sorted[i];
            left_counts[class] += 1;
            right_counts[class] -= 1;
            if value == sorted[i + 1].0 {
                continue;
            }
            let threshold = (value + sorted[i + 1].0) / 2.0;
            let nl = i + 1;
            let nr = n - nl;
            let gain = parent
                - (nl as f64 / n as f64) * gini(&left_counts, nl)
                - (nr as f64 / n as f64) * gini(&right_counts, nr);
            if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                best = Some(BestSplit {
                    feature_index: feat,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

fn variance(targets: &[f64]) -> f64 {
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n
}

fn best_split_regression(d: &Dataset, rows: &[usize], candidates: &[usize]) -> Option<BestSplit> {
    let n = rows.len();
    let all: Vec<f64> = rows.iter().map(|&r| d.target_of(r)).collect();
    let parent = variance(&all);

    let mut best: Option<BestSplit> = None;
    for &feat in candidates {
        let mut sorted: Vec<(f64, f64)> = rows
            .iter()
            .map(|&r| (d.value(r, feat), d.target_of(r)))
            .collect();
        sorted.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        for i in 0..n - 1 {
            if sorted[i].0 == sorted[i + 1].0 {
                continue;
            }
            let threshold = (sorted[i].0 + sorted[i + 1].0) / 2.0;
            let left: Vec<f64> = sorted[..=i].iter().map(|(_, t)| *t).collect();
            let right: Vec<f64> = sorted[i + 1..].iter().map(|(_, t)| *t).collect();
            let gain = parent
                - (left.len() as f64 / n as f64) * variance(&left)
                - (right.len() as f64 / n as f64) * variance(&right);
            if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                best = Some(BestSplit {
                    feature_index: feat,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

/// Grow one tree on `growing_data` by recursive partitioning, drawing mtry
/// candidate features per node from a stream seeded by `tree_seed`.
pub fn fit_tree(growing_data: &Dataset, config: &ForestConfig, tree_seed: u64) -> Result<TreeNode> {
    if growing_data.n_rows() == 0 {
        return Err(CrfError::EmptyDataset);
    }
    config.validate(growing_data.feature_count())?;
    check_task(growing_data, config.task)?;
    let mtry = config.resolved_mtry(growing_data.feature_count());
    let mut rng = StdRng::seed_from_u64(tree_seed);
    let rows: Vec<usize> = (0..growing_data.n_rows()).collect();
    Ok(grow(growing_data, &rows, config, mtry, 0, &mut rng))
}

fn check_task(d: &Dataset, task: Task) -> Result<()> {
    let ok = match task {
        Task::Classification => d.is_classification(),
        Task::Regression => !d.is_classification(),
    };
    if ok {
        Ok(())
    } else {
        Err(CrfError::TaskMismatch(
            "dataset labels do not match the configured task".into(),
        ))
    }
}

fn grow(
    d: &Dataset,
    rows: &[usize],
    config: &ForestConfig,
    mtry: usize,
    depth: usize,
    rng: &mut StdRng,
) -> TreeNode {
    let stop = rows.len() < config.min_leaf_size
        || config.max_depth.is_some_and(|m| depth >= m)
        || is_pure(d, rows);
    if stop {
        return make_leaf(d, rows, depth);
    }

    let mut candidates: Vec<usize> =
        rand::seq::index::sample(rng, d.feature_count(), mtry).into_vec();
    candidates.sort_unstable();

    match best_split(d, rows, &candidates) {
        None => make_leaf(d, rows, depth),
        Some(split) => {
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                .iter()
                .partition(|&&r| d.value(r, split.feature_index) <= split.threshold);
            let left = grow(d, &left_rows, config, mtry, depth + 1, rng);
            let right = grow(d, &right_rows, config, mtry, depth + 1, rng);
            TreeNode::Internal {
                feature_index: split.feature_index,
                threshold: split.threshold,
                left: Box::new(left),
                right: Box::new(right),
            }
        }
    }
}

fn is_pure(d: &Dataset, rows: &[usize]) -> bool {
    match d.labels() {
        Labels::Classes { indices, .. } => {
            let first = indices[rows[0]];
            rows.iter().all(|&r| indices[r] == first)
        }
        Labels::Values(v) => {
            let first = v[rows[0]];
            rows.iter().all(|&r| v[r] == first)
        }
    }
}

fn make_leaf(d: &Dataset, rows: &[usize], depth: usize) -> TreeNode {
    match d.labels() {
        Labels::Classes { class_count, .. } => {
            let mut counts = vec![0usize; *class_count];
            for &r in rows {
                counts[d.class_of(r)] += 1;
            }
            TreeNode::Leaf {
                label: LeafLabel::Class(argmax_lowest(&counts)),
                class_counts: counts,
                depth,
            }
        }
        Labels::Values(_) => {
            let mean = rows.iter().map(|&r| d.target_of(r)).sum::<f64>() / rows.len() as f64;
            TreeNode::Leaf {
                label: LeafLabel::Value(mean),
                class_counts: Vec::new(),
                depth,
            }
        }
    }
}

/// Index of the greatest count; ties go to the lowest index. This is the
/// single tie-break rule shared by leaves, tree votes, and branch votes.
pub fn argmax_lowest(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Grow the whole forest: tree j is fit on its own bootstrap sample with
/// seeds derived from `(config.seed, j)`. Output is identical regardless
/// of how many worker threads run the loop.
pub fn fit_forest(d: &Dataset, config: &ForestConfig) -> Result<Forest> {
    if d.n_rows() == 0 {
        return Err(CrfError::EmptyDataset);
    }
    config.validate(d.feature_count())?;
    check_task(d, config.task)?;

    let grown: Vec<(TreeNode, Vec<usize>)> = (0..config.n_trees)
        .into_par_iter()
        .map(|j| {
            let boot = bootstrap_sample(d, derive_seed(config.seed, 2 * j as u64 + 1))?;
            let tree = fit_tree(&boot.data, config, derive_seed(config.seed, 2 * j as u64))?;
            Ok((tree, boot.source_rows))
        })
        .collect::<Result<_>>()?;

    let (trees, bootstrap_index_sets) = grown.into_iter().unzip();
    Ok(Forest {
        trees,
        config: *config,
        bootstrap_index_sets,
        feature_count: d.feature_count(),
        class_count: d.class_count(),
    })
}

/// Route a sample to a leaf: `value <= threshold` goes left.
pub fn predict_tree(tree: &TreeNode, x: &[f64]) -> LeafLabel {
    let mut node = tree;
    loop {
        match node {
            TreeNode::Leaf { label, .. } => return *label,
            TreeNode::Internal {
                feature_index,
                threshold,
                left,
                right,
            } => {
                node = if x[*feature_index] <= *threshold {
                    left
                } else {
                    right
                };
            }
        }
    }
}

/// Majority vote over per-tree predictions; ties go to the lowest class.
pub fn predict_forest(forest: &Forest, x: &[f64]) -> Result<usize> {
    let class_count = match (forest.config.task, forest.class_count) {
        (Task::Classification, Some(c)) => c,
        _ => {
            return Err(CrfError::TaskMismatch(
                "predict_forest requires a classification forest".into(),
            ))
        }
    };
    if x.len() != forest.feature_count {
        return Err(CrfError::DimensionMismatch {
            expected: forest.feature_count,
            actual: x.len(),
        });
    }
    let mut votes = vec![0usize; class_count];
    for tree in &forest.trees {
        match predict_tree(tree, x) {
            LeafLabel::Class(c) => votes[c] += 1,
            LeafLabel::Value(_) => {
                return Err(CrfError::TaskMismatch(
                    "regression leaf in a classification forest".into(),
                ))
            }
        }
    }
    Ok(argmax_lowest(&votes))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1-D dataset with a clean gap between the two classes.
    pub(crate) fn six_points() -> Dataset {
        Dataset::classification(
            vec![1.0, 2.0, 3.0, 10.0, 11.0, 12.0],
            1,
            vec![0, 0, 0, 1, 1, 1],
            2,
        )
        .unwrap()
    }

    fn purity_config(n_trees: usize, seed: u64) -> ForestConfig {
        ForestConfig {
            n_trees,
            mtry: Some(1),
            min_leaf_size: 1,
            max_depth: None,
            task: Task::Classification,
            seed,
        }
    }

    #[test]
    fn best_split_finds_the_gap() {
        let d = six_points();
        let rows: Vec<usize> = (0..6).collect();
        let s = best_split(&d, &rows, &[0]).unwrap();
        assert_eq!(s.feature_index, 0);
        assert_eq!(s.threshold, 6.5);
        assert!((s.gain - 0.5).abs() < 1e-15);
    }

    #[test]
    fn best_split_absent_on_pure_node() {
        let d = Dataset::classification(vec![1.0, 2.0, 3.0], 1, vec![0, 0, 0], 2).unwrap();
        assert!(best_split(&d, &[0, 1, 2], &[0]).is_none());
    }

    #[test]
    fn best_split_absent_on_constant_features() {
        let d = Dataset::classification(vec![4.0, 4.0, 4.0], 1, vec![0, 1, 0], 2).unwrap();
        assert!(best_split(&d, &[0, 1, 2], &[0]).is_none());
    }

    #[test]
    fn fit_tree_splits_six_points_into_pure_leaves() {
        let d = six_points();
        let tree = fit_tree(&d, &purity_config(1, 0), 7).unwrap();
        match &tree {
            TreeNode::Internal {
                feature_index,
                threshold,
                left,
                right,
            } => {
                assert_eq!(*feature_index, 0);
                assert_eq!(*threshold, 6.5);
                for (child, class) in [(left, 0usize), (right, 1usize)] {
                    match child.as_ref() {
                        TreeNode::Leaf {
                            label,
                            class_counts,
                            ..
                        } => {
                            assert_eq!(*label, LeafLabel::Class(class));
                            assert_eq!(class_counts.iter().sum::<usize>(), 3);
                            assert_eq!(class_counts[class], 3);
                        }
                        _ => panic!("expected leaf"),
                    }
                }
            }
            _ => panic!("expected a split at the root"),
        }
    }

    #[test]
    fn fit_tree_single_class_is_one_leaf() {
        let d = Dataset::classification(vec![1.0, 2.0, 5.0], 1, vec![1, 1, 1], 2).unwrap();
        let tree = fit_tree(&d, &purity_config(1, 0), 3).unwrap();
        assert!(matches!(
            tree,
            TreeNode::Leaf {
                label: LeafLabel::Class(1),
                ..
            }
        ));
    }

    #[test]
    fn fit_tree_depth_zero_is_majority_leaf() {
        let d = six_points();
        let config = ForestConfig {
            max_depth: Some(0),
            ..purity_config(1, 0)
        };
        let tree = fit_tree(&d, &config, 3).unwrap();
        match tree {
            TreeNode::Leaf { label, .. } => assert_eq!(label, LeafLabel::Class(0)), // tie -> lowest
            _ => panic!("expected a single leaf"),
        }
    }

    #[test]
    fn predict_tree_routes_by_inclusive_le() {
        let d = six_points();
        let tree = fit_tree(&d, &purity_config(1, 0), 7).unwrap();
        assert_eq!(predict_tree(&tree, &[2.0]), LeafLabel::Class(0));
        assert_eq!(predict_tree(&tree, &[6.5]), LeafLabel::Class(0)); // boundary goes left
        assert_eq!(predict_tree(&tree, &[11.0]), LeafLabel::Class(1));
    }

    #[test]
    fn predict_forest_majority_and_tie_break() {
        assert_eq!(argmax_lowest(&[2, 1]), 0);
        assert_eq!(argmax_lowest(&[1, 1]), 0);
        assert_eq!(argmax_lowest(&[1, 2]), 1);
    }

    #[test]
    fn single_tree_forest_equals_fit_tree_on_its_bootstrap() {
        let d = six_points();
        let config = purity_config(1, 9);
        let forest = fit_forest(&d, &config).unwrap();
        assert_eq!(forest.trees.len(), 1);
        let boot = bootstrap_sample(&d, derive_seed(config.seed, 1)).unwrap();
        let tree = fit_tree(&boot.data, &config, derive_seed(config.seed, 0)).unwrap();
        assert_eq!(forest.trees[0], tree);
        assert_eq!(forest.bootstrap_index_sets[0], boot.source_rows);
    }

    #[test]
    fn forest_records_one_index_set_per_tree() {
        let d = six_points();
        let forest = fit_forest(&d, &purity_config(10, 4)).unwrap();
        assert_eq!(forest.bootstrap_index_sets.len(), 10);
        assert!(forest
            .bootstrap_index_sets
            .iter()
            .all(|s| s.len() == d.n_rows()));
    }

    #[test]
    fn fit_forest_is_invariant_to_worker_count() {
        let d = crate::dataset::generate_synthetic(&crate::dataset::SyntheticSpec {
            n_samples: 80,
            n_features: 6,
            n_informative: 4,
            n_classes: 2,
            n_clusters_per_class: 1,
            seed: 5,
        })
        .unwrap();
        let config = ForestConfig {
            n_trees: 12,
            seed: 21,
            ..ForestConfig::default()
        };
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| fit_forest(&d, &config).unwrap());
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap()
            .install(|| fit_forest(&d, &config).unwrap());
        assert_eq!(one, many);
    }

    #[test]
    fn predict_forest_rejects_regression_task() {
        let d = Dataset::regression(vec![1.0, 2.0, 3.0, 4.0], 1, vec![0.5, 1.5, 2.5, 3.5]).unwrap();
        let config = ForestConfig {
            n_trees: 2,
            mtry: Some(1),
            task: Task::Regression,
            ..ForestConfig::default()
        };
        let forest = fit_forest(&d, &config).unwrap();
        assert!(matches!(
            predict_forest(&forest, &[1.0]),
            Err(CrfError::TaskMismatch(_))
        ));
    }

    #[test]
    fn regression_tree_predicts_leaf_means() {
        let d = Dataset::regression(
            vec![1.0, 2.0, 3.0, 10.0, 11.0, 12.0],
            1,
            vec![1.0, 1.0, 1.0, 5.0, 5.0, 8.0],
        )
        .unwrap();
        let config = ForestConfig {
            n_trees: 1,
            mtry: Some(1),
            min_leaf_size: 4,
            task: Task::Regression,
            ..ForestConfig::default()
        };
        let tree = fit_tree(&d, &config, 1).unwrap();
        assert_eq!(predict_tree(&tree, &[2.0]), LeafLabel::Value(1.0));
        assert_eq!(predict_tree(&tree, &[11.5]), LeafLabel::Value(6.0));
    }
}
