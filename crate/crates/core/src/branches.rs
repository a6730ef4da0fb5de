//! Branch decomposition of a forest, branch quality statistics, and
//! crossbreed pruning.
//!
//! A branch is the predicate chain from a tree's root to one leaf plus that
//! leaf's label. The flat set of all branches is the deployable model once
//! low-quality branches are pruned away.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{CrfError, Result};
use crate::forest::{Forest, LeafLabel, TreeNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredicateSide {
    /// value <= threshold (matches the tree's left edge)
    Le,
    /// value > threshold
    Gt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPredicate {
    pub feature_index: usize,
    pub threshold: f64,
    pub side: PredicateSide,
}

impl SplitPredicate {
    pub fn matches(&self, x: &[f64]) -> bool {
        match self.side {
            PredicateSide::Le => x[self.feature_index] <= self.threshold,
            PredicateSide::Gt => x[self.feature_index] > self.threshold,
        }
    }
}

/// Quality numbers of a branch over an evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchStats {
    /// Number of evaluation samples the branch covers (k).
    pub covered: usize,
    /// Fraction of covered samples whose label equals the leaf label.
    pub accuracy: f64,
    /// accuracy x covered / evaluation-set size.
    pub impact: f64,
}

impl BranchStats {
    /// A branch that covered nothing carries zero scores and this flag.
    pub fn is_uncovered(&self) -> bool {
        self.covered == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub tree_index: usize,
    /// Leaf ordinal within the source tree (left-to-right).
    pub branch_index: usize,
    /// Compacted predicates: at most one Le and one Gt per feature.
    pub predicates: Vec<SplitPredicate>,
    pub leaf_label: LeafLabel,
    /// `None` until the branch set has been evaluated.
    pub stats: Option<BranchStats>,
}

impl Branch {
    /// True iff every predicate holds for `x`.
    pub fn covers(&self, x: &[f64]) -> bool {
        self.predicates.iter().all(|p| p.matches(x))
    }
}

/// Which rows branch statistics are computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvaluationScope {
    /// Every row of the training set.
    FullTrainingSet,
    /// Only the rows of the owning tree's bootstrap draw (with multiplicity).
    OwnBootstrap,
}

/// The flat branch collection extracted from a forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSet {
    pub branches: Vec<Branch>,
    pub tree_count: usize,
    pub feature_count: usize,
    pub class_count: Option<usize>,
    /// Bootstrap row indices per source tree, kept for OwnBootstrap scope.
    pub bootstrap_index_sets: Vec<Vec<usize>>,
    pub evaluation_scope: Option<EvaluationScope>,
}

impl BranchSet {
    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    pub fn total_predicates(&self) -> usize {
        self.branches.iter().map(|b| b.predicates.len()).sum()
    }

    pub fn stats_populated(&self) -> bool {
        self.branches.iter().all(|b| b.stats.is_some())
    }
}

/// Metric a pruning threshold is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchMetric {
    Accuracy,
    ImpactFactor,
}

impl std::fmt::Display for BranchMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BranchMetric::Accuracy => write!(f, "accuracy"),
            BranchMetric::ImpactFactor => write!(f, "impact"),
        }
    }
}

/// Crossbreeding rule: keep branches whose metric is >= the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneCriterion {
    pub kind: BranchMetric,
    pub threshold: f64,
}

impl PruneCriterion {
    pub fn new(kind: BranchMetric, threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(CrfError::InvalidParameter(format!(
                "prune threshold {threshold} outside [0, 1]"
            )));
        }
        Ok(Self { kind, threshold })
    }
}

/// Decompose every tree into one branch per leaf.
///
/// Predicates are collected root-to-leaf and compacted to per-feature
/// interval bounds; statistics stay unset until evaluated.
pub fn decompose_to_branches(forest: &Forest) -> BranchSet {
    let mut branches = Vec::new();
    for (tree_index, tree) in forest.trees.iter().enumerate() {
        let mut path = Vec::new();
        let mut branch_index = 0usize;
        walk_leaves(tree, &mut path, &mut |path, label| {
            branches.push(Branch {
                tree_index,
                branch_index,
                predicates: compact_predicates(path),
                leaf_label: label,
                stats: None,
            });
            branch_index += 1;
        });
    }
    BranchSet {
        branches,
        tree_count: forest.trees.len(),
        feature_count: forest.feature_count,
        class_count: forest.class_count,
        bootstrap_index_sets: forest.bootstrap_index_sets.clone(),
        evaluation_scope: None,
    }
}

fn walk_leaves(
    node: &TreeNode,
    path: &mut Vec<SplitPredicate>,
    visit: &mut impl FnMut(&[SplitPredicate], LeafLabel),
) {
    match node {
        TreeNode::Leaf { label, .. } => visit(path, *label),
        TreeNode::Internal {
            feature_index,
            threshold,
            left,
            right,
        } => {
            path.push(SplitPredicate {
                feature_index: *feature_index,
                threshold: *threshold,
                side: PredicateSide::Le,
            });
            walk_leaves(left, path, visit);
            path.pop();
            path.push(SplitPredicate {
                feature_index: *feature_index,
                threshold: *threshold,
                side: PredicateSide::Gt,
            });
            walk_leaves(right, path, visit);
            path.pop();
        }
    }
}

/// Collapse a raw predicate chain to the tightest bound per (feature, side),
/// keeping the first-occurrence order of features along the path.
fn compact_predicates(raw: &[SplitPredicate]) -> Vec<SplitPredicate> {
    let mut order: Vec<usize> = Vec::new();
    let mut upper: Vec<(usize, f64)> = Vec::new(); // tightest Le per feature
    let mut lower: Vec<(usize, f64)> = Vec::new(); // tightest Gt per feature
    for p in raw {
        if !order.contains(&p.feature_index) {
            order.push(p.feature_index);
        }
        let store = match p.side {
            PredicateSide::Le => &mut upper,
            PredicateSide::Gt => &mut lower,
        };
        match store.iter_mut().find(|(f, _)| *f == p.feature_index) {
            Some((_, t)) => {
                // Le tightens downward, Gt tightens upward.
                *t = match p.side {
                    PredicateSide::Le => t.min(p.threshold),
                    PredicateSide::Gt => t.max(p.threshold),
                };
            }
            None => store.push((p.feature_index, p.threshold)),
        }
    }
    let mut out = Vec::with_capacity(order.len() * 2);
    for feat in order {
        if let Some(&(_, t)) = lower.iter().find(|(f, _)| *f == feat) {
            out.push(SplitPredicate {
                feature_index: feat,
                threshold: t,
                side: PredicateSide::Gt,
            });
        }
        if let Some(&(_, t)) = upper.iter().find(|(f, _)| *f == feat) {
            out.push(SplitPredicate {
                feature_index: feat,
                threshold: t,
                side: PredicateSide::Le,
            });
        }
    }
    out
}

/// Row indices of `d` covered by the branch, ascending.
pub fn branch_coverage_set(branch: &Branch, d: &Dataset) -> Vec<usize> {
    (0..d.n_rows())
        .filter(|&r| branch.covers(d.row(r)))
        .collect()
}

fn stats_over_rows<'a>(
    branch: &Branch,
    d: &Dataset,
    rows: impl Iterator<Item = &'a usize>,
    scope_size: usize,
) -> Result<BranchStats> {
    let leaf_class = match branch.leaf_label {
        LeafLabel::Class(c) => c,
        LeafLabel::Value(_) => {
            return Err(CrfError::TaskMismatch(
                "branch accuracy is defined for classification only".into(),
            ))
        }
    };
    let mut covered = 0usize;
    let mut correct = 0usize;
    for &r in rows {
        if branch.covers(d.row(r)) {
            covered += 1;
            if d.class_of(r) == leaf_class {
                correct += 1;
            }
        }
    }
    let accuracy = if covered == 0 {
        0.0
    } else {
        correct as f64 / covered as f64
    };
    let impact = accuracy * covered as f64 / scope_size as f64;
    Ok(BranchStats {
        covered,
        accuracy,
        impact,
    })
}

/// Fraction of the branch's coverage set whose label matches the leaf.
/// Zero (and flagged uncovered) when nothing is covered.
pub fn branch_accuracy(branch: &Branch, d: &Dataset) -> Result<f64> {
    if !d.is_classification() {
        return Err(CrfError::TaskMismatch(
            "branch accuracy is defined for classification only".into(),
        ));
    }
    let rows: Vec<usize> = (0..d.n_rows()).collect();
    Ok(stats_over_rows(branch, d, rows.iter(), d.n_rows())?.accuracy)
}

/// accuracy x coverage fraction: the share of the evaluation set the branch
/// classifies correctly.
pub fn impact_factor(branch: &Branch, d: &Dataset) -> Result<f64> {
    if !d.is_classification() {
        return Err(CrfError::TaskMismatch(
            "impact factor is defined for classification only".into(),
        ));
    }
    let rows: Vec<usize> = (0..d.n_rows()).collect();
    Ok(stats_over_rows(branch, d, rows.iter(), d.n_rows())?.impact)
}

/// Populate covered/accuracy/impact for every branch against the training
/// data, either over the full set or over each tree's own bootstrap rows.
pub fn evaluate_branch_stats(
    bs: &BranchSet,
    d: &Dataset,
    scope: EvaluationScope,
) -> Result<BranchSet> {
    if !d.is_classification() {
        return Err(CrfError::TaskMismatch(
            "branch statistics are defined for classification only".into(),
        ));
    }
    if d.feature_count() != bs.feature_count {
        return Err(CrfError::DimensionMismatch {
            expected: bs.feature_count,
            actual: d.feature_count(),
        });
    }
    if scope == EvaluationScope::OwnBootstrap {
        if bs.bootstrap_index_sets.len() != bs.tree_count {
            return Err(CrfError::InvalidParameter(
                "branch set is missing bootstrap index sets".into(),
            ));
        }
        if let Some(&bad) = bs
            .bootstrap_index_sets
            .iter()
            .flatten()
            .find(|&&r| r >= d.n_rows())
        {
            return Err(CrfError::InvalidParameter(format!(
                "bootstrap row {bad} out of range; is this the training set?"
            )));
        }
    }

    let full_rows: Vec<usize> = (0..d.n_rows()).collect();
    let mut out = bs.clone();
    for branch in &mut out.branches {
        let rows = match scope {
            EvaluationScope::FullTrainingSet => &full_rows,
            EvaluationScope::OwnBootstrap => &bs.bootstrap_index_sets[branch.tree_index],
        };
        branch.stats = Some(stats_over_rows(branch, d, rows.iter(), rows.len())?);
    }
    out.evaluation_scope = Some(scope);
    Ok(out)
}

/// Keep exactly the branches whose criterion metric is >= the threshold.
/// Order is preserved; the input set is untouched.
pub fn crossbreed_prune(bs: &BranchSet, criterion: &PruneCriterion) -> Result<BranchSet> {
    if !(0.0..=1.0).contains(&criterion.threshold) {
        return Err(CrfError::InvalidParameter(format!(
            "prune threshold {} outside [0, 1]",
            criterion.threshold
        )));
    }
    if !bs.stats_populated() {
        return Err(CrfError::StatsNotPopulated);
    }
    let mut out = bs.clone();
    out.branches.retain(|b| {
        let stats = b.stats.expect("checked populated");
        let value = match criterion.kind {
            BranchMetric::Accuracy => stats.accuracy,
            BranchMetric::ImpactFactor => stats.impact,
        };
        value >= criterion.threshold
    });
    Ok(out)
}

/// Histogram of a branch metric over uniform bins of [0, 1]; the last bin
/// includes its right edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn branch_histogram(bs: &BranchSet, metric: BranchMetric, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(CrfError::InvalidParameter("bins must be >= 1".into()));
    }
    if !bs.stats_populated() {
        return Err(CrfError::StatsNotPopulated);
    }
    let mut counts = vec![0usize; bins];
    for b in &bs.branches {
        let stats = b.stats.expect("checked populated");
        let v = match metric {
            BranchMetric::Accuracy => stats.accuracy,
            BranchMetric::ImpactFactor => stats.impact,
        };
        let idx = ((v * bins as f64).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let bin_edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    Ok(Histogram { bin_edges, counts })
}

/// `bin_low,bin_high,count` CSV for a histogram.
pub fn histogram_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_low,bin_high,count\n");
    for (i, &c) in h.counts.iter().enumerate() {
        out.push_str(&format!("{},{},{c}\n", h.bin_edges[i], h.bin_edges[i + 1]));
    }
    out
}

/// `tree_index,branch_index,n_predicates,leaf_label,k,acc,impact` CSV.
/// Statistic cells are left empty when unevaluated.
pub fn branch_dump_csv(bs: &BranchSet) -> String {
    let mut out = String::from("tree_index,branch_index,n_predicates,leaf_label,k,acc,impact\n");
    for b in &bs.branches {
        let label = match b.leaf_label {
            LeafLabel::Class(c) => c.to_string(),
            LeafLabel::Value(v) => v.to_string(),
        };
        match b.stats {
            Some(s) => out.push_str(&format!(
                "{},{},{},{label},{},{},{}\n",
                b.tree_index,
                b.branch_index,
                b.predicates.len(),
                s.covered,
                s.accuracy,
                s.impact
            )),
            None => out.push_str(&format!(
                "{},{},{},{label},,,\n",
                b.tree_index,
                b.branch_index,
                b.predicates.len()
            )),
        }
    }
    out
}
