//! Dataset container plus ingestion, synthesis, splitting, and sampling.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::error::{CrfError, Result};

/// Target side of a dataset: class indices or real-valued targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Classes {
        indices: Vec<usize>,
        class_count: usize,
    },
    Values(Vec<f64>),
}

/// An immutable N x p feature matrix with labels.
///
/// Every feature value is finite; classification labels are contiguous
/// indices in `[0, class_count)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>, // row-major, n_rows * n_cols
    n_rows: usize,
    n_cols: usize,
    labels: Labels,
}

impl Dataset {
    pub fn classification(
        features: Vec<f64>,
        n_cols: usize,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        let d = Self::validate_matrix(features, n_cols, labels.len())?;
        if class_count == 0 {
            return Err(CrfError::InvalidParameter(
                "class_count must be >= 1".into(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(CrfError::InvalidParameter(format!(
                "label {bad} out of range [0, {class_count})"
            )));
        }
        Ok(Self {
            labels: Labels::Classes {
                indices: labels,
                class_count,
            },
            ..d
        })
    }

    pub fn regression(features: Vec<f64>, n_cols: usize, targets: Vec<f64>) -> Result<Self> {
        let d = Self::validate_matrix(features, n_cols, targets.len())?;
        if let Some(bad) = targets.iter().find(|t| !t.is_finite()) {
            return Err(CrfError::InvalidParameter(format!(
                "non-finite target value {bad}"
            )));
        }
        Ok(Self {
            labels: Labels::Values(targets),
            ..d
        })
    }

    fn validate_matrix(features: Vec<f64>, n_cols: usize, n_labels: usize) -> Result<Self> {
        if n_cols == 0 {
            return Err(CrfError::InvalidParameter(
                "feature_count must be >= 1".into(),
            ));
        }
        if !features.len().is_multiple_of(n_cols) {
            return Err(CrfError::InvalidParameter(format!(
                "feature buffer length {} is not a multiple of column count {n_cols}",
                features.len()
            )));
        }
        let n_rows = features.len() / n_cols;
        if n_labels != n_rows {
            return Err(CrfError::InvalidParameter(format!(
                "label count {n_labels} does not match row count {n_rows}"
            )));
        }
        if let Some(bad) = features.iter().find(|v| !v.is_finite()) {
            return Err(CrfError::InvalidParameter(format!(
                "non-finite feature value {bad}"
            )));
        }
        Ok(Self {
            features,
            n_rows,
            n_cols,
            labels: Labels::Values(Vec::new()),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn feature_count(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.features[row * self.n_cols + col]
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.labels, Labels::Classes { .. })
    }

    pub fn class_count(&self) -> Option<usize> {
        match &self.labels {
            Labels::Classes { class_count, .. } => Some(*class_count),
            Labels::Values(_) => None,
        }
    }

    /// Class index of a row. Panics on regression datasets.
    pub fn class_of(&self, row: usize) -> usize {
        match &self.labels {
            Labels::Classes { indices, .. } => indices[row],
            Labels::Values(_) => panic!("class_of on a regression dataset"),
        }
    }

    /// Regression target of a row. Panics on classification datasets.
    pub fn target_of(&self, row: usize) -> f64 {
        match &self.labels {
            Labels::Values(v) => v[row],
            Labels::Classes { .. } => panic!("target_of on a classification dataset"),
        }
    }

    pub fn class_indices(&self) -> Option<&[usize]> {
        match &self.labels {
            Labels::Classes { indices, .. } => Some(indices),
            Labels::Values(_) => None,
        }
    }

    pub fn targets(&self) -> Option<&[f64]> {
        match &self.labels {
            Labels::Values(v) => Some(v),
            Labels::Classes { .. } => None,
        }
    }

    /// New dataset holding the given rows (duplicates allowed), in order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        let labels = match &self.labels {
            Labels::Classes {
                indices,
                class_count,
            } => Labels::Classes {
                indices: rows.iter().map(|&r| indices[r]).collect(),
                class_count: *class_count,
            },
            Labels::Values(v) => Labels::Values(rows.iter().map(|&r| v[r]).collect()),
        };
        Dataset {
            features,
            n_rows: rows.len(),
            n_cols: self.n_cols,
            labels,
        }
    }
}

/// Parameters for the synthetic classification generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_informative: usize,
    pub n_classes: usize,
    pub n_clusters_per_class: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0
            || self.n_features == 0
            || self.n_informative == 0
            || self.n_clusters_per_class == 0
        {
            return Err(CrfError::InvalidParameter(
                "all synthetic spec counts must be strictly positive".into(),
            ));
        }
        if self.n_classes < 2 {
            return Err(CrfError::InvalidParameter("n_classes must be >= 2".into()));
        }
        if self.n_informative > self.n_features {
            return Err(CrfError::InvalidParameter(format!(
                "n_informative ({}) exceeds n_features ({})",
                self.n_informative, self.n_features
            )));
        }
        let needed = (self.n_classes as u128) * (self.n_clusters_per_class as u128);
        if self.n_informative < 128 {
            let available = 1u128 << self.n_informative;
            if needed > available {
                return Err(CrfError::InvalidParameter(format!(
                    "{} clusters requested but only {available} hypercube vertices exist in {} informative dimensions",
                    needed, self.n_informative
                )));
            }
        }
        Ok(())
    }
}

/// A train/test partition of one source dataset.
#[derive(Debug, Clone)]
pub struct SplitPair {
    pub train: Dataset,
    pub test: Dataset,
}

/// A bootstrap draw: the resampled rows plus their source indices.
#[derive(Debug, Clone)]
pub struct Bootstrap {
    pub data: Dataset,
    /// Original row index of each drawn row, in draw order (length N).
    pub source_rows: Vec<usize>,
}

/// Per-feature location/scale summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSummary {
    pub mean: f64,
    pub std: f64,
}

/// Gaussian clusters of unit variance centered at distinct hypercube
/// vertices (coordinates +-1) of the informative subspace; the remaining
/// columns are independent standard normal noise. Class sizes are balanced
/// to within one sample. Deterministic per spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = StdRng::seed_from_u64(spec.seed);

    let needed = spec.n_classes * spec.n_clusters_per_class;
    let vertices = sample_distinct_vertices(&mut rng, spec.n_informative, needed);

    // Balanced class sizes, then balanced cluster sizes within each class.
    let class_sizes = balanced_counts(spec.n_samples, spec.n_classes);

    let mut features = Vec::with_capacity(spec.n_samples * spec.n_features);
    let mut labels = Vec::with_capacity(spec.n_samples);
    for (class, &size) in class_sizes.iter().enumerate() {
        let cluster_sizes = balanced_counts(size, spec.n_clusters_per_class);
        for (cluster, &csize) in cluster_sizes.iter().enumerate() {
            let vertex = vertices[class * spec.n_clusters_per_class + cluster];
            for _ in 0..csize {
                for dim in 0..spec.n_features {
                    let noise: f64 = rng.sample(StandardNormal);
                    if dim < spec.n_informative {
                        let center = if vertex >> dim & 1 == 1 { 1.0 } else { -1.0 };
                        features.push(center + noise);
                    } else {
                        features.push(noise);
                    }
                }
                labels.push(class);
            }
        }
    }

    Dataset::classification(features, spec.n_features, labels, spec.n_classes)
}

/// Draw `count` distinct vertex ids of the `dims`-dimensional hypercube.
fn sample_distinct_vertices(rng: &mut StdRng, dims: usize, count: usize) -> Vec<u64> {
    if dims < 21 {
        let total = 1usize << dims;
        let picked = rand::seq::index::sample(rng, total, count);
        return picked.into_iter().map(|v| v as u64).collect();
    }
    // Too many vertices to enumerate; rejection-sample distinct ids.
    let mask = if dims >= 64 {
        u64::MAX
    } else {
        (1u64 << dims) - 1
    };
    let mut seen = std::collections::HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v = rng.random::<u64>() & mask;
        if seen.insert(v) {
            out.push(v);
        }
    }
    out
}

/// Split `total` into `parts` counts differing by at most one.
fn balanced_counts(total: usize, parts: usize) -> Vec<usize> {
    let base = total / parts;
    let extra = total % parts;
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}

/// Column schema for [`load_csv`].
#[derive(Debug, Clone)]
pub struct CsvSchema {
    /// Zero-based raw column index holding the integer class label.
    pub label_column: usize,
    pub has_header: bool,
    /// Raw column indices excluded from the feature matrix (ids etc.).
    pub ignore_columns: Vec<usize>,
}

/// Load a numeric CSV into a classification dataset.
///
/// Labels are re-indexed to contiguous `[0, C)` by sorting the distinct
/// original integer labels.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let path_str = path.display().to_string();
    let csv_err = |line: usize, message: String| CrfError::Csv {
        path: path_str.clone(),
        line,
        message,
    };

    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let ignored: BTreeSet<usize> = schema.ignore_columns.iter().copied().collect();
    if ignored.contains(&schema.label_column) {
        return Err(CrfError::InvalidParameter(
            "label column cannot be ignored".into(),
        ));
    }

    let mut features = Vec::new();
    let mut raw_labels: Vec<i64> = Vec::new();
    let mut expected_cols: Option<usize> = None;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if idx == 0 && schema.has_header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        match expected_cols {
            None => {
                if schema.label_column >= cells.len() {
                    return Err(csv_err(
                        line_no,
                        format!(
                            "label column {} out of range for {} columns",
                            schema.label_column,
                            cells.len()
                        ),
                    ));
                }
                expected_cols = Some(cells.len());
            }
            Some(n) if n != cells.len() => {
                return Err(csv_err(
                    line_no,
                    format!("ragged row: expected {n} columns, found {}", cells.len()),
                ));
            }
            _ => {}
        }
        for (col, cell) in cells.iter().enumerate() {
            let cell = cell.trim();
            if col == schema.label_column {
                let label: i64 = cell.parse().map_err(|_| {
                    csv_err(
                        line_no,
                        format!(
                            "column {}: cannot parse '{cell}' as an integer label",
                            col + 1
                        ),
                    )
                })?;
                raw_labels.push(label);
            } else if !ignored.contains(&col) {
                let v: f64 = cell.parse().map_err(|_| {
                    csv_err(
                        line_no,
                        format!("column {}: cannot parse '{cell}' as a number", col + 1),
                    )
                })?;
                if !v.is_finite() {
                    return Err(csv_err(
                        line_no,
                        format!("column {}: non-finite value '{cell}'", col + 1),
                    ));
                }
                features.push(v);
            }
        }
    }

    if raw_labels.is_empty() {
        return Err(csv_err(0, "no data rows".into()));
    }

    // Re-index labels to contiguous [0, C) by sorted original value.
    let mut distinct: Vec<i64> = raw_labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| distinct.binary_search(l).expect("label present"))
        .collect();

    let n_cols = features.len() / raw_labels.len();
    if n_cols == 0 {
        return Err(csv_err(0, "no feature columns remain after ignores".into()));
    }
    Dataset::classification(features, n_cols, labels, distinct.len())
}

/// Relabel to a binary task: 1 for classes in `positive`, 0 otherwise.
/// Features are untouched.
pub fn merge_classes(d: &Dataset, positive: &BTreeSet<usize>) -> Result<Dataset> {
    let class_count = d
        .class_count()
        .ok_or_else(|| CrfError::TaskMismatch("merge_classes needs class labels".into()))?;
    if positive.is_empty() {
        return Err(CrfError::InvalidParameter(
            "positive class set is empty".into(),
        ));
    }
    if let Some(&bad) = positive.iter().find(|&&c| c >= class_count) {
        return Err(CrfError::InvalidParameter(format!(
            "positive class {bad} out of range [0, {class_count})"
        )));
    }
    if positive.len() == class_count {
        return Err(CrfError::InvalidParameter(
            "positive class set covers every class; nothing to merge against".into(),
        ));
    }
    let labels = d
        .class_indices()
        .expect("classification checked above")
        .iter()
        .map(|l| usize::from(positive.contains(l)))
        .collect();
    Dataset::classification(d.features.clone(), d.n_cols, labels, 2)
}

/// Deterministic train/test split. Stratified by class whenever every class
/// has at least two samples; plain shuffled split otherwise.
pub fn train_test_split(d: &Dataset, train_fraction: f64, seed: u64) -> Result<SplitPair> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CrfError::InvalidParameter(format!(
            "train_fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let n = d.n_rows();
    if n < 2 {
        return Err(CrfError::InvalidParameter(
            "need at least 2 rows to split".into(),
        ));
    }
    // Keep both sides nonempty even when rounding would drain one of them.
    let target = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut rng = StdRng::seed_from_u64(seed);

    let stratify = match d.class_indices() {
        Some(indices) => {
            let c = d.class_count().unwrap();
            let mut counts = vec![0usize; c];
            for &l in indices {
                counts[l] += 1;
            }
            counts.iter().all(|&k| k >= 2).then_some(counts)
        }
        None => None,
    };

    let mut train_rows: Vec<usize> = Vec::with_capacity(target);
    let mut test_rows: Vec<usize> = Vec::with_capacity(n - target);

    match stratify {
        Some(counts) => {
            let indices = d.class_indices().unwrap();
            let quotas = largest_remainder_quotas(&counts, train_fraction, target);
            let c = counts.len();
            let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); c];
            for (row, &l) in indices.iter().enumerate() {
                per_class[l].push(row);
            }
            for (class, rows) in per_class.iter_mut().enumerate() {
                rows.shuffle(&mut rng);
                let q = quotas[class];
                train_rows.extend_from_slice(&rows[..q]);
                test_rows.extend_from_slice(&rows[q..]);
            }
        }
        None => {
            let mut rows: Vec<usize> = (0..n).collect();
            rows.shuffle(&mut rng);
            train_rows.extend_from_slice(&rows[..target]);
            test_rows.extend_from_slice(&rows[target..]);
        }
    }

    // Row order within each side is made deterministic and source-ordered.
    train_rows.sort_unstable();
    test_rows.sort_unstable();

    Ok(SplitPair {
        train: d.subset(&train_rows),
        test: d.subset(&test_rows),
    })
}

/// Largest-remainder apportionment of `target` training slots over classes.
fn largest_remainder_quotas(counts: &[usize], fraction: f64, target: usize) -> Vec<usize> {
    let mut quotas: Vec<usize> = counts
        .iter()
        .map(|&k| (fraction * k as f64).floor() as usize)
        .collect();
    // Never assign more slots than a class has.
    for (q, &k) in quotas.iter_mut().zip(counts) {
        *q = (*q).min(k);
    }
    let mut assigned: usize = quotas.iter().sum();

    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = fraction * counts[a] as f64 - (fraction * counts[a] as f64).floor();
        let fb = fraction * counts[b] as f64 - (fraction * counts[b] as f64).floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });

    // Top up (or trim) until the global target is met exactly.
    let mut i = 0;
    while assigned < target {
        let c = order[i % order.len()];
        if quotas[c] < counts[c] {
            quotas[c] += 1;
            assigned += 1;
        }
        i += 1;
    }
    let mut i = 0;
    while assigned > target {
        let c = order[order.len() - 1 - (i % order.len())];
        if quotas[c] > 0 {
            quotas[c] -= 1;
            assigned -= 1;
        }
        i += 1;
    }
    quotas
}

/// Draw N rows with replacement. Deterministic per seed.
pub fn bootstrap_sample(d: &Dataset, seed: u64) -> Result<Bootstrap> {
    let n = d.n_rows();
    if n == 0 {
        return Err(CrfError::EmptyDataset);
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let source_rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    Ok(Bootstrap {
        data: d.subset(&source_rows),
        source_rows,
    })
}

/// Per-feature mean and sample standard deviation (divisor N-1).
pub fn feature_summary(d: &Dataset) -> Result<Vec<FeatureSummary>> {
    let n = d.n_rows();
    if n < 2 {
        return Err(CrfError::InvalidParameter(
            "feature_summary needs at least 2 rows".into(),
        ));
    }
    let p = d.feature_count();
    let mut out = Vec::with_capacity(p);
    for col in 0..p {
        let mean = (0..n).map(|r| d.value(r, col)).sum::<f64>() / n as f64;
        let ss = (0..n)
            .map(|r| {
                let dev = d.value(r, col) - mean;
                dev * dev
            })
            .sum::<f64>();
        out.push(FeatureSummary {
            mean,
            std: (ss / (n - 1) as f64).sqrt(),
        });
    }
    Ok(out)
}

/// `feature_index,mean,std` CSV for a summary.
pub fn feature_summary_csv(summaries: &[FeatureSummary]) -> String {
    let mut out = String::from("feature_index,mean,std\n");
    for (i, s) in summaries.iter().enumerate() {
        out.push_str(&format!("{i},{},{}\n", s.mean, s.std));
    }
    out
}
