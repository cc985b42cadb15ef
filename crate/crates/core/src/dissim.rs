//! Feature tables, dissimilarity matrices, and the preprocessing that turns
//! one into the other.

use std::collections::HashSet;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;

/// Relative asymmetry tolerated (and averaged away) by [`validate_dissimilarity`].
pub const ASYMMETRY_TOL: f64 = 1e-6;
/// Entries below this are rejected as negative; entries between it and zero are clamped.
pub const NEGATIVE_TOL: f64 = 1e-12;

fn check_labels(labels: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(labels.len());
    for l in labels {
        if l.trim().is_empty() {
            return Err(Error::BadLabels(format!("empty {what} label")));
        }
        if !seen.insert(l.as_str()) {
            return Err(Error::BadLabels(format!("duplicate {what} label `{l}`")));
        }
    }
    Ok(())
}

/// `d` subjects observed at `L` real-valued features, with a missingness mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    subjects: Vec<String>,
    features: Vec<String>,
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
}

impl FeatureTable {
    /// `mask[(i, j)] == true` marks a missing value; the value stored there is ignored.
    pub fn new(
        subjects: Vec<String>,
        features: Vec<String>,
        values: DMatrix<f64>,
        mask: DMatrix<bool>,
    ) -> Result<Self> {
        let (d, l) = values.shape();
        if subjects.len() != d || features.len() != l || mask.shape() != (d, l) {
            return Err(Error::ShapeMismatch(format!(
                "{} subjects x {} features vs values {}x{} and mask {}x{}",
                subjects.len(),
                features.len(),
                d,
                l,
                mask.nrows(),
                mask.ncols()
            )));
        }
        check_labels(&subjects, "subject")?;
        if l < 2 {
            return Err(Error::TooFewFeatures { needed: 2, found: l });
        }
        for i in 0..d {
            if (0..l).all(|j| mask[(i, j)]) {
                return Err(Error::EmptyRow(subjects[i].clone()));
            }
            for j in 0..l {
                if !mask[(i, j)] && !values[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: subjects[i].clone(), col: features[j].clone() });
                }
            }
        }
        Ok(Self { subjects, features, values, mask })
    }

    /// A table with nothing missing.
    pub fn complete(subjects: Vec<String>, features: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), false);
        Self::new(subjects, features, values, mask)
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn n_subjects(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn has_missing(&self) -> bool {
        self.mask.iter().any(|&m| m)
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.mask[(i, j)]
    }

    /// Fraction of missing entries in each feature column.
    pub fn missing_fraction(&self) -> Vec<f64> {
        let d = self.n_subjects() as f64;
        (0..self.n_features())
            .map(|j| self.mask.column(j).iter().filter(|&&m| m).count() as f64 / d)
            .collect()
    }

    /// Sub-table restricted to the given feature columns, in the given order.
    pub fn select_features(&self, cols: &[usize]) -> Result<Self> {
        let l = self.n_features();
        if let Some(&bad) = cols.iter().find(|&&c| c >= l) {
            return Err(Error::InvalidArgument(format!("feature index {bad} out of range ({l})")));
        }
        let values = self.values.select_columns(cols);
        let mask = self.mask.select_columns(cols);
        let features = cols.iter().map(|&c| self.features[c].clone()).collect();
        Self::new(self.subjects.clone(), features, values, mask)
    }
}

/// A validated `d x d` symmetric nonnegative matrix with subject labels.
#[derive(Debug, Clone)]
pub struct DissimilarityMatrix {
    subjects: Vec<String>,
    values: DMatrix<f64>,
    rank: OnceLock<usize>,
}

impl PartialEq for DissimilarityMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.subjects == other.subjects && self.values == other.values
    }
}

impl DissimilarityMatrix {
    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Numerical rank, computed on first use. Rank deficiency is not an error.
    pub fn numeric_rank(&self) -> usize {
        *self.rank.get_or_init(|| match linalg::sym_eigen_by_magnitude(&self.values) {
            Ok(eig) => {
                let top = eig.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                let tol = top * self.dim() as f64 * f64::EPSILON;
                eig.values.iter().filter(|v| v.abs() > tol).count()
            }
            Err(_) => 0,
        })
    }

    pub fn is_full_rank(&self) -> bool {
        self.numeric_rank() == self.dim()
    }
}

/// Check shape, sign, and symmetry of a raw matrix; small asymmetries are averaged out.
pub fn validate_dissimilarity(raw: DMatrix<f64>, labels: Vec<String>) -> Result<DissimilarityMatrix> {
    let (r, c) = raw.shape();
    if r != c {
        return Err(Error::BadShape(format!("dissimilarity matrix is {r}x{c}, not square")));
    }
    if r < 3 {
        return Err(Error::BadShape(format!("need at least 3 subjects, got {r}")));
    }
    if labels.len() != r {
        return Err(Error::BadShape(format!("{} labels for a {r}x{r} matrix", labels.len())));
    }
    check_labels(&labels, "subject")?;

    let mut y = raw;
    for i in 0..r {
        for j in 0..r {
            let v = y[(i, j)];
            if !v.is_finite() {
                return Err(Error::NonFinite { row: labels[i].clone(), col: labels[j].clone() });
            }
            if v < -NEGATIVE_TOL {
                return Err(Error::NegativeEntry {
                    row: labels[i].clone(),
                    col: labels[j].clone(),
                    value: v,
                });
            }
        }
    }
    for i in 0..r {
        for j in (i + 1)..r {
            let (a, b) = (y[(i, j)], y[(j, i)]);
            let rel = (a - b).abs() / 1f64.max(a.abs().max(b.abs()));
            if rel > ASYMMETRY_TOL {
                return Err(Error::Asymmetric { row: labels[i].clone(), col: labels[j].clone(), rel });
            }
            if a != b {
                let m = 0.5 * (a + b);
                y[(i, j)] = m;
                y[(j, i)] = m;
            }
        }
    }
    for v in y.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(DissimilarityMatrix { subjects: labels, values: y, rank: OnceLock::new() })
}

/// Pairwise Euclidean distances between subject rows of a complete table.
pub fn euclidean_dissimilarity(table: &FeatureTable) -> Result<DissimilarityMatrix> {
    let (d, l) = table.values.shape();
    for i in 0..d {
        for j in 0..l {
            if table.mask[(i, j)] {
                return Err(Error::MissingData {
                    subject: table.subjects[i].clone(),
                    feature: table.features[j].clone(),
                });
            }
        }
    }
    let rows: Vec<Vec<f64>> = (0..d).map(|i| table.values.row(i).iter().copied().collect()).collect();
    let upper: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..d)
                .map(|j| rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .collect()
        })
        .collect();
    let mut y = DMatrix::zeros(d, d);
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            y[(i, j)] = v;
            y[(j, i)] = v;
        }
    }
    validate_dissimilarity(y, table.subjects.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Impute {
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessOptions {
    /// Values further than `cap` standard deviations from the column mean are clipped.
    pub cap: f64,
    pub standardize: bool,
    pub impute: Impute,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self { cap: 10.0, standardize: true, impute: Impute::Mean }
    }
}

/// Output of [`preprocess_features`]: the cleaned table plus the labels of
/// zero-variance columns that were removed.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub table: FeatureTable,
    pub dropped: Vec<String>,
}

fn column_moments(table: &FeatureTable, j: usize) -> (usize, f64, f64) {
    let obs: Vec<f64> =
        (0..table.n_subjects()).filter(|&i| !table.mask[(i, j)]).map(|i| table.values[(i, j)]).collect();
    let n = obs.len();
    if n == 0 {
        return (0, 0.0, 0.0);
    }
    let mean = obs.iter().sum::<f64>() / n as f64;
    let var =
        if n > 1 { obs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    (n, mean, var)
}

/// Standardize (unbiased variance), cap extreme values and mean-impute each feature.
pub fn preprocess_features(table: &FeatureTable, opts: &PreprocessOptions) -> Result<Preprocessed> {
    if !(opts.cap > 0.0) {
        return Err(Error::InvalidArgument(format!("cap must be positive, got {}", opts.cap)));
    }
    let d = table.n_subjects();
    let mut kept_cols: Vec<Vec<f64>> = Vec::new();
    let mut kept_labels = Vec::new();
    let mut dropped = Vec::new();

    for j in 0..table.n_features() {
        let (n, mean, var) = column_moments(table, j);
        let sd = var.sqrt();
        if opts.standardize {
            if n < 2 {
                return Err(Error::TooFewObservations(table.features[j].clone()));
            }
            if sd <= 1e-12 * mean.abs().max(1.0) {
                log::warn!("dropping constant feature `{}`", table.features[j]);
                dropped.push(table.features[j].clone());
                continue;
            }
        }
        let col = (0..d)
            .map(|i| {
                if table.mask[(i, j)] {
                    // Mean imputation: 0 on the standardized scale.
                    if opts.standardize {
                        0.0
                    } else {
                        mean
                    }
                } else {
                    let v = table.values[(i, j)];
                    if opts.standardize {
                        ((v - mean) / sd).clamp(-opts.cap, opts.cap)
                    } else if n >= 2 && sd > 0.0 {
                        v.clamp(mean - opts.cap * sd, mean + opts.cap * sd)
                    } else {
                        v
                    }
                }
            })
            .collect();
        kept_cols.push(col);
        kept_labels.push(table.features[j].clone());
    }

    let l = kept_cols.len();
    if l < 2 {
        return Err(Error::TooFewFeatures { needed: 2, found: l });
    }
    let values = DMatrix::from_fn(d, l, |i, j| kept_cols[j][i]);
    let out = FeatureTable::complete(table.subjects.clone(), kept_labels, values)?;
    Ok(Preprocessed { table: out, dropped })
}

/// Drop feature columns whose missing fraction is at or above `max_missing`.
pub fn filter_missing(table: &FeatureTable, max_missing: f64) -> Result<FeatureTable> {
    let keep: Vec<usize> = table
        .missing_fraction()
        .iter()
        .enumerate()
        .filter(|(_, &f)| f < max_missing)
        .map(|(j, _)| j)
        .collect();
    table.select_features(&keep)
}
