//! The end-to-end comparison: learn structure on the reference, predict the
//! target at every complexity, and summarise the residuals.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dissim::DissimilarityMatrix;
use crate::error::{Error, Result};
use crate::mixture_model::{self, MixtureFit, MixtureOptions};
use crate::svd_model::{self, Method, StructureScan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonOptions {
    pub kmax: usize,
    pub method: Method,
    pub mixture: MixtureOptions,
}

impl ComparisonOptions {
    pub fn svd(kmax: usize) -> Self {
        Self { kmax, method: Method::Svd, mixture: MixtureOptions::default() }
    }

    pub fn mixture(kmax: usize, mixture: MixtureOptions) -> Self {
        Self { kmax, method: Method::Mixture, mixture }
    }
}

/// Relationships, losses and persistences of one matrix predicted from a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Fitted `X^(k)` for `k = 1..=kmax`.
    pub relationships: Vec<DMatrix<f64>>,
    /// Frobenius norm of the residual at each `k`.
    pub loss: Vec<f64>,
    /// `d x kmax`, `P(i, k) = Σ_j R_k(i, j)²`.
    pub persistence: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct ComparisonResult {
    pub subjects: Vec<String>,
    pub scan: StructureScan,
    /// Reference predicted from its own structure.
    pub learned: Prediction,
    /// Target predicted from the reference structure.
    pub predicted: Prediction,
    pub mixture_fits: Option<Vec<MixtureFit>>,
    target: DMatrix<f64>,
}

impl ComparisonResult {
    pub fn kmax(&self) -> usize {
        self.scan.kmax()
    }

    pub fn persistence(&self) -> &DMatrix<f64> {
        &self.predicted.persistence
    }

    pub fn target(&self) -> &DMatrix<f64> {
        &self.target
    }

    /// `Ŷ_{2,k}`.
    pub fn predicted_target(&self, k: usize) -> DMatrix<f64> {
        let a = self.scan.structure(k);
        a * &self.predicted.relationships[k - 1] * a.transpose()
    }

    /// `R_k = Y2 - Ŷ_{2,k}`, recomputed on demand.
    pub fn residual(&self, k: usize) -> DMatrix<f64> {
        &self.target - self.predicted_target(k)
    }
}

pub fn check_subjects(a: &[String], b: &[String]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::SubjectMismatch(format!("{} vs {} subjects", a.len(), b.len())));
    }
    if let Some((x, y)) = a.iter().zip(b).find(|(x, y)| x != y) {
        return Err(Error::SubjectMismatch(format!("`{x}` vs `{y}`")));
    }
    Ok(())
}

/// `Y2 - Ŷ`.
pub fn residuals(y2: &DissimilarityMatrix, yhat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if yhat.shape() != y2.values().shape() {
        return Err(Error::ShapeMismatch(format!(
            "target is {}x{}, prediction is {}x{}",
            y2.dim(),
            y2.dim(),
            yhat.nrows(),
            yhat.ncols()
        )));
    }
    Ok(y2.values() - yhat)
}

/// Row sums of squared residuals.
pub fn row_persistence(r: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(r.nrows(), r.row_iter().map(|row| row.norm_squared()))
}

/// Persistence matrix from residuals `R_1..R_kmax`: column `k-1` holds the
/// row sums of squared entries of `R_k`.
pub fn persistence(residuals: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let Some(first) = residuals.first() else {
        return Err(Error::InvalidArgument("no residual matrices".into()));
    };
    let d = first.nrows();
    let mut p = DMatrix::zeros(d, residuals.len());
    for (k, r) in residuals.iter().enumerate() {
        if r.nrows() != d {
            return Err(Error::ShapeMismatch(format!(
                "residual {} has {} rows, expected {d}",
                k + 1,
                r.nrows()
            )));
        }
        p.set_column(k, &row_persistence(r));
    }
    Ok(p)
}

/// Fit a relationship for `target` at every level of `scan`.
///
/// `target` need not be symmetric. Rank-deficient mixture structures use the
/// Moore-Penrose inverse.
pub fn predict_from_scan(scan: &StructureScan, target: &DMatrix<f64>) -> Result<Prediction> {
    let d = target.nrows();
    if !target.is_square() || scan.structure(1).nrows() != d {
        return Err(Error::ShapeMismatch(format!(
            "scan is over {} subjects, target is {}x{}",
            scan.structure(1).nrows(),
            target.nrows(),
            target.ncols()
        )));
    }
    let per_k = (1..=scan.kmax())
        .into_par_iter()
        .map(|k| {
            let a = scan.structure(k);
            let x = match scan.method {
                Method::Svd => svd_model::fit_relationship(a, target)?,
                Method::Mixture => svd_model::fit_relationship_any(a, target)?,
            };
            let r = target - a * &x * a.transpose();
            Ok((x, r.norm(), row_persistence(&r)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut persistence = DMatrix::zeros(d, scan.kmax());
    let mut relationships = Vec::with_capacity(scan.kmax());
    let mut loss = Vec::with_capacity(scan.kmax());
    for (k, (x, l, p)) in per_k.into_iter().enumerate() {
        persistence.set_column(k, &p);
        relationships.push(x);
        loss.push(l);
    }
    Ok(Prediction { relationships, loss, persistence })
}

/// Learn the reference structure with the requested method.
pub fn learn_scan(
    y1: &DMatrix<f64>,
    opts: &ComparisonOptions,
) -> Result<(StructureScan, Option<Vec<MixtureFit>>)> {
    match opts.method {
        Method::Svd => Ok((svd_model::scan_symmetric(y1, opts.kmax)?, None)),
        Method::Mixture => {
            let (scan, fits) = mixture_model::learn_mixture_scan(y1, opts.kmax, &opts.mixture)?;
            Ok((scan, Some(fits)))
        }
    }
}

/// Predict `y2` from the structure of `y1` at every complexity up to `kmax`.
pub fn structural_comparison(
    y1: &DissimilarityMatrix,
    y2: &DissimilarityMatrix,
    opts: &ComparisonOptions,
) -> Result<ComparisonResult> {
    check_subjects(y1.subjects(), y2.subjects())?;
    let d = y1.dim();
    if opts.kmax < 1 || opts.kmax > d {
        return Err(Error::InvalidArgument(format!("kmax must be in 1..={d}, got {}", opts.kmax)));
    }
    let (scan, mixture_fits) = learn_scan(y1.values(), opts)?;
    let learned = predict_from_scan(&scan, y1.values())?;
    let predicted = predict_from_scan(&scan, y2.values())?;
    Ok(ComparisonResult {
        subjects: y1.subjects().to_vec(),
        scan,
        learned,
        predicted,
        mixture_fits,
        target: y2.values().clone(),
    })
}

/// Assignment of subjects to clusters, used to pool persistences and residuals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    names: Vec<String>,
    membership: Vec<usize>,
}

impl ClusterAssignment {
    /// Cluster order follows first appearance in `subjects`.
    pub fn from_labels(subjects: &[String], labels: &HashMap<String, String>) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut membership = Vec::with_capacity(subjects.len());
        for s in subjects {
            let Some(c) = labels.get(s) else {
                return Err(Error::UnassignedSubject(s.clone()));
            };
            let id = *index.entry(c.as_str()).or_insert_with(|| {
                names.push(c.clone());
                names.len() - 1
            });
            membership.push(id);
        }
        Ok(Self { names, membership })
    }

    /// Clusters `0..n` named `c1..cn`; every index must be below `n`.
    pub fn from_indices(membership: Vec<usize>, n_clusters: usize) -> Result<Self> {
        if let Some(pos) = membership.iter().position(|&c| c >= n_clusters) {
            return Err(Error::UnassignedSubject(format!("subject {pos}")));
        }
        let names = (1..=n_clusters).map(|c| format!("c{c}")).collect();
        Ok(Self { names, membership })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn n_clusters(&self) -> usize {
        self.names.len()
    }

    fn check_rows(&self, m: &DMatrix<f64>) -> Result<()> {
        if m.nrows() != self.membership.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows for {} assigned subjects",
                m.nrows(),
                self.membership.len()
            )));
        }
        Ok(())
    }

    /// Sum rows within each cluster (`clusters x cols`).
    pub fn aggregate_rows(&self, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(p)?;
        let mut out = DMatrix::zeros(self.n_clusters(), p.ncols());
        for (i, &c) in self.membership.iter().enumerate() {
            let mut row = out.row_mut(c);
            row += p.row(i);
        }
        Ok(out)
    }

    /// Sum a square subject matrix over cluster blocks (`clusters x clusters`).
    pub fn aggregate_blocks(&self, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(r)?;
        if !r.is_square() {
            return Err(Error::BadShape(format!("{}x{} is not square", r.nrows(), r.ncols())));
        }
        let c = self.n_clusters();
        let mut out = DMatrix::zeros(c, c);
        for (i, &ci) in self.membership.iter().enumerate() {
            for (j, &cj) in self.membership.iter().enumerate() {
                out[(ci, cj)] += r[(i, j)];
            }
        }
        Ok(out)
    }

    /// Block sums of squared residuals.
    pub fn aggregate_squared_residuals(&self, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.aggregate_blocks(&r.component_mul(r))
    }
}
