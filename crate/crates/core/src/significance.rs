//! Resampling-based significance for persistence and residual cells, and the
//! cross-validated estimate of how many complexities carry signal.
//!
//! Each replicate splits the features of the reference table in half (a
//! sampled reference and a held-out "null" target) and draws half of the
//! target table's features (the observed target; its other half is kept for
//! cross-validation). Both targets are Procrustes-aligned onto the sampled
//! reference, predicted from its structure, and their statistics compared.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::comparison::{self, check_subjects, ComparisonOptions};
use crate::dissim::{euclidean_dissimilarity, FeatureTable};
use crate::error::{Error, Result};
use crate::linalg;
use crate::svd_model;

/// Smallest number of resamples that can reach `p <= 0.05`.
pub const MIN_RESAMPLES: usize = 19;
/// Minimum features per table: each half needs at least two.
pub const MIN_FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResamplingPlan {
    n_bs: usize,
    pub seed: u64,
}

impl ResamplingPlan {
    pub fn new(n_bs: usize, seed: u64) -> Result<Self> {
        if n_bs < MIN_RESAMPLES {
            return Err(Error::InvalidArgument(format!(
                "need at least {MIN_RESAMPLES} resamples, got {n_bs}"
            )));
        }
        Ok(Self { n_bs, seed })
    }

    pub fn n_bs(&self) -> usize {
        self.n_bs
    }

    /// Features are always split in half.
    pub fn split_fraction(&self) -> f64 {
        0.5
    }

    fn rng(&self, replicate: usize, table: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(2 * replicate as u64 + table);
        rng
    }
}

/// What to compute on each replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticConfig {
    pub comparison: ComparisonOptions,
    /// Complexities at which per-entry squared-residual p-values are wanted.
    pub residual_ks: Vec<usize>,
}

impl StatisticConfig {
    pub fn svd(kmax: usize) -> Self {
        Self { comparison: ComparisonOptions::svd(kmax), residual_ks: Vec::new() }
    }

    fn kmax(&self) -> usize {
        self.comparison.kmax
    }
}

/// The four dissimilarity matrices of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateMatrices {
    /// Half of the reference features.
    pub reference: DMatrix<f64>,
    /// The other half of the reference features.
    pub reference_holdout: DMatrix<f64>,
    /// Half of the target features.
    pub target: DMatrix<f64>,
    /// The other half of the target features.
    pub target_holdout: DMatrix<f64>,
}

/// Statistics of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateStatistics {
    /// Persistence of the held-out reference half (`d x kmax`).
    pub null_persistence: DMatrix<f64>,
    /// Persistence of the target half (`d x kmax`).
    pub observed_persistence: DMatrix<f64>,
    /// Squared residuals of the held-out reference half at each requested k.
    pub null_sq_residuals: Vec<DMatrix<f64>>,
    pub observed_sq_residuals: Vec<DMatrix<f64>>,
    /// Cross-validated complexity of the target.
    pub k_hat: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Procrustes {
    pub aligned: DMatrix<f64>,
    pub rotation: DMatrix<f64>,
    pub scale: f64,
}

/// Scaled orthogonal alignment of `src` onto `reference`: minimises
/// `‖s src Q - reference‖_F` over orthogonal `Q` and `s >= 0`.
pub fn procrustes_align(src: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<Procrustes> {
    if src.shape() != reference.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            src.nrows(),
            src.ncols(),
            reference.nrows(),
            reference.ncols()
        )));
    }
    let norm2 = src.norm_squared();
    if norm2 == 0.0 {
        return Err(Error::DegenerateInput("source matrix is identically zero".into()));
    }
    let cross = src.transpose() * reference;
    let rotation = linalg::polar_orthogonal(&cross)?;
    let scale = ((src * &rotation).component_mul(reference).sum() / norm2).max(0.0);
    Ok(Procrustes { aligned: src * &rotation * scale, rotation, scale })
}

/// `(1 + #{null >= observed}) / (1 + n)`; small values mean the observed
/// statistic is unusually large.
pub fn empirical_pvalue(observed: f64, nulls: &[f64]) -> f64 {
    let exceed = nulls.iter().filter(|&&n| n >= observed).count();
    (1 + exceed) as f64 / (1 + nulls.len()) as f64
}

/// Fraction of replicates whose complexity estimate is at least `k`, for `k = 1..=kmax`.
pub fn p_of_k(k_hats: &[usize], kmax: usize) -> Vec<f64> {
    let n = k_hats.len().max(1) as f64;
    (1..=kmax).map(|k| k_hats.iter().filter(|&&h| h >= k).count() as f64 / n).collect()
}

/// Squared Frobenius distance over off-diagonal entries.
fn off_diagonal_error(y: &DMatrix<f64>, yhat: &DMatrix<f64>) -> f64 {
    let mut r = y - yhat;
    r.fill_diagonal(0.0);
    r.norm_squared()
}

/// Complexity minimising the error of predicting `fold2` with the rank-`k`
/// model (structure and relationship) learned on `fold1`; lowest `k` on ties.
/// The zero diagonal is shared by every dissimilarity matrix and is excluded.
pub fn cv_k_hat(fold1: &DMatrix<f64>, fold2: &DMatrix<f64>, kmax: usize) -> Result<usize> {
    if fold1.shape() != fold2.shape() {
        return Err(Error::ShapeMismatch("folds differ in size".into()));
    }
    let scan = svd_model::scan_symmetric(fold1, kmax)?;
    let mut best = (1, f64::INFINITY);
    for k in 1..=kmax {
        let yhat = svd_model::predict(scan.structure(k), scan.relationship(k))?;
        let err = off_diagonal_error(fold2, &yhat);
        if err < best.1 {
            best = (k, err);
        }
    }
    Ok(best.0)
}

fn check_tables(d1: &FeatureTable, d2: &FeatureTable) -> Result<()> {
    check_subjects(d1.subjects(), d2.subjects())?;
    for t in [d1, d2] {
        if t.n_features() < MIN_FEATURES {
            return Err(Error::TooFewFeatures { needed: MIN_FEATURES, found: t.n_features() });
        }
    }
    Ok(())
}

fn split_halves(table: &FeatureTable, rng: &mut ChaCha8Rng) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut cols: Vec<usize> = (0..table.n_features()).collect();
    cols.shuffle(rng);
    let half = cols.len() / 2;
    let (a, b) = cols.split_at(half);
    let first = euclidean_dissimilarity(&table.select_features(a)?)?.into_values();
    let second = euclidean_dissimilarity(&table.select_features(b)?)?.into_values();
    Ok((first, second))
}

fn target_split(d2: &FeatureTable, plan: &ResamplingPlan, i: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    split_halves(d2, &mut plan.rng(i, 1))
}

/// Build the replicate matrices from two complete feature tables.
pub fn resample_matrices(
    d1: &FeatureTable,
    d2: &FeatureTable,
    plan: &ResamplingPlan,
) -> Result<Vec<ReplicateMatrices>> {
    check_tables(d1, d2)?;
    (0..plan.n_bs())
        .into_par_iter()
        .map(|i| {
            let (reference, reference_holdout) = split_halves(d1, &mut plan.rng(i, 0))?;
            let (target, target_holdout) = target_split(d2, plan, i)?;
            Ok(ReplicateMatrices { reference, reference_holdout, target, target_holdout })
        })
        .collect()
}

fn check_residual_ks(cfg: &StatisticConfig) -> Result<()> {
    if let Some(&k) = cfg.residual_ks.iter().find(|&&k| k < 1 || k > cfg.kmax()) {
        return Err(Error::InvalidArgument(format!("residual k {k} outside 1..={}", cfg.kmax())));
    }
    Ok(())
}

/// Statistics of one replicate.
pub fn replicate_statistics(m: &ReplicateMatrices, cfg: &StatisticConfig) -> Result<ReplicateStatistics> {
    let d = m.reference.nrows();
    for other in [&m.reference_holdout, &m.target, &m.target_holdout] {
        if other.shape() != (d, d) {
            return Err(Error::ShapeMismatch("replicate matrices differ in size".into()));
        }
    }
    let null = procrustes_align(&m.reference_holdout, &m.reference)?.aligned;
    let observed = procrustes_align(&m.target, &m.reference)?.aligned;
    let (scan, _) = comparison::learn_scan(&m.reference, &cfg.comparison)?;
    let null_pred = comparison::predict_from_scan(&scan, &null)?;
    let obs_pred = comparison::predict_from_scan(&scan, &observed)?;
    let sq = |y: &DMatrix<f64>, pred: &comparison::Prediction, k: usize| {
        let a = scan.structure(k);
        let r = y - a * &pred.relationships[k - 1] * a.transpose();
        r.component_mul(&r)
    };
    let null_sq_residuals = cfg.residual_ks.iter().map(|&k| sq(&null, &null_pred, k)).collect();
    let observed_sq_residuals = cfg.residual_ks.iter().map(|&k| sq(&observed, &obs_pred, k)).collect();
    let k_hat = cv_k_hat(&m.target, &m.target_holdout, cfg.kmax())?;
    Ok(ReplicateStatistics {
        null_persistence: null_pred.persistence,
        observed_persistence: obs_pred.persistence,
        null_sq_residuals,
        observed_sq_residuals,
        k_hat,
    })
}

/// Resample both tables and compute every replicate's statistics.
pub fn feature_split_resample(
    d1: &FeatureTable,
    d2: &FeatureTable,
    plan: &ResamplingPlan,
    cfg: &StatisticConfig,
) -> Result<Vec<ReplicateStatistics>> {
    check_residual_ks(cfg)?;
    let mats = resample_matrices(d1, d2, plan)?;
    statistics_from_matrices(&mats, cfg)
}

/// Statistics for externally supplied replicate matrices.
pub fn statistics_from_matrices(
    mats: &[ReplicateMatrices],
    cfg: &StatisticConfig,
) -> Result<Vec<ReplicateStatistics>> {
    check_residual_ks(cfg)?;
    mats.par_iter().map(|m| replicate_statistics(m, cfg)).collect()
}

/// Cross-validated complexity estimates of the target table and `p(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityEstimate {
    pub k_hats: Vec<usize>,
    pub p_of_k: Vec<f64>,
}

/// Learn on one half of the target's features, predict the other half. The
/// splits are the same ones [`resample_matrices`] uses for the target.
pub fn cross_validate_complexity(
    d2: &FeatureTable,
    plan: &ResamplingPlan,
    kmax: usize,
) -> Result<ComplexityEstimate> {
    if d2.n_features() < MIN_FEATURES {
        return Err(Error::TooFewFeatures { needed: MIN_FEATURES, found: d2.n_features() });
    }
    if kmax < 1 || kmax > d2.n_subjects() {
        return Err(Error::InvalidArgument(format!("kmax must be in 1..={}, got {kmax}", d2.n_subjects())));
    }
    let k_hats = (0..plan.n_bs())
        .into_par_iter()
        .map(|i| {
            let (fold1, fold2) = target_split(d2, plan, i)?;
            cv_k_hat(&fold1, &fold2, kmax)
        })
        .collect::<Result<Vec<_>>>()?;
    let p = p_of_k(&k_hats, kmax);
    Ok(ComplexityEstimate { k_hats, p_of_k: p })
}

/// Both readings of the combined probability.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedProbability {
    /// `1 - (1 - p(k)) p_cell`, evaluated literally.
    pub formula: DMatrix<f64>,
}

/// `1 - (1 - p(k)) * p_cell` for every cell; column `k-1` uses `p_of_k[k-1]`.
pub fn combined_probability(p_of_k: &[f64], p_cells: &DMatrix<f64>) -> Result<CombinedProbability> {
    if p_cells.ncols() != p_of_k.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} complexity probabilities for {} columns",
            p_of_k.len(),
            p_cells.ncols()
        )));
    }
    let formula =
        DMatrix::from_fn(p_cells.nrows(), p_cells.ncols(), |i, k| 1.0 - (1.0 - p_of_k[k]) * p_cells[(i, k)]);
    Ok(CombinedProbability { formula })
}

/// A cell is significant at `alpha` when its p-value is at most `alpha` and
/// its complexity is supported with probability at least `1 - alpha`.
pub fn is_significant(p_cell: f64, p_k: f64, alpha: f64) -> bool {
    p_cell <= alpha && p_k >= 1.0 - alpha
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceResult {
    pub n_bs: usize,
    /// `d x kmax` p-values of persistence cells.
    pub p_cells: DMatrix<f64>,
    /// Per requested `k`, the `d x d` p-values of squared residuals.
    pub p_residual_cells: Vec<(usize, DMatrix<f64>)>,
    pub p_of_k: Vec<f64>,
    pub k_hats: Vec<usize>,
    pub combined: DMatrix<f64>,
    /// Observed persistence the nulls were compared against.
    pub observed_persistence: DMatrix<f64>,
    pub replicates: Vec<ReplicateStatistics>,
}

impl SignificanceResult {
    pub fn significant(&self, alpha: f64) -> DMatrix<bool> {
        DMatrix::from_fn(self.p_cells.nrows(), self.p_cells.ncols(), |i, k| {
            is_significant(self.p_cells[(i, k)], self.p_of_k[k], alpha)
        })
    }
}

/// Each cell compares one observed draw (the first replicate's target half)
/// with the `n_bs` null values.
fn cell_pvalues<F, G>(reps: &[ReplicateStatistics], rows: usize, cols: usize, obs: F, null: G) -> DMatrix<f64>
where
    F: Fn(&ReplicateStatistics, usize, usize) -> f64,
    G: Fn(&ReplicateStatistics, usize, usize) -> f64,
{
    let mut nulls = Vec::with_capacity(reps.len());
    DMatrix::from_fn(rows, cols, |r, c| {
        nulls.clear();
        nulls.extend(reps.iter().map(|s| null(s, r, c)));
        empirical_pvalue(obs(&reps[0], r, c), &nulls)
    })
}

/// Reduce replicate statistics to p-values, `p(k)` and combined probabilities.
pub fn summarise(reps: Vec<ReplicateStatistics>, cfg: &StatisticConfig) -> Result<SignificanceResult> {
    let Some(first) = reps.first() else {
        return Err(Error::InvalidArgument("no replicates".into()));
    };
    let (d, kmax) = first.null_persistence.shape();
    let p_cells = cell_pvalues(
        &reps,
        d,
        kmax,
        |s, i, k| s.observed_persistence[(i, k)],
        |s, i, k| s.null_persistence[(i, k)],
    );
    let p_residual_cells = cfg
        .residual_ks
        .iter()
        .enumerate()
        .map(|(idx, &k)| {
            let p = cell_pvalues(
                &reps,
                d,
                d,
                |s, i, j| s.observed_sq_residuals[idx][(i, j)],
                |s, i, j| s.null_sq_residuals[idx][(i, j)],
            );
            (k, p)
        })
        .collect();
    let k_hats: Vec<usize> = reps.iter().map(|s| s.k_hat).collect();
    let p_k = p_of_k(&k_hats, kmax);
    let combined = combined_probability(&p_k, &p_cells)?.formula;
    Ok(SignificanceResult {
        n_bs: reps.len(),
        p_cells,
        p_residual_cells,
        p_of_k: p_k,
        k_hats,
        combined,
        observed_persistence: first.observed_persistence.clone(),
        replicates: reps,
    })
}

/// Full significance run from two complete feature tables.
pub fn significance(
    d1: &FeatureTable,
    d2: &FeatureTable,
    plan: &ResamplingPlan,
    cfg: &StatisticConfig,
) -> Result<SignificanceResult> {
    summarise(feature_split_resample(d1, d2, plan, cfg)?, cfg)
}

/// Significance from externally resampled matrices.
pub fn significance_from_matrices(
    mats: &[ReplicateMatrices],
    cfg: &StatisticConfig,
) -> Result<SignificanceResult> {
    summarise(statistics_from_matrices(mats, cfg)?, cfg)
}
